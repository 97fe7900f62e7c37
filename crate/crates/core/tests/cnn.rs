//! Convolutional classifier mechanics on small configurations.

mod common;

use std::time::Instant;

use proptest::prelude::*;
use rand::Rng;
use tcfa_core::cnn::layers::dropout_mask;
use tcfa_core::cnn::{
    cnn_predict_proba, cnn_train, elu, lr_at_step, CnnConfig, CnnModel, CnnTrainer, ConvBlock, EarlyStopping, ImageSet,
    StopReason,
};
use tcfa_core::rng::seeded;
use tcfa_core::synth::{generate_phantom, PhantomConfig};
use tcfa_core::{Class, GreyImage};

fn random_batch(n: usize, side: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    (0..n * side * side).map(|_| rng.random::<f64>()).collect()
}

fn toy_config() -> CnnConfig {
    CnnConfig {
        side: 8,
        blocks: vec![ConvBlock::new(1, 2), ConvBlock::new(1, 3)],
        dense: 4,
        dropout: 0.0,
        ..CnnConfig::default()
    }
}

#[test]
fn shape_law_for_every_block_count() {
    for blocks in 1..=6usize {
        let plan: Vec<ConvBlock> = (0..blocks).map(|b| ConvBlock::new(1 + b % 2, 2 + b)).collect();
        let cfg = CnnConfig { side: 64, blocks: plan, dense: 0, ..CnnConfig::default() };
        let model = CnnModel::init(&cfg, 1).unwrap();
        let expected_side = 64 >> blocks;
        assert_eq!(model.feature_map_shape(), (1 + blocks, expected_side));
        assert_eq!(cfg.flat_len(), (1 + blocks) * expected_side * expected_side);

        // convolutions keep the side, each pool halves it
        let x = random_batch(2, 64, blocks as u64);
        let mut layer = 0;
        let mut side = 64;
        for (b, block) in cfg.blocks.iter().enumerate() {
            for _ in 0..block.convs {
                let act = model.normalized_activations(&x, 2, layer).unwrap();
                assert_eq!(act.len(), 2 * (2 + b) * side * side);
                layer += 1;
            }
            side /= 2;
        }
        assert_eq!(side, expected_side);
        assert_eq!(model.predict_batch_scaled(&x, 2).unwrap().len(), 2);
    }
    let too_deep = CnnConfig { side: 64, blocks: vec![ConvBlock::new(1, 2); 7], ..CnnConfig::default() };
    assert!(CnnModel::init(&too_deep, 0).is_err());
    assert!(CnnModel::init(&CnnConfig { side: 60, ..CnnConfig::default() }, 0).is_err());
}

#[test]
fn batch_norm_standardizes_each_channel() {
    let cfg = CnnConfig { side: 16, blocks: vec![ConvBlock::new(2, 4), ConvBlock::new(1, 6)], ..CnnConfig::default() };
    let model = CnnModel::init(&cfg, 3).unwrap();
    let batch = 8;
    let x = random_batch(batch, 16, 4);
    for (layer, (channels, side)) in [(4usize, 16usize), (4, 16), (6, 8)].into_iter().enumerate() {
        let act = model.normalized_activations(&x, batch, layer).unwrap();
        let hw = side * side;
        for c in 0..channels {
            let vals: Vec<f64> = (0..batch).flat_map(|b| act[(b * channels + c) * hw..][..hw].iter().copied()).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5, "layer {layer} channel {c}: mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "layer {layer} channel {c}: variance {var}");
        }
    }
}

#[test]
fn dropout_preserves_expectation() {
    let mut rng = seeded(8);
    let layer: Vec<f64> = (0..64).map(|_| rng.random_range(0.1..2.0)).collect();
    let passes = 10_000;
    let mut mean = vec![0.0; layer.len()];
    for _ in 0..passes {
        for ((m, k), v) in mean.iter_mut().zip(dropout_mask(layer.len(), 0.5, &mut rng)).zip(&layer) {
            *m += k * v / passes as f64;
        }
    }
    let total: f64 = layer.iter().sum();
    let dropped: f64 = mean.iter().sum();
    assert!((dropped - total).abs() / total < 0.03, "{dropped} vs {total}");
    for (m, v) in mean.iter().zip(&layer) {
        assert!((m - v).abs() / v < 0.06, "unit mean {m} vs {v}");
    }
}

/// Relative error between backprop and central differences over every
/// trainable parameter of the toy network.
#[test]
fn conv_gradients_match_central_differences() {
    let mut model = CnnModel::init(&toy_config(), 5).unwrap();
    let x = random_batch(3, 8, 6);
    let classes = [Class::Tcfa, Class::Normal, Class::Tcfa];
    let mut rng = seeded(0);
    let (_, grads) = model.loss_and_gradients(&x, &classes, 0.0, &mut rng).unwrap();
    let groups = grads.0.len();
    let mut worst: f64 = 0.0;
    for g in 0..groups {
        for k in 0..grads.0[g].len() {
            let orig = model.params_mut()[g][k];
            let h = 1e-5 * orig.abs().max(1e-1);
            model.params_mut()[g][k] = orig + h;
            let up = model.training_loss(&x, &classes, 0.0, &mut rng).unwrap();
            model.params_mut()[g][k] = orig - h;
            let down = model.training_loss(&x, &classes, 0.0, &mut rng).unwrap();
            model.params_mut()[g][k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.0[g][k];
            let scale = analytic.abs().max(numeric.abs()).max(1e-7);
            let err = (analytic - numeric).abs() / scale;
            assert!(err < 1e-3, "group {g} index {k}: analytic {analytic}, numeric {numeric}");
            worst = worst.max(err);
        }
    }
    // the first six groups are conv kernels, BN scales and shifts of both convolutions
    assert_eq!(groups, 6 + 4);
    assert!(worst < 1e-3);
}

fn phantom_images(n: usize, seed: u64) -> Vec<(GreyImage, Class)> {
    let cfg = PhantomConfig { seed, ..PhantomConfig::default() };
    let tcfa: Vec<usize> = (0..cfg.size).filter(|&i| cfg.class_of(i).is_positive()).take(n / 2).collect();
    let normal: Vec<usize> = (0..cfg.size).filter(|&i| !cfg.class_of(i).is_positive()).take(n - n / 2).collect();
    tcfa.into_iter()
        .chain(normal)
        .map(|i| {
            let s = generate_phantom(&cfg, i).unwrap();
            (s.image, s.class)
        })
        .collect()
}

#[test]
fn overfits_thirty_two_frames() {
    let images = phantom_images(32, 5);
    let set = ImageSet::from_images(images.iter().map(|(im, c)| (im, *c))).unwrap();
    let cfg = CnnConfig { seed: 1, ..CnnConfig::default() };
    let start = Instant::now();
    let mut trainer = CnnTrainer::new(&set, &cfg).unwrap();
    let mut reached = None;
    for epoch in 1..=200 {
        trainer.run_epoch().unwrap();
        if trainer.model().evaluate_set(&set).unwrap().1 == 1.0 {
            reached = Some(epoch);
            break;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(reached.is_some(), "no perfect fit in 200 epochs ({secs:.1}s)");
    assert!(secs < 300.0, "{secs:.1}s");
}

#[test]
fn batched_inference_matches_single_frames() {
    let images = phantom_images(6, 9);
    let set = ImageSet::from_images(images.iter().map(|(im, c)| (im, *c))).unwrap();
    let cfg = CnnConfig { epochs: 2, seed: 2, ..CnnConfig::default() };
    let mut trainer = CnnTrainer::new(&set, &cfg).unwrap();
    trainer.run_epoch().unwrap();
    let model = trainer.into_model();
    let batched = model.score_set(&set).unwrap();
    for ((img, _), b) in images.iter().zip(&batched) {
        let single = cnn_predict_proba(&model, img).unwrap();
        assert!((single - b).abs() < 1e-6);
        assert_eq!(single, cnn_predict_proba(&model, img).unwrap());
        let pair = model.predict_pair(img).unwrap();
        assert!((pair[0] + pair[1] - 1.0).abs() < 1e-6);
    }
    assert!(cnn_predict_proba(&model, &GreyImage::filled(32, 0).unwrap()).is_err());
}

#[test]
fn patience_stops_on_a_plateau() {
    let mut stop = EarlyStopping::new(3);
    let series = [0.5, 0.5, 0.5, 0.5, 0.4];
    let halted = series.iter().enumerate().map(|(i, &l)| stop.observe(i + 1, l).1).position(|h| h);
    assert_eq!(halted, Some(3));
    assert_eq!(stop.best_epoch(), 1);

    let mut stop = EarlyStopping::new(3);
    let series = [0.9, 0.7, 0.71, 0.69, 0.7, 0.7, 0.7];
    let halted = series.iter().enumerate().map(|(i, &l)| stop.observe(i + 1, l).1).position(|h| h);
    assert_eq!(halted.map(|i| i + 1), Some(7));
    assert_eq!(stop.best_epoch(), 4);
}

#[test]
fn training_log_and_restore() {
    let images = phantom_images(24, 11);
    let (train, val) = images.split_at(18);
    let train = ImageSet::from_images(train.iter().map(|(im, c)| (im, *c))).unwrap();
    let val = ImageSet::from_images(val.iter().map(|(im, c)| (im, *c))).unwrap();
    let cfg = CnnConfig {
        side: 64,
        blocks: vec![ConvBlock::new(1, 4), ConvBlock::new(1, 8), ConvBlock::new(1, 8)],
        dense: 8,
        epochs: 12,
        seed: 4,
        ..CnnConfig::default()
    };
    let (model, log) = cnn_train(&train, &val, &cfg).unwrap();
    let (again, log2) = cnn_train(&train, &val, &cfg).unwrap();
    assert_eq!(log, log2);
    assert_eq!(model, again);
    assert!(log.epochs.iter().enumerate().all(|(i, e)| e.epoch == i + 1));
    let best = log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(log.epochs[log.best_epoch - 1].val_loss, best);
    assert!((model.evaluate_set(&val).unwrap().0 - best).abs() < 1e-12);
    match log.stop {
        StopReason::Patience => assert_eq!(log.epochs.len(), log.best_epoch + 3),
        StopReason::Budget => assert_eq!(log.epochs.len(), 12),
    }
    for e in &log.epochs {
        assert!(e.lr == lr_at_step(cfg.learning_rate, 0) || e.lr < cfg.learning_rate);
    }
}

#[test]
fn elu_is_monotone_and_continuous_on_a_grid() {
    let grid: Vec<f64> = (0..=10_000).map(|i| -10.0 + 20.0 * i as f64 / 10_000.0).collect();
    for gamma in [0.5, 1.0, 2.0] {
        let ys: Vec<f64> = grid.iter().map(|&x| elu(x, gamma)).collect();
        assert!(ys.windows(2).all(|w| w[1] > w[0]));
        let step = 20.0 / 10_000.0;
        assert!(ys.windows(2).all(|w| w[1] - w[0] <= step * gamma.max(1.0) + 1e-12));
        assert!(elu(-1e-12, gamma).abs() < 1e-11 && elu(0.0, gamma) == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn schedule_is_a_staircase(lr0 in 1e-6f64..1.0, step in 0u64..100_000) {
        let k = (step / 1000) as i32;
        prop_assert!((lr_at_step(lr0, step) - lr0 * 0.95f64.powi(k)).abs() <= 1e-15 * lr0);
        prop_assert_eq!(lr_at_step(lr0, step), lr_at_step(lr0, k as u64 * 1000));
    }
}
