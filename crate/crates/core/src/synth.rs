//! Synthetic vessel phantoms with a planted TCFA signature.
//!
//! A phantom is a cross-section with a noisy elliptical lumen inside a noisy
//! elliptical vessel wall (the external elastic membrane), plaque filling the
//! annulus between them and adventitia outside. Intensities are drawn from
//! clipped normal distributions per tissue. TCFA frames get three
//! strength-scaled changes:
//!
//! * plaque pixels in the Cap and Suf1 bands turn dark (0 to 30) with a
//!   planted probability, mimicking a necrotic core under a thin cap;
//! * the lumen shrinks, inflating the plaque burden;
//! * a few Suf1 pixels turn bright (121 to 160).
//!
//! At strength 0 both classes are drawn from identical distributions.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Class, GreyImage, LabeledSample, MaskImage, Region, Tissue};
use crate::math;
use crate::rng::{self, SeededRng};
use crate::segment::precise_roi_segmentation;

/// Clipped normal intensity distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensity {
    pub mean: f64,
    pub sd: f64,
    pub min: u8,
    pub max: u8,
}

impl Intensity {
    pub const fn new(mean: f64, sd: f64, min: u8, max: u8) -> Self {
        Self { mean, sd, min, max }
    }

    fn sample(&self, dist: &Normal<f64>, rng: &mut SeededRng) -> u8 {
        let v = math::round(dist.sample(rng));
        v.clamp(f64::from(self.min), f64::from(self.max)) as u8
    }

    fn distribution(&self) -> Result<Normal<f64>> {
        if self.min > self.max {
            return Err(Error::InvalidArgument(format!("intensity range {}..={} is empty", self.min, self.max)));
        }
        Normal::new(self.mean, self.sd).map_err(|_| Error::InvalidArgument(format!("bad intensity sd {}", self.sd)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub side: usize,
    pub size: usize,
    pub tcfa_fraction: f64,
    /// Lumen mean radius range, pixels.
    pub lumen_radius: (f64, f64),
    /// Vessel-wall mean radius range, pixels.
    pub eem_radius: (f64, f64),
    /// Maximum centre offset from the frame centre, pixels.
    pub center_jitter: f64,
    /// Relative boundary irregularity; radii deviate by at most twice this.
    pub wobble: f64,
    pub lumen: Intensity,
    pub plaque: Intensity,
    pub adventitia: Intensity,
    /// Overall TCFA signature strength; 0 removes every class difference.
    pub signature: f64,
    /// Dark-pixel probability in Cap/Suf1 at strength 1 (Suf1 gets half).
    pub dark_probability: f64,
    /// Relative lumen shrinkage at strength 1.
    pub burden_inflation: f64,
    /// Bright-pixel probability in Suf1 at strength 1.
    pub bright_probability: f64,
    /// Per-frame signature multiplier is uniform in `1 +- spread`.
    pub spread: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            side: 64,
            size: 1100,
            tcfa_fraction: 1.0 / 11.0,
            lumen_radius: (8.0, 10.0),
            eem_radius: (20.0, 23.0),
            center_jitter: 2.0,
            wobble: 0.06,
            lumen: Intensity::new(55.0, 12.0, 31, 255),
            plaque: Intensity::new(100.0, 35.0, 0, 255),
            adventitia: Intensity::new(175.0, 25.0, 0, 255),
            signature: 1.0,
            dark_probability: 0.06,
            burden_inflation: 0.2,
            bright_probability: 0.04,
            spread: 0.9,
            seed: 42,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.tcfa_fraction > 0.0 && self.tcfa_fraction < 1.0) {
            return bad(format!("TCFA fraction {} must lie in (0, 1)", self.tcfa_fraction));
        }
        if self.side < crate::image::MIN_SIDE {
            return bad(format!("side {} is below {}", self.side, crate::image::MIN_SIDE));
        }
        let (l0, l1) = self.lumen_radius;
        let (e0, e1) = self.eem_radius;
        if !(0.0 < l0 && l0 <= l1 && e0 <= e1) {
            return bad(format!("radius ranges {:?} / {:?} are not ordered", self.lumen_radius, self.eem_radius));
        }
        if !(0.0..0.25).contains(&self.wobble) || self.center_jitter < 0.0 {
            return bad(format!("wobble {} or jitter {} out of range", self.wobble, self.center_jitter));
        }
        let stretch = 1.0 + 2.0 * self.wobble;
        let shrink = 1.0 - 2.0 * self.wobble;
        if l1 * stretch + 1.0 >= e0 * shrink {
            return bad(format!("lumen radius {l1} does not fit inside vessel radius {e0}"));
        }
        if e1 * stretch + self.center_jitter >= self.side as f64 / 2.0 - 1.0 {
            return bad(format!("vessel radius {e1} does not fit in a {}-pixel frame", self.side));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.signature < 0.0
            || !unit(self.dark_probability * self.signature * (1.0 + self.spread))
            || !unit(self.bright_probability * self.signature * (1.0 + self.spread))
            || !(0.0..1.0).contains(&(self.burden_inflation * self.signature * (1.0 + self.spread)))
            || !(0.0..1.0).contains(&self.spread)
        {
            return bad("signature parameters out of range".into());
        }
        self.lumen.distribution()?;
        self.plaque.distribution()?;
        self.adventitia.distribution()?;
        Ok(())
    }

    /// Number of TCFA frames in a corpus: `round(fraction * size)`.
    pub fn tcfa_count(&self) -> usize {
        math::round(self.tcfa_fraction * self.size as f64) as usize
    }

    /// Labels are interleaved evenly: index `i` is TCFA when
    /// `floor((i+1) * n_t / size) > floor(i * n_t / size)`.
    pub fn class_of(&self, index: usize) -> Class {
        let n_t = self.tcfa_count();
        let size = self.size.max(1);
        if (index + 1) * n_t / size > index * n_t / size {
            Class::Tcfa
        } else {
            Class::Normal
        }
    }
}

/// Boundary radius as a function of angle: an ellipse plus two low harmonics.
struct Contour {
    radius: f64,
    terms: [(f64, f64, f64); 3],
}

impl Contour {
    fn random(radius: f64, wobble: f64, rng: &mut SeededRng) -> Self {
        let mut term = |k: f64, amp: f64| {
            let a = rng.random_range(0.0..=amp);
            let phase = rng.random_range(0.0..core::f64::consts::TAU);
            (k, a, phase)
        };
        let terms = [term(2.0, wobble), term(3.0, wobble / 2.0), term(4.0, wobble / 2.0)];
        Self { radius, terms }
    }

    fn at(&self, theta: f64) -> f64 {
        let wiggle: f64 = self.terms.iter().map(|&(k, a, p)| a * math::sin_cos(k * theta + p).1).sum();
        self.radius * (1.0 + wiggle)
    }
}

fn draw(rng: &mut SeededRng, range: (f64, f64)) -> f64 {
    if range.0 < range.1 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// The phantom at `index`, deterministic in `(cfg.seed, index)`.
pub fn generate_phantom(cfg: &PhantomConfig, index: usize) -> Result<LabeledSample> {
    cfg.validate()?;
    let class = cfg.class_of(index);
    let mut rng = rng::seeded(rng::derive_indexed(cfg.seed, index as u64));

    // every frame consumes the same draws; only their effect depends on the class
    let multiplier = rng.random_range(1.0 - cfg.spread..=1.0 + cfg.spread);
    let strength = if class.is_positive() { cfg.signature * multiplier } else { 0.0 };

    let half = (cfg.side as f64 - 1.0) / 2.0;
    let cy = half + rng.random_range(-cfg.center_jitter..=cfg.center_jitter);
    let cx = half + rng.random_range(-cfg.center_jitter..=cfg.center_jitter);
    let lumen_r = draw(&mut rng, cfg.lumen_radius) * (1.0 - cfg.burden_inflation * strength);
    let eem_r = draw(&mut rng, cfg.eem_radius);
    let lumen = Contour::random(lumen_r, cfg.wobble, &mut rng);
    let eem = Contour::random(eem_r, cfg.wobble, &mut rng);

    let n = cfg.side;
    let mut labels = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let (dy, dx) = (row as f64 - cy, col as f64 - cx);
            let (r, theta) = (math::hypot(dx, dy), math::atan2(dy, dx));
            labels.push(if r <= lumen.at(theta) {
                Tissue::Lumen
            } else if r <= eem.at(theta) {
                Tissue::Plaque
            } else {
                Tissue::Adventitia
            });
        }
    }
    let mask = MaskImage::new(n, n, labels)?;
    let roi = precise_roi_segmentation(&mask);

    let dists = [cfg.lumen.distribution()?, cfg.plaque.distribution()?, cfg.adventitia.distribution()?];
    let p_dark = cfg.dark_probability * strength;
    let p_bright = cfg.bright_probability * strength;
    let mut pixels = Vec::with_capacity(n * n);
    for &region in roi.regions() {
        let base = match region {
            Region::Lumen => cfg.lumen.sample(&dists[0], &mut rng),
            Region::Adventitia => cfg.adventitia.sample(&dists[2], &mut rng),
            _ => cfg.plaque.sample(&dists[1], &mut rng),
        };
        let u = rng.random::<f64>();
        let (dark_value, bright) = (rng.random_range(0u8..=30), rng.random_range(121u8..=160));
        let value = match region {
            Region::Cap if u < p_dark => dark_value,
            Region::Suf1 if u < p_dark / 2.0 => dark_value,
            Region::Suf1 if u < p_dark / 2.0 + p_bright => bright,
            _ => base,
        };
        pixels.push(value);
    }
    let image = GreyImage::new(n, n, pixels)?;
    LabeledSample::new(format!("p{index:05}"), image, mask, class)
}

/// One manifest row: enough to regenerate the sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub class: Class,
    pub seed: u64,
    pub index: usize,
}

/// The whole corpus in index order plus its manifest.
pub fn generate_corpus(cfg: &PhantomConfig) -> Result<(Vec<LabeledSample>, Vec<ManifestEntry>)> {
    cfg.validate()?;
    if cfg.size < 10 {
        return Err(Error::InvalidArgument(format!("corpus size {} is below 10", cfg.size)));
    }
    let n_t = cfg.tcfa_count();
    if n_t == 0 || n_t >= cfg.size {
        return Err(Error::InvalidArgument(format!("{n_t} TCFA frames out of {} leaves a class empty", cfg.size)));
    }
    let make = |i: usize| generate_phantom(cfg, i);

    #[cfg(feature = "parallel")]
    let samples: Vec<LabeledSample> = {
        use rayon::prelude::*;
        (0..cfg.size).into_par_iter().map(make).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let samples: Vec<LabeledSample> = (0..cfg.size).map(make).collect::<Result<_>>()?;

    let manifest = samples
        .iter()
        .enumerate()
        .map(|(index, s)| ManifestEntry { id: s.id.clone(), class: s.class, seed: cfg.seed, index })
        .collect();
    Ok((samples, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::class_counts;

    #[test]
    fn label_rule_counts() {
        let cfg = PhantomConfig::default();
        assert_eq!(cfg.tcfa_count(), 100);
        let classes: Vec<Class> = (0..cfg.size).map(|i| cfg.class_of(i)).collect();
        assert_eq!(class_counts(&classes), (1000, 100));
        assert_eq!(cfg.class_of(10), Class::Tcfa);
        assert_eq!(cfg.class_of(0), Class::Normal);
    }

    #[test]
    fn deterministic_per_index() {
        let cfg = PhantomConfig::default();
        assert_eq!(generate_phantom(&cfg, 7).unwrap(), generate_phantom(&cfg, 7).unwrap());
        assert_ne!(generate_phantom(&cfg, 7).unwrap().image, generate_phantom(&cfg, 8).unwrap().image);
    }

    #[test]
    fn geometry_has_all_compartments() {
        let cfg = PhantomConfig::default();
        for i in 0..22 {
            let s = generate_phantom(&cfg, i).unwrap();
            for t in [Tissue::Lumen, Tissue::Plaque, Tissue::Adventitia] {
                assert!(s.mask.count(t) > 0, "frame {i} lacks {t:?}");
            }
            assert_eq!(s.mask.get(0, 0), Tissue::Adventitia);
        }
    }

    #[test]
    fn infeasible_geometry_is_rejected() {
        let big = PhantomConfig { eem_radius: (18.0, 40.0), ..PhantomConfig::default() };
        assert!(generate_phantom(&big, 0).is_err());
        let crossed = PhantomConfig { lumen_radius: (15.0, 20.0), ..PhantomConfig::default() };
        assert!(generate_phantom(&crossed, 0).is_err());
        let small = PhantomConfig { size: 5, ..PhantomConfig::default() };
        assert!(generate_corpus(&small).is_err());
    }

    #[test]
    fn small_corpus_manifest() {
        let cfg = PhantomConfig { size: 22, ..PhantomConfig::default() };
        let (samples, manifest) = generate_corpus(&cfg).unwrap();
        assert_eq!(samples.len(), 22);
        assert_eq!(manifest.len(), 22);
        assert_eq!(class_counts(samples.iter().map(|s| &s.class)), (20, 2));
        assert!(manifest.iter().zip(&samples).all(|(m, s)| m.id == s.id && m.class == s.class));
    }
}
