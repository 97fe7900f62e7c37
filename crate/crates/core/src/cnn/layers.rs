//! Tensor primitives of the convolutional classifier.
//!
//! Activations are stored batch-major as `B x C x H x W`, contiguous and
//! row-major. Every function here is deterministic: reductions run in a
//! fixed order regardless of how the caller schedules work.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::linalg::gemm;
use crate::math;
use crate::rng::SeededRng;

/// Exponential linear unit: `x` for `x >= 0`, `gamma * (e^x - 1)` otherwise.
pub fn elu(x: f64, gamma: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        gamma * (math::exp(x) - 1.0)
    }
}

/// Derivative of [`elu`] expressed through its output `y`.
pub(crate) fn elu_grad_from_output(y: f64, gamma: f64) -> f64 {
    if y >= 0.0 {
        1.0
    } else {
        y + gamma
    }
}

/// Unfolds a `C x H x W` plane into the `(C*9) x (H*W)` patch matrix of a
/// 3x3 same-padded convolution. Out-of-image taps read as zero.
pub(crate) fn im2col(input: &[f64], channels: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *o = if sx < 0 || sx >= w as isize { 0.0 } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the plane.
pub(crate) fn col2im(col: &[f64], channels: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    out[..channels * hw].fill(0.0);
    for c in 0..channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            out[c * hw + sy as usize * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 same-padded convolution without bias. `weights` is `cout x (cin*9)`.
pub fn conv3x3_forward(input: &[f64], batch: usize, cin: usize, cout: usize, h: usize, w: usize, weights: &[f64]) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; batch * cout * hw];
    let mut col = vec![0.0; cin * 9 * hw];
    for b in 0..batch {
        im2col(&input[b * cin * hw..(b + 1) * cin * hw], cin, h, w, &mut col);
        gemm(cout, cin * 9, hw, weights, false, &col, false, 0.0, &mut out[b * cout * hw..(b + 1) * cout * hw]);
    }
    out
}

/// Gradients of [`conv3x3_forward`]: returns `(d_input, d_weights)`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    grad_out: &[f64],
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    need_input_grad: bool,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let k = cin * 9;
    let mut d_w = vec![0.0; cout * k];
    let mut d_in = if need_input_grad { vec![0.0; batch * cin * hw] } else { Vec::new() };
    let mut col = vec![0.0; k * hw];
    let mut d_col = vec![0.0; k * hw];
    for b in 0..batch {
        let g = &grad_out[b * cout * hw..(b + 1) * cout * hw];
        im2col(&input[b * cin * hw..(b + 1) * cin * hw], cin, h, w, &mut col);
        gemm(cout, hw, k, g, false, &col, true, 1.0, &mut d_w);
        if need_input_grad {
            gemm(k, cout, hw, weights, true, g, false, 0.0, &mut d_col);
            col2im(&d_col, cin, h, w, &mut d_in[b * cin * hw..(b + 1) * cin * hw]);
        }
    }
    (d_in, d_w)
}

/// Per-channel batch statistics `(mean, biased variance)` over batch and
/// spatial positions.
pub fn channel_stats(x: &[f64], batch: usize, channels: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * hw) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let mut s = 0.0;
        for b in 0..batch {
            s += x[(b * channels + c) * hw..(b * channels + c + 1) * hw].iter().sum::<f64>();
        }
        let m = s / n;
        let mut v = 0.0;
        for b in 0..batch {
            v += x[(b * channels + c) * hw..(b * channels + c + 1) * hw].iter().map(|&t| (t - m) * (t - m)).sum::<f64>();
        }
        mean[c] = m;
        var[c] = v / n;
    }
    (mean, var)
}

/// Training-mode normalization `x_hat = (x - mean) / sqrt(var + eps)` with
/// batch statistics. Returns `(x_hat, inv_std, mean, var)`.
pub fn batch_norm_normalize(
    x: &[f64],
    batch: usize,
    channels: usize,
    hw: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mean, var) = channel_stats(x, batch, channels, hw);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + eps)).collect();
    let mut xhat = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let base = (b * channels + c) * hw;
            for i in base..base + hw {
                xhat[i] = (x[i] - mean[c]) * inv_std[c];
            }
        }
    }
    (xhat, inv_std, mean, var)
}

/// Backward pass of batch normalization given `dy` and the cached `x_hat`.
/// Returns `(dx, d_scale, d_shift)`.
pub(crate) fn batch_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: &[f64],
    scale: &[f64],
    batch: usize,
    channels: usize,
    hw: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = (batch * hw) as f64;
    let mut d_scale = vec![0.0; channels];
    let mut d_shift = vec![0.0; channels];
    for c in 0..channels {
        for b in 0..batch {
            let base = (b * channels + c) * hw;
            for i in base..base + hw {
                d_shift[c] += dy[i];
                d_scale[c] += dy[i] * xhat[i];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for c in 0..channels {
        // d_xhat = dy * scale, so its sums are scale * (d_shift, d_scale)
        let (sum_d, sum_dx) = (scale[c] * d_shift[c], scale[c] * d_scale[c]);
        let k = inv_std[c] / n;
        for b in 0..batch {
            let base = (b * channels + c) * hw;
            for i in base..base + hw {
                dx[i] = k * (n * dy[i] * scale[c] - sum_d - xhat[i] * sum_dx);
            }
        }
    }
    (dx, d_scale, d_shift)
}

/// 2x2 stride-2 max pooling. Returns the pooled tensor and, per output, the
/// index of the winning input within its `H x W` plane (first maximum in
/// row-major order on ties).
pub fn max_pool2(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * oh * ow];
    let mut arg = vec![0u32; planes * oh * ow];
    for p in 0..planes {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (2 * y) * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = (2 * y + dy) * w + 2 * xx + dx;
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                out[p * oh * ow + y * ow + xx] = plane[best];
                arg[p * oh * ow + y * ow + xx] = best as u32;
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool2_backward(grad: &[f64], arg: &[u32], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let per = (h / 2) * (w / 2);
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        for j in 0..per {
            dx[p * h * w + arg[p * per + j] as usize] += grad[p * per + j];
        }
    }
    dx
}

/// Inverted-dropout multipliers: each unit is kept with probability `1 - p`
/// and scaled by `1 / (1 - p)`, so the expected output equals the input.
pub fn dropout_mask(len: usize, p: f64, rng: &mut SeededRng) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
}
