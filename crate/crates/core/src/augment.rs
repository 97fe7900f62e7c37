//! Rotation augmentation of the minority (TCFA) class.
//!
//! Rotations are counter-clockwise as displayed (rows grow downwards) about
//! the pixel-grid centre `((side-1)/2, (side-1)/2)`. Right angles are exact
//! pixel permutations. Other angles resample intensities bilinearly and
//! labels by nearest neighbour; anything sampled outside the frame is 0 /
//! adventitia.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::image::{class_counts, Class, GreyImage, LabeledSample, MaskImage, Tissue};
use crate::math;
use crate::rng;

/// Nonzero multiples of 30 degrees below a full turn.
pub const ROTATION_ANGLES: [u32; 11] = [30, 60, 90, 120, 150, 180, 210, 240, 270, 300, 330];

/// Cap on rotated copies per TCFA frame (one per available angle).
pub const MAX_COPIES: usize = ROTATION_ANGLES.len();

fn check_angle(degrees: u32) -> Result<()> {
    if degrees == 0 || degrees >= 360 || !degrees.is_multiple_of(30) {
        return Err(Error::InvalidAngle(degrees));
    }
    Ok(())
}

/// Source pixel for output `(row, col)` under a right-angle rotation.
fn quarter_source(quarters: u32, row: usize, col: usize, w: usize, h: usize) -> (usize, usize) {
    match quarters {
        1 => (col, w - 1 - row),
        2 => (h - 1 - row, w - 1 - col),
        3 => (w - 1 - col, row),
        _ => (row, col),
    }
}

/// Inverse mapping: fractional source `(row, col)` for output `(row, col)`.
fn inverse_rotate(degrees: u32, side: usize) -> impl Fn(usize, usize) -> (f64, f64) {
    let centre = (side as f64 - 1.0) / 2.0;
    let (sin, cos) = math::sin_cos(f64::from(degrees).to_radians());
    move |row, col| {
        let x = col as f64 - centre;
        let y = centre - row as f64;
        let sx = x * cos + y * sin;
        let sy = -x * sin + y * cos;
        (centre - sy, centre + sx)
    }
}

pub fn rotate_image(image: &GreyImage, degrees: u32) -> Result<GreyImage> {
    check_angle(degrees)?;
    let n = image.side();
    let mut out = Vec::with_capacity(n * n);
    if degrees.is_multiple_of(90) {
        for row in 0..n {
            for col in 0..n {
                let (r, c) = quarter_source(degrees / 90, row, col, n, n);
                out.push(image.get(r, c));
            }
        }
        return GreyImage::new(n, n, out);
    }

    let source = inverse_rotate(degrees, n);
    let sample = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= n as isize || c >= n as isize {
            0.0
        } else {
            f64::from(image.get(r as usize, c as usize))
        }
    };
    for row in 0..n {
        for col in 0..n {
            let (sr, sc) = source(row, col);
            let (r0, c0) = (math::floor(sr), math::floor(sc));
            let (fr, fc) = (sr - r0, sc - c0);
            let (r0, c0) = (r0 as isize, c0 as isize);
            let v = sample(r0, c0) * (1.0 - fr) * (1.0 - fc)
                + sample(r0, c0 + 1) * (1.0 - fr) * fc
                + sample(r0 + 1, c0) * fr * (1.0 - fc)
                + sample(r0 + 1, c0 + 1) * fr * fc;
            out.push(math::round(v).clamp(0.0, 255.0) as u8);
        }
    }
    GreyImage::new(n, n, out)
}

/// Same geometry as [`rotate_image`], nearest-neighbour so labels stay categorical.
pub fn rotate_mask(mask: &MaskImage, degrees: u32) -> Result<MaskImage> {
    check_angle(degrees)?;
    let (w, h) = (mask.width(), mask.height());
    if w != h {
        return Err(Error::DimensionMismatch(format!("rotation needs a square mask, got {w}x{h}")));
    }
    let mut out = Vec::with_capacity(w * h);
    if degrees.is_multiple_of(90) {
        for row in 0..h {
            for col in 0..w {
                let (r, c) = quarter_source(degrees / 90, row, col, w, h);
                out.push(mask.get(r, c));
            }
        }
        return MaskImage::new(w, h, out);
    }
    let source = inverse_rotate(degrees, w);
    for row in 0..h {
        for col in 0..w {
            let (sr, sc) = source(row, col);
            let (r, c) = (math::round(sr), math::round(sc));
            let inside = r >= 0.0 && c >= 0.0 && r < h as f64 && c < w as f64;
            out.push(if inside { mask.get(r as usize, c as usize) } else { Tissue::Adventitia });
        }
    }
    MaskImage::new(w, h, out)
}

/// Rotated copies per TCFA frame: `min(11, round(normal / tcfa) - 1)`, floored at 0.
pub fn copies_per_minority(normal: usize, tcfa: usize) -> usize {
    let ratio = math::round(normal as f64 / tcfa as f64) as usize;
    ratio.saturating_sub(1).min(MAX_COPIES)
}

/// Balances the classes by adding rotated copies of every TCFA frame.
///
/// Each TCFA frame is followed by its copies, rotated at distinct random
/// angles drawn from `seed`; ids get a `_rot<deg>` suffix. Normal frames are
/// passed through untouched.
pub fn augment_minority(samples: &[LabeledSample], seed: u64) -> Result<Vec<LabeledSample>> {
    let (normal, tcfa) = class_counts(samples.iter().map(|s| &s.class));
    if normal == 0 || tcfa == 0 {
        return Err(Error::SingleClass(format!("augmentation got {normal} normal / {tcfa} TCFA frames")));
    }
    let k = copies_per_minority(normal, tcfa);
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(samples.len() + k * tcfa);
    for s in samples {
        out.push(s.clone());
        if s.class != Class::Tcfa || k == 0 {
            continue;
        }
        let mut angles = ROTATION_ANGLES;
        let (chosen, _) = angles.partial_shuffle(&mut rng, k);
        for &deg in chosen.iter() {
            out.push(LabeledSample::new(
                format!("{}_rot{deg}", s.id),
                rotate_image(&s.image, deg)?,
                rotate_mask(&s.mask, deg)?,
                Class::Tcfa,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ramp(n: usize) -> GreyImage {
        GreyImage::new(n, n, (0..n * n).map(|i| (i % 251) as u8).collect()).unwrap()
    }

    #[test]
    fn rejects_invalid_angles() {
        let img = ramp(8);
        for deg in [0, 45, 360, 390, 15] {
            assert_eq!(rotate_image(&img, deg), Err(Error::InvalidAngle(deg)));
        }
    }

    #[test]
    fn half_turn_is_point_reflection() {
        let n = 9;
        let img = ramp(n);
        let rot = rotate_image(&img, 180).unwrap();
        for r in 0..n {
            for c in 0..n {
                assert_eq!(rot.get(n - 1 - r, n - 1 - c), img.get(r, c));
            }
        }
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let img = ramp(10);
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = rotate_image(&cur, 90).unwrap();
        }
        assert_eq!(cur, img);
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let mut img = GreyImage::filled(8, 0).unwrap();
        img.set(0, 7, 200); // top-right corner
        let rot = rotate_image(&img, 90).unwrap();
        assert_eq!(rot.get(0, 0), 200); // moves to top-left
    }

    #[test]
    fn bright_pixel_follows_rotation_matrix() {
        let n = 512;
        let mut img = GreyImage::filled(n, 0).unwrap();
        img.set(356, 256, 255);
        let rot = rotate_image(&img, 30).unwrap();
        let (mut best, mut at) = (0, (0, 0));
        for r in 0..n {
            for c in 0..n {
                if rot.get(r, c) > best {
                    best = rot.get(r, c);
                    at = (r, c);
                }
            }
        }
        // forward rotation of the source point, computed independently
        let centre = 255.5_f64;
        let (x, y) = (256.0 - centre, centre - 356.0);
        let t = core::f64::consts::PI / 6.0;
        let (xr, yr) = (x * libm::cos(t) - y * libm::sin(t), x * libm::sin(t) + y * libm::cos(t));
        let (er, ec) = (centre - yr, centre + xr);
        assert!(best > 0);
        assert!((at.0 as f64 - er).abs() <= 1.0 && (at.1 as f64 - ec).abs() <= 1.0, "{at:?} vs ({er}, {ec})");
    }

    #[test]
    fn copy_rule() {
        assert_eq!(copies_per_minority(1000, 100), 9);
        assert_eq!(copies_per_minority(50, 50), 0);
        assert_eq!(copies_per_minority(10, 100), 0);
        assert_eq!(copies_per_minority(5000, 10), 11);
    }

    fn sample(id: &str, class: Class) -> LabeledSample {
        LabeledSample::new(id, ramp(8), MaskImage::filled(8, 8, Tissue::Plaque).unwrap(), class).unwrap()
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let input = vec![sample("a", Class::Normal), sample("b", Class::Tcfa)];
        assert_eq!(augment_minority(&input, 1).unwrap(), input);
    }

    #[test]
    fn single_class_is_an_error() {
        let input = vec![sample("a", Class::Normal)];
        assert!(matches!(augment_minority(&input, 1), Err(Error::SingleClass(_))));
    }

    #[test]
    fn copies_use_distinct_angles_and_are_deterministic() {
        let mut input: Vec<_> = (0..40).map(|i| sample(&format!("n{i}"), Class::Normal)).collect();
        input.push(sample("t0", Class::Tcfa));
        input.push(sample("t1", Class::Tcfa));
        let out = augment_minority(&input, 9).unwrap();
        assert_eq!(out.len(), 40 + 2 * 12);
        let t0: Vec<_> = out.iter().filter(|s| s.id.starts_with("t0_rot")).map(|s| s.id.clone()).collect();
        assert_eq!(t0.len(), 11);
        let mut dedup = t0.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 11);
        assert_eq!(out, augment_minority(&input, 9).unwrap());
    }
}
