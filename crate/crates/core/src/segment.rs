//! Precise ROI segmentation.
//!
//! Plaque pixels are banded by their geodesic distance from the lumen: the
//! number of 8-connected steps through plaque needed to reach them from the
//! nearest lumen pixel. A plaque pixel touching the lumen (8-neighbourhood)
//! is at distance 1. Bands:
//!
//! | band | distance |
//! |------|----------|
//! | Cap  | 1..=2    |
//! | Suf1 | 3..=10   |
//! | Suf2 | 11..=20  |
//! | Suf3 | > 20, or unreachable through plaque |

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::image::{MaskImage, Region, RoiMask, Tissue};

/// Upper distance (inclusive) of Cap, Suf1 and Suf2.
pub const BAND_LIMITS: [u32; 3] = [2, 10, 20];

const NOT_PLAQUE: u32 = u32::MAX;

/// Geodesic lumen distance for every plaque pixel of a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMap {
    width: usize,
    height: usize,
    dist: Vec<u32>,
    plaque: usize,
}

impl DistanceMap {
    /// Distance sentinel for plaque pixels with no plaque path to the lumen.
    pub const UNREACHABLE: u32 = u32::MAX - 1;

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `None` for pixels that are not plaque.
    pub fn get(&self, row: usize, col: usize) -> Option<u32> {
        match self.dist[row * self.width + col] {
            NOT_PLAQUE => None,
            d => Some(d),
        }
    }

    /// Number of plaque pixels carried by the map.
    pub fn len(&self) -> usize {
        self.plaque
    }

    pub fn is_empty(&self) -> bool {
        self.plaque == 0
    }

    /// `(row, col, distance)` for every plaque pixel in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        let w = self.width;
        self.dist
            .iter()
            .enumerate()
            .filter(|(_, &d)| d != NOT_PLAQUE)
            .map(move |(i, &d)| (i / w, i % w, d))
    }
}

fn neighbours8(row: usize, col: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    const OFFSETS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
    OFFSETS.into_iter().filter_map(move |(dr, dc)| {
        let r = row.checked_add_signed(dr)?;
        let c = col.checked_add_signed(dc)?;
        (r < height && c < width).then_some((r, c))
    })
}

/// Multi-source BFS from the lumen through plaque.
pub fn lumen_distance_map(mask: &MaskImage) -> DistanceMap {
    let (width, height) = (mask.width(), mask.height());
    let labels = mask.labels();
    let mut dist = vec![NOT_PLAQUE; labels.len()];
    let mut plaque = 0;
    for (d, &t) in dist.iter_mut().zip(labels) {
        if t == Tissue::Plaque {
            *d = DistanceMap::UNREACHABLE;
            plaque += 1;
        }
    }

    let mut queue = VecDeque::new();
    for row in 0..height {
        for col in 0..width {
            let i = row * width + col;
            if labels[i] == Tissue::Plaque
                && neighbours8(row, col, width, height).any(|(r, c)| labels[r * width + c] == Tissue::Lumen)
            {
                dist[i] = 1;
                queue.push_back((row, col));
            }
        }
    }

    while let Some((row, col)) = queue.pop_front() {
        let next = dist[row * width + col] + 1;
        for (r, c) in neighbours8(row, col, width, height) {
            let j = r * width + c;
            if dist[j] == DistanceMap::UNREACHABLE {
                dist[j] = next;
                queue.push_back((r, c));
            }
        }
    }

    DistanceMap { width, height, dist, plaque }
}

/// Band for a plaque pixel at geodesic distance `d` (≥ 1).
pub fn band_for_distance(d: u32) -> Region {
    if d <= BAND_LIMITS[0] {
        Region::Cap
    } else if d <= BAND_LIMITS[1] {
        Region::Suf1
    } else if d <= BAND_LIMITS[2] {
        Region::Suf2
    } else {
        Region::Suf3
    }
}

/// Splits the plaque of `mask` into Cap/Suf1/Suf2/Suf3; lumen and adventitia
/// pass through unchanged.
pub fn precise_roi_segmentation(mask: &MaskImage) -> RoiMask {
    let dist = lumen_distance_map(mask);
    let regions = mask
        .labels()
        .iter()
        .zip(&dist.dist)
        .map(|(&t, &d)| match t {
            Tissue::Adventitia => Region::Adventitia,
            Tissue::Lumen => Region::Lumen,
            Tissue::Plaque => band_for_distance(d),
        })
        .collect();
    RoiMask::new(mask.width(), mask.height(), regions).expect("dimensions come from a valid mask")
}
