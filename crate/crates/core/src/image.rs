//! Image containers: greyscale frames, three-compartment tissue masks and the
//! six-region masks produced by band segmentation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted side length for a greyscale frame.
pub const MIN_SIDE: usize = 8;

/// Binary class of a frame. `Tcfa` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Normal,
    Tcfa,
}

impl Class {
    /// 0 for normal, 1 for TCFA.
    pub fn bit(self) -> u8 {
        match self {
            Class::Normal => 0,
            Class::Tcfa => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(Class::Normal),
            1 => Ok(Class::Tcfa),
            other => Err(Error::InvalidArgument(format!("class label {other} is not 0 or 1"))),
        }
    }

    pub fn is_positive(self) -> bool {
        self == Class::Tcfa
    }
}

/// Label of the initial three-compartment segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tissue {
    Adventitia,
    Lumen,
    Plaque,
}

/// Label of the precise six-region segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Adventitia,
    Lumen,
    Cap,
    Suf1,
    Suf2,
    Suf3,
}

impl Region {
    /// The four plaque bands in feature order.
    pub const BANDS: [Region; 4] = [Region::Cap, Region::Suf1, Region::Suf2, Region::Suf3];

    pub fn is_plaque(self) -> bool {
        matches!(self, Region::Cap | Region::Suf1 | Region::Suf2 | Region::Suf3)
    }

    /// Position in [`Region::BANDS`], if this is a plaque band.
    pub fn band_index(self) -> Option<usize> {
        match self {
            Region::Cap => Some(0),
            Region::Suf1 => Some(1),
            Region::Suf2 => Some(2),
            Region::Suf3 => Some(3),
            _ => None,
        }
    }
}

fn check_len(what: &str, width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::DimensionMismatch(format!("{what} has a zero dimension ({width}x{height})")));
    }
    if width.checked_mul(height) != Some(len) {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {width}x{height} but holds {len} pixels"
        )));
    }
    Ok(())
}

/// Square 8-bit greyscale frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreyImage {
    side: usize,
    pixels: Vec<u8>,
}

impl GreyImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_len("grey image", width, height, pixels.len())?;
        if width != height {
            return Err(Error::DimensionMismatch(format!("grey image must be square, got {width}x{height}")));
        }
        if width < MIN_SIDE {
            return Err(Error::DimensionMismatch(format!("grey image side {width} is below {MIN_SIDE}")));
        }
        Ok(Self { side: width, pixels })
    }

    pub fn filled(side: usize, value: u8) -> Result<Self> {
        Self::new(side, side, alloc::vec![value; side * side])
    }

    pub fn width(&self) -> usize {
        self.side
    }

    pub fn height(&self) -> usize {
        self.side
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.pixels[row * self.side + col] = value;
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }
}

/// Three-compartment tissue mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    labels: Vec<Tissue>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, labels: Vec<Tissue>) -> Result<Self> {
        check_len("mask", width, height, labels.len())?;
        Ok(Self { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, tissue: Tissue) -> Result<Self> {
        Self::new(width, height, alloc::vec![tissue; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> Tissue {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, tissue: Tissue) {
        self.labels[row * self.width + col] = tissue;
    }

    pub fn labels(&self) -> &[Tissue] {
        &self.labels
    }

    pub fn count(&self, tissue: Tissue) -> usize {
        self.labels.iter().filter(|&&t| t == tissue).count()
    }
}

/// Six-region mask: the plaque of a [`MaskImage`] split into distance bands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    width: usize,
    height: usize,
    regions: Vec<Region>,
}

impl RoiMask {
    pub fn new(width: usize, height: usize, regions: Vec<Region>) -> Result<Self> {
        check_len("roi mask", width, height, regions.len())?;
        Ok(Self { width, height, regions })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> Region {
        self.regions[row * self.width + col]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn count(&self, region: Region) -> usize {
        self.regions.iter().filter(|&&r| r == region).count()
    }
}

/// One labeled frame with its tissue mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSample {
    pub id: String,
    pub image: GreyImage,
    pub mask: MaskImage,
    pub class: Class,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>, image: GreyImage, mask: MaskImage, class: Class) -> Result<Self> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{} but mask is {}x{}",
                image.width(),
                image.height(),
                mask.width(),
                mask.height()
            )));
        }
        Ok(Self { id: id.into(), image, mask, class })
    }
}

/// Counts of (normal, tcfa) in a labeled collection.
pub fn class_counts<'a, I: IntoIterator<Item = &'a Class>>(classes: I) -> (usize, usize) {
    classes.into_iter().fold((0, 0), |(n, t), c| match c {
        Class::Normal => (n + 1, t),
        Class::Tcfa => (n, t + 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grey_image_rejects_bad_shapes() {
        assert!(GreyImage::new(8, 8, alloc::vec![0; 63]).is_err());
        assert!(GreyImage::new(8, 9, alloc::vec![0; 72]).is_err());
        assert!(GreyImage::new(4, 4, alloc::vec![0; 16]).is_err());
        assert!(GreyImage::new(8, 8, alloc::vec![0; 64]).is_ok());
    }

    #[test]
    fn sample_requires_matching_dimensions() {
        let image = GreyImage::filled(8, 0).unwrap();
        let mask = MaskImage::filled(9, 9, Tissue::Plaque).unwrap();
        assert!(matches!(
            LabeledSample::new("a", image, mask, Class::Normal),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn class_bits() {
        assert_eq!(Class::from_bit(1).unwrap(), Class::Tcfa);
        assert_eq!(Class::Normal.bit(), 0);
        assert!(Class::from_bit(2).is_err());
    }
}
