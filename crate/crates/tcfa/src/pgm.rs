//! Binary PGM (P5, maxval 255) frames and the fixed grey codes used for
//! tissue and region masks.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};
use tcfa_core::{GreyImage, MaskImage, Region, RoiMask, Tissue};

use crate::error::{FormatError, FormatResult};

pub const ADVENTITIA_CODE: u8 = 0;
pub const LUMEN_CODE: u8 = 85;
pub const PLAQUE_CODE: u8 = 170;
pub const CAP_CODE: u8 = 120;
pub const SUF1_CODE: u8 = 150;
pub const SUF2_CODE: u8 = 190;
pub const SUF3_CODE: u8 = 230;

pub fn tissue_code(t: Tissue) -> u8 {
    match t {
        Tissue::Adventitia => ADVENTITIA_CODE,
        Tissue::Lumen => LUMEN_CODE,
        Tissue::Plaque => PLAQUE_CODE,
    }
}

pub fn tissue_from_code(code: u8) -> Option<Tissue> {
    match code {
        ADVENTITIA_CODE => Some(Tissue::Adventitia),
        LUMEN_CODE => Some(Tissue::Lumen),
        PLAQUE_CODE => Some(Tissue::Plaque),
        _ => None,
    }
}

pub fn region_code(r: Region) -> u8 {
    match r {
        Region::Adventitia => ADVENTITIA_CODE,
        Region::Lumen => LUMEN_CODE,
        Region::Cap => CAP_CODE,
        Region::Suf1 => SUF1_CODE,
        Region::Suf2 => SUF2_CODE,
        Region::Suf3 => SUF3_CODE,
    }
}

pub fn region_from_code(code: u8) -> Option<Region> {
    match code {
        ADVENTITIA_CODE => Some(Region::Adventitia),
        LUMEN_CODE => Some(Region::Lumen),
        CAP_CODE => Some(Region::Cap),
        SUF1_CODE => Some(Region::Suf1),
        SUF2_CODE => Some(Region::Suf2),
        SUF3_CODE => Some(Region::Suf3),
        _ => None,
    }
}

/// Encodes an 8-bit raster as binary PGM.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(pixels.len() + 20);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(pixels, width as u32, height as u32, ExtendedColorType::L8)
        .expect("writing PGM to memory cannot fail for a consistent raster");
    out
}

/// Decodes binary PGM bytes into `(width, height, pixels)`. Only P5 with
/// maxval 255 is accepted; `path` is used for error messages.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> FormatResult<(usize, usize, Vec<u8>)> {
    if !bytes.starts_with(b"P5") {
        return Err(FormatError::parse(path, "not a binary PGM (missing P5 magic)"));
    }
    let decoder = PnmDecoder::new(Cursor::new(bytes)).map_err(|e| FormatError::parse(path, e.to_string()))?;
    let maxval = match decoder.header().as_graymap() {
        Some(g) => g.maxwhite,
        None => return Err(FormatError::parse(path, "not a greymap")),
    };
    if maxval != 255 {
        return Err(FormatError::parse(path, format!("maxval {maxval}, expected 255")));
    }
    let (w, h) = decoder.dimensions();
    let mut pixels = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut pixels).map_err(|e| FormatError::parse(path, e.to_string()))?;
    Ok((w as usize, h as usize, pixels))
}

fn read_raster(path: &Path) -> FormatResult<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    decode_pgm(&bytes, path)
}

fn write_raster(path: &Path, width: usize, height: usize, pixels: &[u8]) -> FormatResult<()> {
    fs::write(path, encode_pgm(width, height, pixels)).map_err(|e| FormatError::io(path, e))
}

pub fn read_grey(path: &Path) -> FormatResult<GreyImage> {
    let (w, h, pixels) = read_raster(path)?;
    if w != h {
        return Err(FormatError::parse(path, format!("frame must be square, got {w}x{h}")));
    }
    GreyImage::new(w, h, pixels).map_err(|e| FormatError::core(path, e))
}

pub fn write_grey(path: &Path, image: &GreyImage) -> FormatResult<()> {
    write_raster(path, image.width(), image.height(), image.pixels())
}

fn decode_codes<T>(path: &Path, pixels: &[u8], f: impl Fn(u8) -> Option<T>) -> FormatResult<Vec<T>> {
    pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| f(p).ok_or_else(|| FormatError::parse(path, format!("unknown mask code {p} at pixel {i}"))))
        .collect()
}

pub fn read_mask(path: &Path) -> FormatResult<MaskImage> {
    let (w, h, pixels) = read_raster(path)?;
    let labels = decode_codes(path, &pixels, tissue_from_code)?;
    MaskImage::new(w, h, labels).map_err(|e| FormatError::core(path, e))
}

pub fn write_mask(path: &Path, mask: &MaskImage) -> FormatResult<()> {
    let codes: Vec<u8> = mask.labels().iter().map(|&t| tissue_code(t)).collect();
    write_raster(path, mask.width(), mask.height(), &codes)
}

pub fn read_roi(path: &Path) -> FormatResult<RoiMask> {
    let (w, h, pixels) = read_raster(path)?;
    let regions = decode_codes(path, &pixels, region_from_code)?;
    RoiMask::new(w, h, regions).map_err(|e| FormatError::core(path, e))
}

pub fn write_roi(path: &Path, roi: &RoiMask) -> FormatResult<()> {
    let codes: Vec<u8> = roi.regions().iter().map(|&r| region_code(r)).collect();
    write_raster(path, roi.width(), roi.height(), &codes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bytes() {
        let pixels: Vec<u8> = (0..=255).cycle().take(12 * 9).collect();
        let bytes = encode_pgm(12, 9, &pixels);
        assert!(bytes.starts_with(b"P5"));
        assert_eq!(decode_pgm(&bytes, Path::new("x")).unwrap(), (12, 9, pixels));
    }

    #[test]
    fn rejects_other_variants() {
        let p = Path::new("x");
        assert!(decode_pgm(b"P2\n2 2\n255\n0 0 0 0\n", p).is_err());
        assert!(decode_pgm(b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0", p).is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\0\0", p).is_err());
        assert!(decode_pgm(b"P5\n2 2\n15\n\0\0\0\0", p).is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x07\x09";
        assert_eq!(decode_pgm(bytes, Path::new("x")).unwrap(), (2, 1, vec![7, 9]));
    }

    #[test]
    fn code_tables_are_inverse() {
        for t in [Tissue::Adventitia, Tissue::Lumen, Tissue::Plaque] {
            assert_eq!(tissue_from_code(tissue_code(t)), Some(t));
        }
        for r in [Region::Adventitia, Region::Lumen, Region::Cap, Region::Suf1, Region::Suf2, Region::Suf3] {
            assert_eq!(region_from_code(region_code(r)), Some(r));
        }
        assert_eq!(tissue_from_code(120), None);
        assert_eq!(region_from_code(170), None);
    }
}
