//! A corpus directory: `<id>_img.pgm`, `<id>_mask.pgm` and `manifest.csv`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tcfa_core::synth::ManifestEntry;
use tcfa_core::{LabeledSample, RoiMask};

use crate::error::{FormatError, FormatResult};
use crate::formats::{read_manifest, write_manifest};
use crate::pgm::{read_grey, read_mask, write_grey, write_mask, write_roi};

pub const MANIFEST: &str = "manifest.csv";

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_img.pgm"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_mask.pgm"))
}

pub fn roi_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_roi.pgm"))
}

/// Writes every frame and mask plus the manifest into `dir`, creating it.
pub fn save_corpus(dir: &Path, samples: &[LabeledSample], manifest: &[ManifestEntry]) -> FormatResult<()> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    samples.par_iter().try_for_each(|s| {
        write_grey(&image_path(dir, &s.id), &s.image)?;
        write_mask(&mask_path(dir, &s.id), &s.mask)
    })?;
    write_manifest(&dir.join(MANIFEST), manifest)
}

/// Loads the frames listed in the manifest, in manifest order.
pub fn load_corpus(dir: &Path) -> FormatResult<Vec<LabeledSample>> {
    let entries = read_manifest(&dir.join(MANIFEST))?;
    entries
        .par_iter()
        .map(|(id, class)| {
            let image = read_grey(&image_path(dir, id))?;
            let mask = read_mask(&mask_path(dir, id))?;
            LabeledSample::new(id.clone(), image, mask, *class).map_err(|e| FormatError::core(&mask_path(dir, id), e))
        })
        .collect()
}

/// Writes one `<id>_roi.pgm` per frame.
pub fn save_rois(dir: &Path, rois: &[(String, RoiMask)]) -> FormatResult<()> {
    fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    rois.par_iter().try_for_each(|(id, roi)| write_roi(&roi_path(dir, id), roi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tcfa_core::synth::{generate_corpus, PhantomConfig};

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (samples, manifest) = generate_corpus(&PhantomConfig { size: 12, ..PhantomConfig::default() }).unwrap();
        save_corpus(dir.path(), &samples, &manifest).unwrap();
        assert_eq!(load_corpus(dir.path()).unwrap(), samples);
        fs::remove_file(mask_path(dir.path(), &samples[3].id)).unwrap();
        assert!(load_corpus(dir.path()).is_err());
    }
}
