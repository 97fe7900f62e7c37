//! Core algorithms for thin-cap fibroatheroma (TCFA) classification of
//! intravascular ultrasound frames.
//!
//! The crate is `no_std` (it needs `alloc`). The `std` feature enables
//! runtime CPU feature detection in the GEMM kernels and `std::error::Error`
//! on [`Error`]; `parallel` adds rayon-backed data parallelism that yields
//! results identical to the sequential paths.
//!
//! Pipeline, feature path: [`segment::precise_roi_segmentation`] splits the
//! plaque into Cap/Suf1/Suf2/Suf3 bands, [`features::extract_features`] turns
//! the bands into the 105 pixel-range ratios, [`selection`] ranks them by
//! chi-square, and [`classifiers`] (FNN, KNN, RF) produce TCFA scores that
//! [`eval`] turns into ROC curves and reports. The image path trains the
//! convolutional classifier in [`cnn`] on rotation-augmented images.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod augment;
pub mod classifiers;
pub mod cnn;
pub mod error;
pub mod eval;
pub mod features;
pub mod image;
mod linalg;
mod math;
pub mod rng;
pub mod segment;
pub mod selection;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
pub use image::{Class, GreyImage, LabeledSample, MaskImage, Region, RoiMask, Tissue};
