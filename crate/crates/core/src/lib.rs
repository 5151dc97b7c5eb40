//! Scanner-paired histopathology toolkit.
//!
//! The crate covers the whole path from raw scans to a consistency-regularized
//! segmenter:
//!
//! * [`registration`] aligns two scans of one slide (oriented FAST keypoints,
//!   rotated BRIEF descriptors, RANSAC affine fit) and cuts aligned patches.
//! * [`analysis`] computes per-patch color statistics, both unpaired and
//!   relative to a reference scanner.
//! * [`augment`] holds the style augmentations (color jitter, stain
//!   statistic normalization/sampling, Fourier amplitude transfer).
//! * [`metrics`] implements Dice and the inter-scanner consistency protocol.
//! * [`simcons`] trains a tiny convolutional segmenter with a supervised Dice
//!   loss plus a weighted Dice consistency loss against a style-augmented copy.
//!
//! All pixel data is floating point in `[0, 1]`; files are 8-bit PNG or PPM.

pub mod analysis;
pub mod augment;
pub mod error;
pub mod fileio;
pub mod image;
pub mod manifest;
pub mod metrics;
pub mod plot;
pub mod registration;
pub mod rng;
pub mod simcons;

pub use error::{Error, Result};
pub use image::{LabelMask, ProbMap, RasterImage};
pub use manifest::{DatasetManifest, PairedImages, PairedSample, ScannerId};
pub use rng::Rng;
