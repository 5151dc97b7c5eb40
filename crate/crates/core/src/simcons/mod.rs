//! Consistency-regularized segmentation at desk scale.
//!
//! A small convolutional segmenter `F` is trained on
//! `L = Dice(F(x), y) + λ · Dice(F(x), F(SA(x)))`, where `SA` is one of the
//! style augmentations. The synthetic benchmark supplies a single-scanner
//! training set and an eval set paired across several virtual scanners, so
//! the consistency protocol can score the trade-off λ controls.

pub mod loss;
pub mod model;
pub mod sweep;
pub mod synth;
pub mod train;

pub use loss::{consistency_dice_loss, simcons_loss, simcons_loss_with, soft_dice_loss, soft_dice_loss_mask, DiceLoss, SimConsLoss};
pub use model::{param_count, Segmenter};
pub use sweep::{evaluate_model, lambda_sweep, run_cell, Evaluation, MeanStd, SweepCell, SweepRow, SweepTable, DEFAULT_LAMBDAS};
pub use synth::{make_synthetic_benchmark, BenchmarkParams, ScannerSim, SyntheticBenchmark};
pub use train::{history_csv, train, EpochRecord, SimConsConfig, TrainOutcome};

use crate::image::{LabelMask, RasterImage};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub image: RasterImage,
    pub label: LabelMask,
}
