//! λ × seed grid: train, then score consistency and primary Dice.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::metrics::{consistency_of_paired, primary_dice_paired, ConsistencyReport};
use crate::rng::Rng;

use super::model::Segmenter;
use super::synth::SyntheticBenchmark;
use super::train::{train, SimConsConfig};

pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 0.1, 0.3, 0.5, 1.0, 5.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub consistency: ConsistencyReport,
    /// Macro Dice against ground truth on the training scanner's eval patches.
    pub primary_dice: f64,
}

pub fn evaluate_model(model: &Segmenter, bench: &SyntheticBenchmark) -> Result<Evaluation> {
    let predictor = |img: &RasterImage| Ok(model.forward(img));
    let consistency = consistency_of_paired(&bench.scanner_ids, &bench.eval, &predictor, false)?;
    let primary_dice = primary_dice_paired(&bench.eval, bench.training_scanner(), &predictor)?;
    Ok(Evaluation { consistency, primary_dice })
}

/// Trains one configuration on the benchmark and evaluates the best checkpoint.
pub fn run_cell(config: &SimConsConfig, bench: &SyntheticBenchmark) -> Result<(Segmenter, Evaluation)> {
    let out = train(config, &bench.train, &bench.val, bench.num_classes)?;
    let eval = evaluate_model(&out.model, bench)?;
    Ok((out.model, eval))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub seed: u64,
    pub consistency_avg: f64,
    pub consistency_min: f64,
    pub primary_dice: f64,
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub seeds: usize,
    pub consistency_avg: MeanStd,
    pub consistency_min: MeanStd,
    pub primary_dice: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<SweepCell>,
}

pub const SWEEP_CSV_HEADER: &str = "lambda,seeds,consistency_avg_mean,consistency_avg_std,consistency_min_mean,consistency_min_std,primary_dice_mean,primary_dice_std";

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_CSV_HEADER}\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.lambda,
                r.seeds,
                r.consistency_avg.mean,
                r.consistency_avg.std,
                r.consistency_min.mean,
                r.consistency_min.std,
                r.primary_dice.mean,
                r.primary_dice.std
            )
            .unwrap();
        }
        s
    }

    pub fn cells_csv(&self) -> String {
        let mut s = String::from("lambda,seed,consistency_avg,consistency_min,primary_dice\n");
        for c in &self.cells {
            writeln!(s, "{},{},{:.6},{:.6},{:.6}", c.lambda, c.seed, c.consistency_avg, c.consistency_min, c.primary_dice).unwrap();
        }
        s
    }

    /// Parses the aggregate CSV written by [`SweepTable::to_csv`]; per-seed cells are not stored there.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(SWEEP_CSV_HEADER) {
            return Err(Error::schema("header", "not a sweep table"));
        }
        let rows = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, line)| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 8 {
                    return Err(Error::schema(format!("row {}", i + 1), format!("{} fields, expected 8", f.len())));
                }
                let num = |j: usize| f[j].trim().parse::<f64>().map_err(|e| Error::schema(format!("row {} field {}", i + 1, j + 1), e.to_string()));
                Ok(SweepRow {
                    lambda: num(0)?,
                    seeds: f[1].trim().parse().map_err(|e: std::num::ParseIntError| Error::schema(format!("row {} seeds", i + 1), e.to_string()))?,
                    consistency_avg: MeanStd { mean: num(2)?, std: num(3)? },
                    consistency_min: MeanStd { mean: num(4)?, std: num(5)? },
                    primary_dice: MeanStd { mean: num(6)?, std: num(7)? },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, cells: Vec::new() })
    }
}

/// Seed used for repetition `r` of a sweep built on `template.seed`.
pub fn repetition_seed(template_seed: u64, r: usize) -> u64 {
    Rng::derive_seed(template_seed, r as u64)
}

/// Runs every (λ, repetition) cell on the current rayon pool. Cells own their
/// seeds, so the table does not depend on scheduling.
pub fn lambda_sweep(template: &SimConsConfig, lambdas: &[f64], repetitions: usize, bench: &SyntheticBenchmark) -> Result<SweepTable> {
    if lambdas.is_empty() || repetitions == 0 {
        return Err(Error::EmptyInput("need at least one lambda and one repetition".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument(format!("lambda {l} must be finite and >= 0")));
    }
    let grid: Vec<(f64, u64)> =
        lambdas.iter().flat_map(|&l| (0..repetitions).map(move |r| (l, repetition_seed(template.seed, r)))).collect();
    let cells = grid
        .par_iter()
        .map(|&(lambda, seed)| {
            let config = SimConsConfig { lambda, seed, ..template.clone() };
            let (_, e) = run_cell(&config, bench)?;
            Ok(SweepCell {
                lambda,
                seed,
                consistency_avg: e.consistency.avg,
                consistency_min: e.consistency.min,
                primary_dice: e.primary_dice,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = cells
        .chunks(repetitions)
        .map(|chunk| {
            let pick = |f: fn(&SweepCell) -> f64| MeanStd::of(&chunk.iter().map(f).collect::<Vec<_>>());
            SweepRow {
                lambda: chunk[0].lambda,
                seeds: chunk.len(),
                consistency_avg: pick(|c| c.consistency_avg),
                consistency_min: pick(|c| c.consistency_min),
                primary_dice: pick(|c| c.primary_dice),
            }
        })
        .collect();
    Ok(SweepTable { rows, cells })
}
