//! Adam training loop with flips, blur/noise and the consistency objective.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augment::{fit_stain_distribution, make_sa, FdaParams, SaConfig, SaMethod, StyleAugmentation};
use crate::error::{Error, Result};
use crate::image::{LabelMask, RasterImage};
use crate::metrics::primary_dice;
use crate::registration::keypoints::Gray;
use crate::rng::Rng;

use super::loss::simcons_loss_with;
use super::model::Segmenter;
use super::TrainingSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConsConfig {
    /// Weight of the consistency term.
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Style augmentation feeding the consistency branch.
    pub sa_method: Option<SaMethod>,
    pub sa: SaConfig,
    /// Probability that the supervised input itself is replaced by a style-augmented copy.
    pub sa_augment_prob: f64,
    pub flips: bool,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub noise_prob: f64,
    pub noise_sigma: f64,
}

impl Default for SimConsConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            epochs: 60,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            seed: 0,
            sa_method: Some(SaMethod::Fda),
            sa: SaConfig { fda: FdaParams { beta: 0.1 }, ..SaConfig::default() },
            sa_augment_prob: 0.5,
            flips: true,
            blur_prob: 0.2,
            blur_sigma: (0.3, 1.0),
            noise_prob: 0.2,
            noise_sigma: 0.01,
        }
    }
}

impl SimConsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        for p in [self.sa_augment_prob, self.blur_prob, self.noise_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if self.blur_sigma.0 <= 0.0 || self.blur_sigma.1 < self.blur_sigma.0 || self.noise_sigma < 0.0 {
            return bad("blur sigma range must be positive and ordered, noise sigma >= 0");
        }
        if self.sa_method.is_none() && (self.lambda > 0.0 || self.sa_augment_prob > 0.0) {
            return bad("lambda > 0 or sa_augment_prob > 0 requires an augmentation method");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub supervised: f64,
    /// Absent when no style augmentation is configured.
    pub consistency: Option<f64>,
    pub val_dice: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation Dice.
    pub model: Segmenter,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    /// Parameters after the last epoch.
    pub final_model: Segmenter,
    pub history: Vec<EpochRecord>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,supervised,consistency,val_dice\n");
    for r in history {
        let cons = r.consistency.map(|c| format!("{c:.6}")).unwrap_or_default();
        writeln!(s, "{},{:.6},{cons},{:.6}", r.epoch, r.supervised, r.val_dice).unwrap();
    }
    s
}

pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    let (w, h) = img.dims();
    let planes: Vec<Vec<f64>> =
        (0..3).map(|c| Gray { width: w, height: h, data: img.channel(c) }.gaussian_blur(sigma).data).collect();
    RasterImage::from_planes(w, h, [&planes[0], &planes[1], &planes[2]]).expect("same dimensions")
}

/// Flips (applied to image and label alike), then blur and noise on the image.
pub fn augment_sample(img: &RasterImage, label: &LabelMask, config: &SimConsConfig, rng: &mut Rng) -> (RasterImage, LabelMask) {
    let (mut x, mut y) = (img.clone(), label.clone());
    if config.flips {
        if rng.bernoulli(0.5) {
            x = x.flip_horizontal();
            y = y.flip_horizontal();
        }
        if rng.bernoulli(0.5) {
            x = x.flip_vertical();
            y = y.flip_vertical();
        }
    }
    if config.blur_prob > 0.0 && rng.bernoulli(config.blur_prob) {
        x = gaussian_blur(&x, rng.range(config.blur_sigma.0, config.blur_sigma.1));
    }
    if config.noise_prob > 0.0 && config.noise_sigma > 0.0 && rng.bernoulli(config.noise_prob) {
        x = x.map_pixels(|p| p.map(|v| v + config.noise_sigma * rng.normal()));
    }
    (x, y)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], c: &SimConsConfig) {
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= c.learning_rate * mh / (vh.sqrt() + c.adam_eps);
        }
    }
}

fn build_sa(config: &SimConsConfig, train_set: &[TrainingSample]) -> Result<Option<Box<dyn StyleAugmentation>>> {
    let Some(method) = config.sa_method else { return Ok(None) };
    let pool: Vec<RasterImage> = train_set.iter().map(|s| s.image.clone()).collect();
    let mut sa_config = config.sa.clone();
    if method == SaMethod::RandStainNa && sa_config.stain.is_none() {
        sa_config.stain = Some(fit_stain_distribution(&pool)?);
    }
    make_sa(method, &sa_config, Some(&pool)).map(Some)
}

pub fn validation_dice(model: &Segmenter, val_set: &[TrainingSample]) -> Result<f64> {
    let pairs: Vec<(RasterImage, LabelMask)> = val_set.iter().map(|s| (s.image.clone(), s.label.clone())).collect();
    primary_dice(&pairs, &|img: &RasterImage| Ok(model.forward(img)))
}

/// Trains from a seeded initialization, keeping the best epoch by validation Dice.
pub fn train(config: &SimConsConfig, train_set: &[TrainingSample], val_set: &[TrainingSample], num_classes: usize) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput("training and validation sets must be non-empty".into()));
    }
    for s in train_set.iter().chain(val_set) {
        if s.image.dims() != s.label.dims() {
            return Err(Error::DimensionMismatch("image and label dimensions differ".into()));
        }
        if s.label.num_classes() != num_classes {
            return Err(Error::DimensionMismatch(format!("label has {} classes, expected {num_classes}", s.label.num_classes())));
        }
    }
    let root = Rng::new(config.seed);
    let mut model = Segmenter::init(num_classes, &mut root.split(0));
    let mut data_rng = root.split(1);
    let sa = build_sa(config, train_set)?;
    let mut adam = Adam::new(model.params().len());

    let mut best: Option<(usize, f64, Segmenter)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 1..=config.epochs {
        let order = data_rng.permutation(train_set.len());
        let (mut sup_sum, mut cons_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; model.params().len()];
            for &i in batch {
                let (mut x, y) = augment_sample(&train_set[i].image, &train_set[i].label, config, &mut data_rng);
                if let Some(sa) = &sa {
                    if config.sa_augment_prob > 0.0 && data_rng.bernoulli(config.sa_augment_prob) {
                        x = sa.apply(&x, &mut data_rng);
                    }
                }
                let x_sa = match &sa {
                    Some(sa) => sa.apply(&x, &mut data_rng),
                    None => x.clone(),
                };
                let l = simcons_loss_with(&model, &x, &y, &x_sa, config.lambda)?;
                if !l.total.is_finite() {
                    return Err(Error::Diverged { epoch, step, loss: l.total });
                }
                sup_sum += l.supervised;
                cons_sum += l.consistency;
                for (g, d) in grad.iter_mut().zip(&l.grad) {
                    *g += d;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(model.params_mut(), &grad, config);
            if let Some(bad) = model.params().iter().find(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, step, loss: *bad });
            }
            step += 1;
        }
        let val = validation_dice(&model, val_set)?;
        let n = train_set.len() as f64;
        history.push(EpochRecord {
            epoch,
            supervised: sup_sum / n,
            consistency: sa.as_ref().map(|_| cons_sum / n),
            val_dice: val,
        });
        if best.as_ref().is_none_or(|(_, b, _)| val > *b) {
            best = Some((epoch, val, model.clone()));
        }
    }
    let (best_epoch, best_val_dice, best_model) = match best {
        Some(b) => b,
        None => (0, validation_dice(&model, val_set)?, model.clone()),
    };
    Ok(TrainOutcome { model: best_model, best_epoch, best_val_dice, final_model: model, history })
}
