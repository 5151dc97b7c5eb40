//! Synthetic H&E-like tissue and virtual scanners.
//!
//! Tissue masks come from thresholded smoothed noise; each class has a base
//! color with per-slide stain variation and fine texture. A virtual scanner
//! is a label-preserving photometric transform: a LAB shift, a contrast
//! factor around mid lightness, and additive Gaussian noise.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::color::{lab_to_rgb, rgb_to_lab};
use crate::error::{Error, Result};
use crate::image::{save_image, save_label_mask, LabelMask, RasterImage};
use crate::manifest::{save_manifest, DatasetManifest, PairedImages, PairedSample, ScannerId};
use crate::registration::keypoints::Gray;
use crate::rng::Rng;

use super::TrainingSample;

pub const NUM_CLASSES: usize = 3;
pub const BACKGROUND: u8 = 0;
pub const STROMA: u8 = 1;
pub const TUMOR: u8 = 2;

/// Base colors in LAB for background, stroma and tumor.
const CLASS_LAB: [[f64; 3]; 3] = [[93.0, 2.0, -2.0], [70.0, 30.0, -8.0], [48.0, 28.0, -28.0]];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScannerSim {
    pub lab_shift: [f64; 3],
    pub contrast: f64,
    pub noise_sigma: f64,
}

impl ScannerSim {
    pub const IDENTITY: ScannerSim = ScannerSim { lab_shift: [0.0; 3], contrast: 1.0, noise_sigma: 0.0 };

    pub fn apply(&self, img: &RasterImage, rng: &mut Rng) -> RasterImage {
        let mut out = if self.lab_shift == [0.0; 3] && self.contrast == 1.0 {
            img.clone()
        } else {
            img.map_pixels(|p| {
                let lab = rgb_to_lab(p);
                lab_to_rgb([
                    50.0 + (lab[0] - 50.0) * self.contrast + self.lab_shift[0],
                    lab[1] * self.contrast + self.lab_shift[1],
                    lab[2] * self.contrast + self.lab_shift[2],
                ])
            })
        };
        if self.noise_sigma > 0.0 {
            out = out.map_pixels(|p| p.map(|v| v + self.noise_sigma * rng.normal()));
        }
        out
    }

    /// Default simulators: index 0 is the training scanner, the rest are
    /// fixed presets followed by seeded random draws.
    pub fn defaults(count: usize, rng: &mut Rng) -> Vec<ScannerSim> {
        let presets = [
            ScannerSim { lab_shift: [0.0; 3], contrast: 1.0, noise_sigma: 0.01 },
            ScannerSim { lab_shift: [-7.0, 9.0, -7.0], contrast: 1.15, noise_sigma: 0.025 },
            ScannerSim { lab_shift: [6.0, -8.0, 9.0], contrast: 0.85, noise_sigma: 0.035 },
            ScannerSim { lab_shift: [-4.0, -5.0, -9.0], contrast: 1.08, noise_sigma: 0.02 },
            ScannerSim { lab_shift: [8.0, 7.0, 5.0], contrast: 0.9, noise_sigma: 0.03 },
        ];
        (0..count)
            .map(|i| {
                presets.get(i).copied().unwrap_or_else(|| ScannerSim {
                    lab_shift: [rng.range(-9.0, 9.0), rng.range(-9.0, 9.0), rng.range(-9.0, 9.0)],
                    contrast: rng.range(0.85, 1.15),
                    noise_sigma: rng.range(0.01, 0.04),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkParams {
    pub n_train: usize,
    pub n_val: usize,
    pub n_eval: usize,
    pub scanners: usize,
    pub patch_size: usize,
    /// Scales blob frequency; 1.0 gives blobs of roughly 8 px correlation length.
    pub tissue_complexity: f64,
    /// Per-slide LAB jitter of the class colors (standard deviation).
    pub stain_variation: f64,
    /// Per-slide LAB offset shared by all classes (standard deviation).
    pub stain_shift: f64,
    /// Multiplies every scanner's LAB shift and contrast deviation.
    pub scanner_strength: f64,
    /// Multiplies every scanner's noise level.
    pub scanner_noise: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        Self { n_train: 8, n_val: 8, n_eval: 16, scanners: 3, patch_size: 64, tissue_complexity: 3.0, stain_variation: 2.0, stain_shift: 8.0, scanner_strength: 1.5, scanner_noise: 0.3 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub train: Vec<TrainingSample>,
    pub val: Vec<TrainingSample>,
    /// Paired across every scanner, with ground truth.
    pub eval: Vec<PairedImages>,
    pub scanner_ids: Vec<ScannerId>,
    pub scanners: Vec<ScannerSim>,
    pub num_classes: usize,
}

impl SyntheticBenchmark {
    /// The scanner the training and validation sets were rendered with.
    pub fn training_scanner(&self) -> &ScannerId {
        &self.scanner_ids[0]
    }

    pub fn train_images(&self) -> Vec<RasterImage> {
        self.train.iter().map(|s| s.image.clone()).collect()
    }

    /// Writes the eval set as PNG patches plus a manifest with label paths.
    pub fn write_eval(&self, dir: impl AsRef<Path>, manifest_name: &str) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        let mut samples = Vec::with_capacity(self.eval.len());
        for s in &self.eval {
            let sub = dir.join(&s.sample_id);
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let mut patches = BTreeMap::new();
            for (k, img) in &s.patches {
                let rel = format!("{}/{k}.png", s.sample_id);
                save_image(img, dir.join(&rel))?;
                patches.insert(k.clone(), rel);
            }
            let label = match &s.label {
                Some(mask) => {
                    let rel = format!("{}/label.png", s.sample_id);
                    save_label_mask(mask, dir.join(&rel))?;
                    Some(rel)
                }
                None => None,
            };
            samples.push(PairedSample { sample_id: s.sample_id.clone(), region_origin: s.region_origin, patches, label });
        }
        let size = self.eval.first().map(|s| s.patches.values().next().map_or(1, |p| p.width())).unwrap_or(1);
        let mut m = DatasetManifest::new(self.scanner_ids.clone(), size, 0.0, samples)?;
        m.num_classes = Some(self.num_classes);
        save_manifest(&m, dir.join(manifest_name))?;
        Ok(m.with_base_dir(dir))
    }
}

/// Unit-variance smoothed Gaussian noise.
pub fn smooth_noise(w: usize, h: usize, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    let raw = Gray { width: w, height: h, data: (0..w * h).map(|_| rng.normal()).collect() };
    let mut v = raw.gaussian_blur(sigma).data;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - mean) / std);
    v
}

pub fn tissue_mask(size: usize, complexity: f64, rng: &mut Rng) -> LabelMask {
    let sigma = (8.0 / complexity.max(0.05)).max(1.0);
    let tissue = smooth_noise(size, size, sigma, rng);
    let tumor = smooth_noise(size, size, sigma, rng);
    let labels = tissue
        .iter()
        .zip(&tumor)
        .map(|(&t, &c)| if t < -0.3 { BACKGROUND } else if c > 0.3 { TUMOR } else { STROMA })
        .collect();
    LabelMask::new(size, size, NUM_CLASSES, labels).expect("labels below NUM_CLASSES")
}

/// Renders a mask with one slide's stain colors and texture.
pub fn render_tissue(mask: &LabelMask, stain_variation: f64, stain_shift: f64, rng: &mut Rng) -> RasterImage {
    let (w, h) = mask.dims();
    let offset: [f64; 3] = std::array::from_fn(|_| stain_shift * rng.normal());
    let palette: Vec<[f64; 3]> = CLASS_LAB
        .iter()
        .map(|c| std::array::from_fn(|i| c[i] + offset[i] + stain_variation * rng.normal()))
        .collect();
    let grain = smooth_noise(w, h, 1.0, rng);
    let fibers = smooth_noise(w, h, 2.0, rng);
    let nuclei = smooth_noise(w, h, 1.2, rng);
    RasterImage::from_fn(w, h, |x, y| {
        let i = y * w + x;
        let c = mask.get(x, y) as usize;
        let mut lab = palette[c];
        match c as u8 {
            BACKGROUND => lab[0] += 1.5 * grain[i],
            STROMA => {
                lab[0] += 4.0 * fibers[i] + 1.5 * grain[i];
                lab[1] += 2.0 * fibers[i];
            }
            _ => {
                let dark = (nuclei[i] - 0.8).max(0.0);
                lab[0] += 2.0 * grain[i] - 18.0 * dark;
                lab[2] -= 8.0 * dark;
            }
        }
        lab_to_rgb(lab)
    })
}

/// Large tissue-like texture with sharp nuclei, used as a registration target.
pub fn textured_slide(w: usize, h: usize, rng: &mut Rng) -> RasterImage {
    let mask = {
        let tissue = smooth_noise(w, h, 10.0, rng);
        let tumor = smooth_noise(w, h, 14.0, rng);
        let labels =
            tissue.iter().zip(&tumor).map(|(&t, &c)| if t < -0.6 { BACKGROUND } else if c > 0.2 { TUMOR } else { STROMA }).collect();
        LabelMask::new(w, h, NUM_CLASSES, labels).expect("labels below NUM_CLASSES")
    };
    let mut img = render_tissue(&mask, 2.0, 0.0, rng);
    let count = w * h / 90;
    for _ in 0..count {
        let (cx, cy) = (rng.range(0.0, w as f64), rng.range(0.0, h as f64));
        let r = rng.range(1.5, 4.0);
        let shade = [rng.range(0.25, 0.45), rng.range(0.1, 0.25), rng.range(0.35, 0.6)];
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(w - 1));
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(h - 1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                    img.set(x, y, shade);
                }
            }
        }
    }
    img
}

/// Training and validation samples come from scanner 0; eval samples are
/// rendered once per region and passed through every scanner.
pub fn make_synthetic_benchmark(seed: u64, params: &BenchmarkParams) -> Result<SyntheticBenchmark> {
    if params.scanners < 2 {
        return Err(Error::InvalidArgument(format!("{} scanner(s), need at least 2", params.scanners)));
    }
    if params.patch_size < 5 {
        return Err(Error::InvalidArgument(format!("patch size {} below 5", params.patch_size)));
    }
    let root = Rng::new(seed);
    let scanners: Vec<ScannerSim> = ScannerSim::defaults(params.scanners, &mut root.split(0))
        .into_iter()
        .map(|s| ScannerSim {
            lab_shift: s.lab_shift.map(|v| v * params.scanner_strength),
            contrast: 1.0 + (s.contrast - 1.0) * params.scanner_strength,
            noise_sigma: s.noise_sigma * params.scanner_noise,
        })
        .collect();
    let scanner_ids: Vec<ScannerId> = (0..params.scanners).map(|i| ScannerId::new(format!("S{i}")).expect("non-empty")).collect();

    let labeled = |n: usize, stream: u64| -> Vec<TrainingSample> {
        let mut rng = root.split(stream);
        (0..n)
            .map(|_| {
                let mask = tissue_mask(params.patch_size, params.tissue_complexity, &mut rng);
                let clean = render_tissue(&mask, params.stain_variation, params.stain_shift, &mut rng);
                TrainingSample { image: scanners[0].apply(&clean, &mut rng), label: mask }
            })
            .collect()
    };
    let train = labeled(params.n_train, 1);
    let val = labeled(params.n_val, 2);

    let mut rng = root.split(3);
    let eval = (0..params.n_eval)
        .map(|i| {
            let mask = tissue_mask(params.patch_size, params.tissue_complexity, &mut rng);
            let clean = render_tissue(&mask, params.stain_variation, params.stain_shift, &mut rng);
            let patches = scanner_ids.iter().zip(&scanners).map(|(k, s)| (k.clone(), s.apply(&clean, &mut rng))).collect();
            PairedImages {
                sample_id: format!("sample_{i:04}"),
                region_origin: [(i * params.patch_size) as u64, 0],
                patches,
                label: Some(mask),
            }
        })
        .collect();
    Ok(SyntheticBenchmark { train, val, eval, scanner_ids, scanners, num_classes: NUM_CLASSES })
}
