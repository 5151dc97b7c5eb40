//! LAB statistic normalization with randomized target statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::rng::Rng;

use super::color::{lab_to_rgb, rgb_to_lab};

/// Floor applied to source and sampled target standard deviations.
pub const STD_FLOOR: f64 = 1e-3;

/// Per-channel (L, A, B) mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl StainStats {
    pub fn as_vector(&self) -> [f64; 6] {
        [self.mean[0], self.std[0], self.mean[1], self.std[1], self.mean[2], self.std[2]]
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.as_vector().iter().zip(other.as_vector()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// Independent Gaussian per statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainStatsDistribution {
    pub mean: [Gaussian; 3],
    pub std: [Gaussian; 3],
}

impl StainStatsDistribution {
    /// Zero-variance distribution concentrated on `stats`.
    pub fn point(stats: &StainStats) -> Self {
        Self {
            mean: stats.mean.map(|m| Gaussian { mean: m, std: 0.0 }),
            std: stats.std.map(|s| Gaussian { mean: s, std: 0.0 }),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> StainStats {
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for c in 0..3 {
            mean[c] = rng.gaussian(self.mean[c].mean, self.mean[c].std);
            std[c] = rng.gaussian(self.std[c].mean, self.std[c].std).max(STD_FLOOR);
        }
        StainStats { mean, std }
    }
}

pub fn lab_planes(img: &RasterImage) -> [Vec<f64>; 3] {
    let mut planes = [Vec::with_capacity(img.num_pixels()), Vec::with_capacity(img.num_pixels()), Vec::with_capacity(img.num_pixels())];
    for p in img.pixels() {
        let lab = rgb_to_lab(p);
        for c in 0..3 {
            planes[c].push(lab[c]);
        }
    }
    planes
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn compute_stain_stats(img: &RasterImage) -> StainStats {
    let planes = lab_planes(img);
    let mut s = StainStats { mean: [0.0; 3], std: [0.0; 3] };
    for c in 0..3 {
        (s.mean[c], s.std[c]) = mean_std(&planes[c]);
    }
    s
}

pub fn fit_stain_distribution(corpus: &[RasterImage]) -> Result<StainStatsDistribution> {
    if corpus.len() < 2 {
        return Err(Error::EmptyInput(format!("stain corpus has {} image(s), need at least 2", corpus.len())));
    }
    let stats: Vec<StainStats> = corpus.iter().map(compute_stain_stats).collect();
    let fit = |f: &dyn Fn(&StainStats) -> f64| {
        let (mean, std) = mean_std(&stats.iter().map(f).collect::<Vec<_>>());
        Gaussian { mean, std }
    };
    Ok(StainStatsDistribution {
        mean: [fit(&|s| s.mean[0]), fit(&|s| s.mean[1]), fit(&|s| s.mean[2])],
        std: [fit(&|s| s.std[0]), fit(&|s| s.std[1]), fit(&|s| s.std[2])],
    })
}

/// Moves the image's LAB channel statistics onto `target`.
pub fn normalize_to_stats(img: &RasterImage, target: &StainStats) -> RasterImage {
    let planes = lab_planes(img);
    let mut src = StainStats { mean: [0.0; 3], std: [0.0; 3] };
    for c in 0..3 {
        (src.mean[c], src.std[c]) = mean_std(&planes[c]);
    }
    let gain: [f64; 3] = std::array::from_fn(|c| target.std[c].max(STD_FLOOR) / src.std[c].max(STD_FLOOR));
    let data = (0..img.num_pixels())
        .flat_map(|i| {
            let lab: [f64; 3] = std::array::from_fn(|c| (planes[c][i] - src.mean[c]) * gain[c] + target.mean[c]);
            lab_to_rgb(lab)
        })
        .collect();
    RasterImage::from_clamped(img.width(), img.height(), data).expect("same dimensions")
}

/// Samples target statistics from `dist` and normalizes the image onto them.
pub fn rand_stain_na(img: &RasterImage, dist: &StainStatsDistribution, rng: &mut Rng) -> RasterImage {
    let target = dist.sample(rng);
    normalize_to_stats(img, &target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u64) -> RasterImage {
        let mut rng = Rng::new(seed);
        RasterImage::from_fn(16, 16, |x, y| {
            let base = [0.8, 0.55, 0.7];
            let t = 0.15 * ((x as f64 * 0.7).sin() + (y as f64 * 0.4).cos()) + 0.05 * rng.normal();
            [base[0] + t, base[1] + 0.8 * t, base[2] + 0.5 * t]
        })
    }

    #[test]
    fn constant_image_has_zero_std() {
        let s = compute_stain_stats(&RasterImage::filled(5, 5, [0.3, 0.6, 0.2]));
        assert!(s.std.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn white_image_lab_oracle() {
        let s = compute_stain_stats(&RasterImage::filled(3, 3, [1.0; 3]));
        assert!((s.mean[0] - 100.0).abs() < 0.5 && s.mean[1].abs() < 0.5 && s.mean[2].abs() < 0.5);
    }

    #[test]
    fn black_white_pair_mean_lightness() {
        let img = RasterImage::new(2, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let s = compute_stain_stats(&img);
        assert!((s.mean[0] - 50.0).abs() < 0.5);
        assert!((s.std[0] - 50.0).abs() < 0.5);
    }

    /// Finds the gray level whose CIE lightness is `target` by bisection on the forward map.
    fn gray_with_lightness(target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if rgb_to_lab([mid; 3])[0] < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn fit_two_constant_images() {
        let a = RasterImage::filled(4, 4, [gray_with_lightness(40.0); 3]);
        let b = RasterImage::filled(4, 4, [gray_with_lightness(60.0); 3]);
        let d = fit_stain_distribution(&[a, b]).unwrap();
        assert!((d.mean[0].mean - 50.0).abs() < 1e-6, "{:?}", d.mean[0]);
        assert!((d.mean[0].std - 10.0).abs() < 1e-6);
    }

    #[test]
    fn identical_corpus_has_zero_spread_and_singleton_fails() {
        let img = textured(1);
        let d = fit_stain_distribution(&[img.clone(), img.clone(), img.clone()]).unwrap();
        assert!(d.mean.iter().chain(&d.std).all(|g| g.std < 1e-9));
        assert!(fit_stain_distribution(&[img]).is_err());
    }

    #[test]
    fn normalizing_to_own_stats_is_near_identity() {
        let img = textured(2);
        let dist = StainStatsDistribution::point(&compute_stain_stats(&img));
        let out = rand_stain_na(&img, &dist, &mut Rng::new(0));
        assert!(out.max_abs_diff(&img) <= 2.0 / 255.0);
    }

    #[test]
    fn constant_input_lands_on_target_means() {
        let img = RasterImage::filled(6, 6, [0.7, 0.5, 0.6]);
        let dist = StainStatsDistribution {
            mean: [Gaussian { mean: 65.0, std: 3.0 }, Gaussian { mean: 15.0, std: 2.0 }, Gaussian { mean: -8.0, std: 2.0 }],
            std: [Gaussian { mean: 5.0, std: 1.0 }; 3],
        };
        let target = dist.sample(&mut Rng::new(12));
        let out = rand_stain_na(&img, &dist, &mut Rng::new(12));
        let got = compute_stain_stats(&out);
        for c in 0..3 {
            assert!((got.mean[c] - target.mean[c]).abs() < 0.5, "channel {c}: {got:?} vs {target:?}");
        }
        assert!(out.pixels().all(|p| p == out.get(0, 0)));
    }

    #[test]
    fn same_seed_same_output() {
        let img = textured(3);
        let dist = fit_stain_distribution(&[textured(4), textured(5), img.clone()]).unwrap();
        assert_eq!(rand_stain_na(&img, &dist, &mut Rng::new(9)), rand_stain_na(&img, &dist, &mut Rng::new(9)));
    }
}
