//! Style augmentations: content-preserving transforms that change colour and
//! texture statistics.

pub mod color;
pub mod fda;
pub mod jitter;
pub mod stain;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use fda::{fda_transfer, FdaParams};
pub use jitter::{color_jitter, ColorJitterParams};
pub use stain::{compute_stain_stats, fit_stain_distribution, rand_stain_na, StainStats, StainStatsDistribution};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::rng::Rng;

/// `apply` must preserve dimensions, keep values in `[0, 1]` and depend only on
/// `(img, rng state, configuration)`.
pub trait StyleAugmentation: Send + Sync {
    fn name(&self) -> &str;
    fn apply(&self, img: &RasterImage, rng: &mut Rng) -> RasterImage;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaMethod {
    ColorJitter,
    RandStainNa,
    Fda,
}

impl SaMethod {
    pub const ALL: [SaMethod; 3] = [SaMethod::ColorJitter, SaMethod::RandStainNa, SaMethod::Fda];

    pub fn as_str(&self) -> &'static str {
        match self {
            SaMethod::ColorJitter => "colorjitter",
            SaMethod::RandStainNa => "randstainna",
            SaMethod::Fda => "fda",
        }
    }
}

impl fmt::Display for SaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SaMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "colorjitter" | "color-jitter" | "cj" => Ok(SaMethod::ColorJitter),
            "randstainna" | "rand-stain-na" => Ok(SaMethod::RandStainNa),
            "fda" => Ok(SaMethod::Fda),
            other => Err(Error::InvalidArgument(format!("unknown augmentation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub color_jitter: ColorJitterParams,
    pub fda: FdaParams,
    /// Required by [`SaMethod::RandStainNa`].
    pub stain: Option<StainStatsDistribution>,
}

pub struct ColorJitterSa {
    params: ColorJitterParams,
}

impl StyleAugmentation for ColorJitterSa {
    fn name(&self) -> &str {
        "colorjitter"
    }

    fn apply(&self, img: &RasterImage, rng: &mut Rng) -> RasterImage {
        color_jitter(img, &self.params, rng).expect("validated at construction")
    }
}

pub struct RandStainNaSa {
    dist: StainStatsDistribution,
}

impl StyleAugmentation for RandStainNaSa {
    fn name(&self) -> &str {
        "randstainna"
    }

    fn apply(&self, img: &RasterImage, rng: &mut Rng) -> RasterImage {
        rand_stain_na(img, &self.dist, rng)
    }
}

/// FDA with targets drawn uniformly from a style pool.
pub struct FdaSa {
    params: FdaParams,
    pool: Vec<RasterImage>,
}

impl StyleAugmentation for FdaSa {
    fn name(&self) -> &str {
        "fda"
    }

    fn apply(&self, img: &RasterImage, rng: &mut Rng) -> RasterImage {
        // the source itself is excluded from the draw when it sits in the pool
        let candidates: Vec<&RasterImage> =
            self.pool.iter().filter(|p| p.dims() == img.dims() && *p != img).collect();
        if candidates.is_empty() {
            rng.uniform();
            return fda_transfer(img, img, &self.params).expect("same dimensions");
        }
        let target = candidates[rng.below(candidates.len())];
        fda_transfer(img, target, &self.params).expect("same dimensions")
    }
}

/// Passes images through unchanged.
pub struct IdentitySa;

impl StyleAugmentation for IdentitySa {
    fn name(&self) -> &str {
        "identity"
    }

    fn apply(&self, img: &RasterImage, _rng: &mut Rng) -> RasterImage {
        img.clone()
    }
}

pub fn make_sa(method: SaMethod, config: &SaConfig, style_pool: Option<&[RasterImage]>) -> Result<Box<dyn StyleAugmentation>> {
    match method {
        SaMethod::ColorJitter => {
            config.color_jitter.validate()?;
            Ok(Box::new(ColorJitterSa { params: config.color_jitter }))
        }
        SaMethod::RandStainNa => {
            let dist = config
                .stain
                .ok_or_else(|| Error::InvalidArgument("randstainna needs a fitted stain distribution".into()))?;
            Ok(Box::new(RandStainNaSa { dist }))
        }
        SaMethod::Fda => {
            config.fda.validate()?;
            let pool = style_pool.filter(|p| !p.is_empty()).ok_or_else(|| {
                Error::InvalidArgument("fda needs a non-empty style pool".into())
            })?;
            Ok(Box::new(FdaSa { params: config.fda, pool: pool.to_vec() }))
        }
    }
}
