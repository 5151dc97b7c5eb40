use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{luma, RasterImage};
use crate::rng::Rng;

use super::color::{hsv_to_rgb, rgb_to_hsv};

/// Sampling ranges; factors are multiplicative, `hue` is a half-width in turns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorJitterParams {
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    pub hue: f64,
}

impl Default for ColorJitterParams {
    fn default() -> Self {
        Self { brightness: (0.8, 1.2), contrast: (0.8, 1.2), saturation: (0.8, 1.2), hue: 0.05 }
    }
}

impl ColorJitterParams {
    pub const IDENTITY: Self = Self { brightness: (1.0, 1.0), contrast: (1.0, 1.0), saturation: (1.0, 1.0), hue: 0.0 };

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("brightness", self.brightness), ("contrast", self.contrast), ("saturation", self.saturation)] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(Error::InvalidArgument(format!("{name} range ({lo}, {hi}) needs 0 <= lo <= hi")));
            }
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(Error::InvalidArgument(format!("hue half-width {} not in [0, 0.5]", self.hue)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

const OPS: [Op; 4] = [Op::Brightness, Op::Contrast, Op::Saturation, Op::Hue];

/// Random brightness, contrast, saturation and hue changes applied in a random order.
///
/// Factors equal to 1 (and a zero hue shift) skip their step so the identity
/// configuration returns the input bit for bit.
pub fn color_jitter(img: &RasterImage, params: &ColorJitterParams, rng: &mut Rng) -> Result<RasterImage> {
    params.validate()?;
    let b = rng.range(params.brightness.0, params.brightness.1);
    let c = rng.range(params.contrast.0, params.contrast.1);
    let s = rng.range(params.saturation.0, params.saturation.1);
    let h = rng.range(-params.hue, params.hue);
    let order = rng.permutation(4);

    let mut out = img.clone();
    for op in order.into_iter().map(|i| OPS[i]) {
        out = match op {
            Op::Brightness if b != 1.0 => out.map_pixels(|p| p.map(|v| v * b)),
            Op::Contrast if c != 1.0 => {
                let mean = out.pixels().map(luma).sum::<f64>() / out.num_pixels() as f64;
                out.map_pixels(|p| p.map(|v| mean + c * (v - mean)))
            }
            Op::Saturation if s != 1.0 => out.map_pixels(|p| {
                let l = luma(p);
                p.map(|v| l + s * (v - l))
            }),
            Op::Hue if h != 0.0 => out.map_pixels(|p| {
                let [hh, ss, vv] = rgb_to_hsv(p);
                hsv_to_rgb([(hh + h).rem_euclid(1.0), ss, vv])
            }),
            _ => out,
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn colorful(seed: u64) -> RasterImage {
        let mut rng = Rng::new(seed);
        RasterImage::from_fn(12, 9, |_, _| [rng.uniform(), rng.uniform(), rng.uniform()])
    }

    #[test]
    fn identity_ranges_are_exact_identity() {
        let img = colorful(1);
        let out = color_jitter(&img, &ColorJitterParams::IDENTITY, &mut Rng::new(3)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn zero_brightness_blackens() {
        let p = ColorJitterParams { brightness: (0.0, 0.0), ..ColorJitterParams::IDENTITY };
        let out = color_jitter(&colorful(2), &p, &mut Rng::new(0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_ranges_rejected() {
        let p = ColorJitterParams { contrast: (1.2, 0.8), ..ColorJitterParams::IDENTITY };
        assert!(color_jitter(&colorful(2), &p, &mut Rng::new(0)).is_err());
        let p = ColorJitterParams { hue: 0.6, ..ColorJitterParams::IDENTITY };
        assert!(color_jitter(&colorful(2), &p, &mut Rng::new(0)).is_err());
    }

    proptest! {
        #[test]
        fn gray_stays_gray(v in 0.0..1.0f64, seed in any::<u64>(), s_lo in 0.0..2.0f64, hue in 0.0..0.5f64) {
            let img = RasterImage::from_fn(5, 4, |x, y| { let g = (v + 0.05 * (x + y) as f64).min(1.0); [g, g, g] });
            let p = ColorJitterParams { brightness: (0.5, 1.5), contrast: (0.5, 1.5), saturation: (s_lo, s_lo + 1.0), hue };
            let out = color_jitter(&img, &p, &mut Rng::new(seed)).unwrap();
            for px in out.pixels() {
                prop_assert!((px[0] - px[1]).abs() < 1e-6 && (px[1] - px[2]).abs() < 1e-6);
            }
        }

        #[test]
        fn output_in_range_and_deterministic(seed in any::<u64>()) {
            let img = colorful(seed);
            let p = ColorJitterParams { brightness: (0.0, 3.0), contrast: (0.0, 3.0), saturation: (0.0, 3.0), hue: 0.5 };
            let a = color_jitter(&img, &p, &mut Rng::new(seed)).unwrap();
            let b = color_jitter(&img, &p, &mut Rng::new(seed)).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(a.dims(), img.dims());
        }
    }
}
