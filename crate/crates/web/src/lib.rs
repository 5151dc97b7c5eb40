//! WebAssembly bindings for the demo page in `www/`.
//!
//! Images cross the boundary as RGBA bytes (canvas `ImageData` layout); alpha
//! is dropped on the way in and set opaque on the way out.

use wasm_bindgen::prelude::*;

use scorpion::augment::{color_jitter, fda_transfer, ColorJitterParams, FdaParams};
use scorpion::registration::{corner_reprojection_error, register, warp_affine, AffineTransform, RegistrationParams};
use scorpion::simcons::synth::textured_slide;
use scorpion::simcons::ScannerSim;
use scorpion::{RasterImage, Rng};

fn js_err(e: scorpion::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<RasterImage, scorpion::Error> {
    if rgba.len() != width * height * 4 {
        return Err(scorpion::Error::DimensionMismatch(format!("{} bytes for {width}x{height} RGBA", rgba.len())));
    }
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    RasterImage::from_bytes(width, height, &rgb)
}

fn to_rgba(img: &RasterImage) -> Vec<u8> {
    img.to_bytes().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// A synthetic tissue tile, optionally seen through one of the preset virtual scanners.
#[wasm_bindgen]
pub fn synthetic_tile(size: usize, seed: u64, scanner: usize) -> Result<Vec<u8>, JsError> {
    if size < 8 {
        return Err(JsError::new("size must be at least 8"));
    }
    let mut rng = Rng::new(seed);
    let tile = textured_slide(size, size, &mut rng);
    let sims = ScannerSim::defaults(scanner + 1, &mut rng.split(1));
    Ok(to_rgba(&sims[scanner].apply(&tile, &mut rng)))
}

/// Low-frequency amplitude of `target` transplanted into `source`.
#[wasm_bindgen]
pub fn fda_preview(source: &[u8], target: &[u8], width: usize, height: usize, beta: f64) -> Result<Vec<u8>, JsError> {
    let s = from_rgba(source, width, height).map_err(js_err)?;
    let t = from_rgba(target, width, height).map_err(js_err)?;
    let out = fda_transfer(&s, &t, &FdaParams { beta }).map_err(js_err)?;
    Ok(to_rgba(&out))
}

/// Color jitter with every range set to `1 ± strength` and hue `± strength / 4`.
#[wasm_bindgen]
pub fn jitter_preview(rgba: &[u8], width: usize, height: usize, strength: f64, seed: u64) -> Result<Vec<u8>, JsError> {
    let img = from_rgba(rgba, width, height).map_err(js_err)?;
    let s = strength.clamp(0.0, 1.0);
    let r = (1.0 - s, 1.0 + s);
    let params = ColorJitterParams { brightness: r, contrast: r, saturation: r, hue: s / 4.0 };
    let out = color_jitter(&img, &params, &mut Rng::new(seed)).map_err(js_err)?;
    Ok(to_rgba(&out))
}

/// Result of [`registration_demo`]: both matrices row-major `[a, b, tx, c, d, ty]`.
#[wasm_bindgen(getter_with_clone)]
pub struct RegistrationDemo {
    pub truth: Vec<f64>,
    pub estimate: Vec<f64>,
    pub corner_error: f64,
    pub inliers: usize,
    pub matches: usize,
    /// The warped copy the estimate was recovered from, as RGBA.
    pub moving: Vec<u8>,
}

/// Warps a synthetic slide by a known similarity and recovers it from keypoints.
#[wasm_bindgen]
pub fn registration_demo(size: usize, angle_deg: f64, scale: f64, tx: f64, ty: f64, seed: u64) -> Result<RegistrationDemo, JsError> {
    if size < 64 {
        return Err(JsError::new("size must be at least 64"));
    }
    let slide = textured_slide(size, size, &mut Rng::new(seed));
    let c = size as f64 / 2.0;
    let truth = AffineTransform::similarity_about(angle_deg.to_radians(), scale, c, c, tx, ty);
    let moving = warp_affine(&slide, &truth.inverse().map_err(js_err)?, size, size).map_err(js_err)?;
    let reg = register(&slide, &moving, &RegistrationParams::default(), &mut Rng::new(seed ^ 1)).map_err(js_err)?;
    let flat = |t: &AffineTransform| t.matrix.iter().flatten().copied().collect::<Vec<f64>>();
    Ok(RegistrationDemo {
        truth: flat(&truth),
        estimate: flat(&reg.transform),
        corner_error: corner_reprojection_error(&reg.transform, &truth, size, size),
        inliers: reg.ransac.inlier_count(),
        matches: reg.matches,
        moving: to_rgba(&moving),
    })
}
