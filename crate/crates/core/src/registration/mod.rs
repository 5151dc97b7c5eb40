//! Slide-level registration and aligned patch extraction.
//!
//! The pipeline is detect → describe → match → RANSAC affine; the resulting
//! transform maps a scan's pixel coordinates onto the reference scan, which
//! is what [`extract_aligned_patches`] expects.

pub mod affine;
pub mod descriptor;
pub mod keypoints;
pub mod matching;
pub mod warp;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use affine::{estimate_affine_ransac, AffineTransform, RansacResult};
pub use descriptor::{compute_descriptors, BinaryDescriptor, DescriptorSet};
pub use keypoints::{detect_keypoints, Keypoint};
pub use matching::{match_descriptors, Match, MatchSet};
pub use warp::{resize_bilinear, warp_affine};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::manifest::{PairedImages, ScannerId};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationParams {
    pub max_keypoints: usize,
    pub ratio: f64,
    pub iters: usize,
    pub inlier_tol: f64,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        Self { max_keypoints: 1500, ratio: 0.75, iters: 2000, inlier_tol: 3.0 }
    }
}

/// Persisted form: `{"matrix": [[a,b,tx],[c,d,ty]], "inliers": n, "mean_error": e}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationRecord {
    pub matrix: [[f64; 3]; 2],
    pub inliers: usize,
    pub mean_error: f64,
}

impl RegistrationRecord {
    pub fn transform(&self) -> AffineTransform {
        AffineTransform { matrix: self.matrix }
    }
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub transform: AffineTransform,
    pub ransac: RansacResult,
    pub moving_keypoints: usize,
    pub reference_keypoints: usize,
    pub matches: usize,
}

impl Registration {
    pub fn record(&self) -> RegistrationRecord {
        RegistrationRecord {
            matrix: self.transform.matrix,
            inliers: self.ransac.inlier_count(),
            mean_error: self.ransac.mean_error,
        }
    }
}

/// Estimates the affine map taking `moving` pixel coordinates to `reference` coordinates.
///
/// Fails if the recovered map's |det| lies outside [`affine::DET_BOUNDS`].
pub fn register(reference: &RasterImage, moving: &RasterImage, params: &RegistrationParams, rng: &mut Rng) -> Result<Registration> {
    let kp_ref = detect_keypoints(reference, params.max_keypoints)?;
    let kp_mov = detect_keypoints(moving, params.max_keypoints)?;
    let d_ref = compute_descriptors(reference, &kp_ref);
    let d_mov = compute_descriptors(moving, &kp_mov);
    if d_ref.is_empty() || d_mov.is_empty() {
        return Err(Error::EmptyInput("no describable keypoints".into()));
    }
    let matches = match_descriptors(&d_mov.descriptors, &d_ref.descriptors, params.ratio)?;
    let src: Vec<(f64, f64)> = d_mov.keypoint_indices.iter().map(|&i| (kp_mov[i].x, kp_mov[i].y)).collect();
    let dst: Vec<(f64, f64)> = d_ref.keypoint_indices.iter().map(|&i| (kp_ref[i].x, kp_ref[i].y)).collect();
    let ransac = estimate_affine_ransac(&matches, &src, &dst, params.iters, params.inlier_tol, rng)?;
    if !ransac.transform.has_plausible_scale() {
        return Err(Error::Degenerate(format!(
            "recovered |det| = {:.3} outside [{}, {}]",
            ransac.transform.det().abs(),
            affine::DET_BOUNDS.0,
            affine::DET_BOUNDS.1
        )));
    }
    Ok(Registration {
        transform: ransac.transform,
        moving_keypoints: kp_mov.len(),
        reference_keypoints: kp_ref.len(),
        matches: matches.len(),
        ransac,
    })
}

/// Mean distance between where `estimate` and `truth` send the corners of a `w × h` frame.
pub fn corner_reprojection_error(estimate: &AffineTransform, truth: &AffineTransform, w: usize, h: usize) -> f64 {
    let corners = [(0.0, 0.0), ((w - 1) as f64, 0.0), (0.0, (h - 1) as f64), ((w - 1) as f64, (h - 1) as f64)];
    corners
        .iter()
        .map(|&(x, y)| {
            let a = estimate.apply(x, y);
            let b = truth.apply(x, y);
            (a.0 - b.0).hypot(a.1 - b.1)
        })
        .sum::<f64>()
        / 4.0
}

/// Cuts `patch_src_size`² regions (top-left corners in reference coordinates) from the
/// reference and every warped scan, resized to `patch_out_size`².
///
/// `transforms[s]` maps scanner `s` coordinates to reference coordinates. The reference
/// itself needs no transform.
pub fn extract_aligned_patches(
    reference_id: &ScannerId,
    reference: &RasterImage,
    others: &BTreeMap<ScannerId, RasterImage>,
    transforms: &BTreeMap<ScannerId, AffineTransform>,
    regions: &[(usize, usize)],
    patch_src_size: usize,
    patch_out_size: usize,
) -> Result<Vec<PairedImages>> {
    if patch_src_size == 0 || patch_out_size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    let (w, h) = reference.dims();
    for &(x, y) in regions {
        if x + patch_src_size > w || y + patch_src_size > h {
            return Err(Error::RegionOutOfBounds { x, y, size: patch_src_size, width: w, height: h });
        }
    }
    let mut warped = BTreeMap::new();
    for (id, img) in others {
        if id == reference_id {
            continue;
        }
        let t = transforms.get(id).ok_or_else(|| Error::MissingTransform(id.to_string()))?;
        warped.insert(id.clone(), warp_affine(img, t, w, h)?);
    }
    let mut out = Vec::with_capacity(regions.len());
    for (i, &(x, y)) in regions.iter().enumerate() {
        let mut patches = BTreeMap::new();
        let cut = |img: &RasterImage| -> Result<RasterImage> {
            resize_bilinear(&img.crop(x, y, patch_src_size, patch_src_size)?, patch_out_size, patch_out_size)
        };
        patches.insert(reference_id.clone(), cut(reference)?);
        for (id, img) in &warped {
            patches.insert(id.clone(), cut(img)?);
        }
        out.push(PairedImages {
            sample_id: format!("region_{i:04}"),
            region_origin: [x as u64, y as u64],
            patches,
            label: None,
        });
    }
    Ok(out)
}

/// Distinct random region origins fully inside a `width × height` reference.
pub fn random_regions(width: usize, height: usize, size: usize, count: usize, rng: &mut Rng) -> Result<Vec<(usize, usize)>> {
    if size > width || size > height {
        return Err(Error::RegionOutOfBounds { x: 0, y: 0, size, width, height });
    }
    Ok((0..count).map(|_| (rng.below(width - size + 1), rng.below(height - size + 1))).collect())
}
