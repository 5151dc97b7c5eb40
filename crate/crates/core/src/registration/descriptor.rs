//! Steered BRIEF descriptors.

use std::sync::OnceLock;

use crate::image::RasterImage;
use crate::rng::Rng;

use super::keypoints::{Gray, Keypoint};

/// Pixels around a keypoint the rotated test pattern may touch.
pub const PATCH_RADIUS: f64 = 16.0;
const PATTERN_RADIUS: f64 = 15.0;
const PATTERN_SEED: u64 = 0x0b5e_55ed_b41e_f00d;
const SMOOTHING_SIGMA: f64 = 2.0;

/// 256-bit binary string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinaryDescriptor(pub [u64; 4]);

impl BinaryDescriptor {
    pub fn hamming(&self, other: &Self) -> u32 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a ^ b).count_ones()).sum()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
}

/// Descriptors for the keypoints whose patch fits inside the image.
#[derive(Debug, Clone, Default)]
pub struct DescriptorSet {
    pub descriptors: Vec<BinaryDescriptor>,
    /// Index into the input keypoint list for each descriptor.
    pub keypoint_indices: Vec<usize>,
    /// Input indices dropped for being too close to the border.
    pub dropped: Vec<usize>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }
}

/// The fixed test pattern: 256 point pairs, isotropic Gaussian (σ = 31/5) inside a radius-15 disc.
pub fn test_pattern() -> &'static [[(f64, f64); 2]; 256] {
    static PATTERN: OnceLock<[[(f64, f64); 2]; 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = Rng::new(PATTERN_SEED);
        let sigma = 31.0 / 5.0;
        let mut point = || loop {
            let p = (rng.normal() * sigma, rng.normal() * sigma);
            if p.0.hypot(p.1) <= PATTERN_RADIUS {
                return p;
            }
        };
        let mut pattern = [[(0.0, 0.0); 2]; 256];
        for pair in pattern.iter_mut() {
            *pair = [point(), point()];
        }
        pattern
    })
}

pub fn fits_patch(kp: &Keypoint, width: usize, height: usize) -> bool {
    kp.x >= PATCH_RADIUS
        && kp.y >= PATCH_RADIUS
        && kp.x <= width as f64 - 1.0 - PATCH_RADIUS
        && kp.y <= height as f64 - 1.0 - PATCH_RADIUS
}

pub fn compute_descriptors(img: &RasterImage, keypoints: &[Keypoint]) -> DescriptorSet {
    let smooth = Gray::from_image(img).gaussian_blur(SMOOTHING_SIGMA);
    let pattern = test_pattern();
    let mut out = DescriptorSet::default();
    for (i, kp) in keypoints.iter().enumerate() {
        if !fits_patch(kp, img.width(), img.height()) {
            out.dropped.push(i);
            continue;
        }
        let (s, c) = kp.angle.sin_cos();
        let at = |(px, py): (f64, f64)| smooth.sample(kp.x + c * px - s * py, kp.y + s * px + c * py);
        let mut bits = [0u64; 4];
        for (b, [p, q]) in pattern.iter().enumerate() {
            if at(*p) < at(*q) {
                bits[b / 64] |= 1 << (b % 64);
            }
        }
        out.descriptors.push(BinaryDescriptor(bits));
        out.keypoint_indices.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::keypoints::detect_keypoints;

    /// A few bright blobs and bars: asymmetric so orientations are well defined.
    fn corner_scene(size: usize) -> RasterImage {
        RasterImage::from_fn(size, size, |x, y| {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = 0.1;
            if (20..40).contains(&x) && (24..34).contains(&y) {
                v = 0.9;
            }
            if (44..52).contains(&x) && (18..50).contains(&y) {
                v = 0.7;
            }
            let d = ((xf - 30.0).powi(2) + (yf - 48.0).powi(2)).sqrt();
            if d < 6.0 {
                v = 0.6;
            }
            [v, v, v]
        })
    }

    fn rotate90(img: &RasterImage) -> RasterImage {
        // (x, y) -> (h - 1 - y, x): a quarter turn in image coordinates
        let (w, h) = img.dims();
        RasterImage::from_fn(h, w, |x, y| img.get(y, h - 1 - x))
    }

    #[test]
    fn pattern_is_fixed_and_in_disc() {
        let a = test_pattern();
        assert_eq!(a.len(), 256);
        assert!(a.iter().flatten().all(|p| p.0.hypot(p.1) <= PATTERN_RADIUS));
    }

    #[test]
    fn descriptor_is_deterministic() {
        let img = corner_scene(72);
        let kps = detect_keypoints(&img, 50).unwrap();
        let a = compute_descriptors(&img, &kps);
        let b = compute_descriptors(&img, &kps);
        assert!(!a.is_empty());
        assert_eq!(a.descriptors, b.descriptors);
    }

    #[test]
    fn border_keypoints_are_dropped() {
        let img = corner_scene(72);
        let kps = [
            Keypoint { x: 2.0, y: 36.0, response: 1.0, angle: 0.0 },
            Keypoint { x: 36.0, y: 36.0, response: 1.0, angle: 0.3 },
            Keypoint { x: 36.0, y: 70.0, response: 1.0, angle: 0.0 },
        ];
        let set = compute_descriptors(&img, &kps);
        assert_eq!(set.keypoint_indices, vec![1]);
        assert_eq!(set.dropped, vec![0, 2]);
    }

    #[test]
    fn quarter_turn_is_compensated() {
        let img = corner_scene(72);
        let rot = rotate90(&img);
        let kps = detect_keypoints(&img, 50).unwrap();
        let kps_rot = detect_keypoints(&rot, 50).unwrap();
        let h = img.height() as f64;
        let mut checked = 0;
        for kp in &kps {
            if !fits_patch(kp, 72, 72) {
                continue;
            }
            let (ex, ey) = (h - 1.0 - kp.y, kp.x);
            let Some(kr) = kps_rot.iter().find(|k| (k.x - ex).abs() < 0.01 && (k.y - ey).abs() < 0.01) else {
                continue;
            };
            let da = compute_descriptors(&img, std::slice::from_ref(kp));
            let db = compute_descriptors(&rot, std::slice::from_ref(kr));
            let d = da.descriptors[0].hamming(&db.descriptors[0]);
            assert!(d <= 64, "hamming {d} at ({}, {})", kp.x, kp.y);
            checked += 1;
        }
        assert!(checked >= 3, "only {checked} keypoints matched across the rotation");
    }

    #[test]
    fn hamming_counts_bits() {
        let a = BinaryDescriptor([0; 4]);
        let b = BinaryDescriptor([u64::MAX, 0, 1, 0]);
        assert_eq!(a.hamming(&b), 65);
        assert!(b.bit(0) && b.bit(128) && !b.bit(129));
    }
}
