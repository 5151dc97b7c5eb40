//! 2×3 affine maps and their robust estimation.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::matching::Match;

/// `[a b tx; c d ty]`, mapping `(x, y)` to `(a x + b y + tx, c x + d y + ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 2],
}

/// Accepted registrations keep |det| inside this band.
pub const DET_BOUNDS: (f64, f64) = (0.5, 2.0);

impl AffineTransform {
    pub const IDENTITY: Self = Self { matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] };

    pub fn new(a: f64, b: f64, tx: f64, c: f64, d: f64, ty: f64) -> Self {
        Self { matrix: [[a, b, tx], [c, d, ty]] }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::new(1.0, 0.0, tx, 0.0, 1.0, ty)
    }

    pub fn scale(s: f64) -> Self {
        Self::new(s, 0.0, 0.0, 0.0, s, 0.0)
    }

    /// Rotation by `angle` and isotropic `scale` about `(cx, cy)`, then a shift.
    pub fn similarity_about(angle: f64, scale: f64, cx: f64, cy: f64, tx: f64, ty: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (a, b, cc, d) = (scale * c, -scale * s, scale * s, scale * c);
        Self::new(a, b, cx - a * cx - b * cy + tx, cc, d, cy - cc * cx - d * cy + ty)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.matrix;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    pub fn det(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.det();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::NotInvertible(det));
        }
        let [[a, b, tx], [c, d, ty]] = self.matrix;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(Self::new(ia, ib, -(ia * tx + ib * ty), ic, id, -(ic * tx + id * ty)))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let [[a, b, tx], [c, d, ty]] = self.matrix;
        let [[e, f, ux], [g, h, uy]] = other.matrix;
        Self::new(a * e + b * g, a * f + b * h, a * ux + b * uy + tx, c * e + d * g, c * f + d * h, c * ux + d * uy + ty)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.matrix.iter().flatten().zip(other.matrix.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn has_plausible_scale(&self) -> bool {
        let d = self.det().abs();
        (DET_BOUNDS.0..=DET_BOUNDS.1).contains(&d)
    }

    pub fn reprojection_error(&self, src: (f64, f64), dst: (f64, f64)) -> f64 {
        let p = self.apply(src.0, src.1);
        (p.0 - dst.0).hypot(p.1 - dst.1)
    }
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Exact affine through three correspondences; `None` if the sources are collinear.
pub fn affine_from_three(src: [(f64, f64); 3], dst: [(f64, f64); 3]) -> Option<AffineTransform> {
    if triangle_area2(src[0], src[1], src[2]).abs() < 1e-9 {
        return None;
    }
    let m = Matrix3::new(src[0].0, src[0].1, 1.0, src[1].0, src[1].1, 1.0, src[2].0, src[2].1, 1.0);
    let lu = m.lu();
    let rx = lu.solve(&Vector3::new(dst[0].0, dst[1].0, dst[2].0))?;
    let ry = lu.solve(&Vector3::new(dst[0].1, dst[1].1, dst[2].1))?;
    Some(AffineTransform::new(rx[0], rx[1], rx[2], ry[0], ry[1], ry[2]))
}

fn triangle_area2(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// True when every point lies on one line (or fewer than 3 distinct points exist).
pub fn all_collinear(points: &[(f64, f64)]) -> bool {
    let Some(&p0) = points.first() else { return true };
    let Some(&p1) = points.iter().find(|p| (p.0 - p0.0).hypot(p.1 - p0.1) > 1e-9) else {
        return true;
    };
    let scale = points.iter().map(|p| (p.0 - p0.0).hypot(p.1 - p0.1)).fold(0.0, f64::max).max(1.0);
    points.iter().all(|&p| triangle_area2(p0, p1, p).abs() <= 1e-9 * scale * scale)
}

/// Least-squares affine over all correspondences (centred for conditioning).
pub fn fit_affine_least_squares(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<AffineTransform> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch("correspondence lists differ in length".into()));
    }
    if src.len() < 3 || all_collinear(src) {
        return Err(Error::Degenerate("need 3 non-collinear points".into()));
    }
    let n = src.len() as f64;
    let (mx, my) = src.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let mut ata = Matrix3::<f64>::zeros();
    let mut atu = Vector3::<f64>::zeros();
    let mut atv = Vector3::<f64>::zeros();
    for (s, d) in src.iter().zip(dst) {
        let row = Vector3::new(s.0 - mx, s.1 - my, 1.0);
        ata += row * row.transpose();
        atu += row * d.0;
        atv += row * d.1;
    }
    let chol = ata.cholesky().ok_or_else(|| Error::Degenerate("singular normal equations".into()))?;
    let pu = chol.solve(&atu);
    let pv = chol.solve(&atv);
    // undo centring: u = a (x - mx) + b (y - my) + c
    Ok(AffineTransform::new(
        pu[0],
        pu[1],
        pu[2] - pu[0] * mx - pu[1] * my,
        pv[0],
        pv[1],
        pv[2] - pv[0] * mx - pv[1] * my,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: AffineTransform,
    /// Per-match flag, aligned with the input match list.
    pub inliers: Vec<bool>,
    pub mean_error: f64,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// RANSAC over 3-point minimal samples followed by least-squares refits on the inlier set.
///
/// `src_pts[m.source]` maps to `dst_pts[m.target]` for every match `m`. The winning
/// hypothesis has the most inliers (error `< inlier_tol`), ties going to the lower mean
/// inlier error. The returned mask is recomputed against the final refit transform.
pub fn estimate_affine_ransac(
    matches: &[Match],
    src_pts: &[(f64, f64)],
    dst_pts: &[(f64, f64)],
    iters: usize,
    inlier_tol: f64,
    rng: &mut Rng,
) -> Result<RansacResult> {
    let src: Vec<(f64, f64)> = matches.iter().map(|m| src_pts[m.source]).collect();
    let dst: Vec<(f64, f64)> = matches.iter().map(|m| dst_pts[m.target]).collect();
    estimate_affine_ransac_pairs(&src, &dst, iters, inlier_tol, rng)
}

pub fn estimate_affine_ransac_pairs(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    iters: usize,
    inlier_tol: f64,
    rng: &mut Rng,
) -> Result<RansacResult> {
    if src.len() != dst.len() {
        return Err(Error::DimensionMismatch("correspondence lists differ in length".into()));
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("{n} correspondences, need at least 3")));
    }
    if all_collinear(src) || all_collinear(dst) {
        return Err(Error::Degenerate("all correspondences are collinear".into()));
    }
    if !(inlier_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("inlier_tol {inlier_tol}")));
    }

    let score = |t: &AffineTransform| -> (usize, f64) {
        let (mut count, mut sum) = (0usize, 0.0);
        for (s, d) in src.iter().zip(dst) {
            let e = t.reprojection_error(*s, *d);
            if e < inlier_tol {
                count += 1;
                sum += e;
            }
        }
        (count, if count > 0 { sum / count as f64 } else { f64::INFINITY })
    };

    let mut best: Option<(AffineTransform, usize, f64)> = None;
    for _ in 0..iters.max(1) {
        let i = rng.below(n);
        let mut j = rng.below(n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.below(n - 2);
        for lo in [i.min(j), i.max(j)] {
            if k >= lo {
                k += 1;
            }
        }
        let Some(t) = affine_from_three([src[i], src[j], src[k]], [dst[i], dst[j], dst[k]]) else {
            continue;
        };
        if t.det().abs() < 1e-12 {
            continue;
        }
        let (count, mean) = score(&t);
        let better = match &best {
            None => true,
            Some((_, c, m)) => count > *c || (count == *c && mean < *m),
        };
        if better {
            best = Some((t, count, mean));
        }
    }

    let (mut transform, count, _) = best.ok_or(Error::NoConsensus)?;
    if count < 3 {
        return Err(Error::NoConsensus);
    }

    let mask_for = |t: &AffineTransform| -> Vec<bool> {
        src.iter().zip(dst).map(|(s, d)| t.reprojection_error(*s, *d) < inlier_tol).collect()
    };
    let mut mask = mask_for(&transform);
    for _ in 0..10 {
        let (s_in, d_in): (Vec<_>, Vec<_>) =
            src.iter().zip(dst).zip(&mask).filter(|(_, &m)| m).map(|((s, d), _)| (*s, *d)).unzip();
        let Ok(refit) = fit_affine_least_squares(&s_in, &d_in) else { break };
        let new_mask = mask_for(&refit);
        if new_mask.iter().filter(|&&b| b).count() < 3 {
            break;
        }
        transform = refit;
        if new_mask == mask {
            break;
        }
        mask = new_mask;
    }
    let mask = mask_for(&transform);
    let count = mask.iter().filter(|&&b| b).count();
    if count < 3 {
        return Err(Error::NoConsensus);
    }
    let mean_error = src
        .iter()
        .zip(dst)
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|((s, d), _)| transform.reprojection_error(*s, *d))
        .sum::<f64>()
        / count as f64;
    Ok(RansacResult { transform, inliers: mask, mean_error })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|i| ((i % 7) as f64 * 13.0 + 3.0, (i / 7) as f64 * 11.0 + (i % 3) as f64)).collect()
    }

    fn identity_matches(n: usize) -> Vec<Match> {
        (0..n).map(|i| Match { source: i, target: i, distance: 0 }).collect()
    }

    #[test]
    fn inverse_and_compose() {
        let t = AffineTransform::new(1.1, 0.2, 5.0, -0.1, 0.9, -3.0);
        let id = t.compose(&t.inverse().unwrap());
        assert!(id.max_abs_diff(&AffineTransform::IDENTITY) < 1e-12);
        assert!(AffineTransform::new(1.0, 2.0, 0.0, 2.0, 4.0, 0.0).inverse().is_err());
    }

    #[test]
    fn identity_recovered_with_all_inliers() {
        let pts = grid(30);
        let r = estimate_affine_ransac(&identity_matches(30), &pts, &pts, 200, 3.0, &mut Rng::new(1)).unwrap();
        assert!(r.transform.max_abs_diff(&AffineTransform::IDENTITY) < 1e-9);
        assert_eq!(r.inlier_count(), 30);
    }

    #[test]
    fn pure_translation_matches_closed_form() {
        let src = grid(25);
        let dst: Vec<_> = src.iter().map(|p| (p.0 + 5.0, p.1 - 3.0)).collect();
        let r = estimate_affine_ransac(&identity_matches(25), &src, &dst, 100, 3.0, &mut Rng::new(2)).unwrap();
        let m = r.transform.matrix;
        assert!((m[0][2] - 5.0).abs() < 1e-9 && (m[1][2] + 3.0).abs() < 1e-9);
        // closed-form oracle: translation = mean displacement
        let n = src.len() as f64;
        let mean_dx: f64 = src.iter().zip(&dst).map(|(s, d)| d.0 - s.0).sum::<f64>() / n;
        assert!((m[0][2] - mean_dx).abs() < 1e-9);
    }

    #[test]
    fn outliers_are_rejected() {
        let truth = AffineTransform::new(1.05, -0.08, 12.0, 0.06, 0.97, -7.0);
        let mut rng = Rng::new(9);
        let n = 100;
        let src: Vec<_> = (0..n).map(|_| (rng.range(0.0, 500.0), rng.range(0.0, 500.0))).collect();
        let is_outlier: Vec<bool> = (0..n).map(|i| i % 10 >= 7).collect();
        let dst: Vec<_> = src
            .iter()
            .zip(&is_outlier)
            .map(|(p, &o)| if o { (rng.range(0.0, 500.0), rng.range(0.0, 500.0)) } else { truth.apply(p.0, p.1) })
            .collect();
        let r = estimate_affine_ransac(&identity_matches(n), &src, &dst, 2000, 2.0, &mut Rng::new(4)).unwrap();
        assert!(r.transform.max_abs_diff(&truth) < 1e-2, "{:?}", r.transform);
        for (i, &inl) in r.inliers.iter().enumerate() {
            if !is_outlier[i] {
                assert!(inl);
            }
            // independent re-check of the returned mask
            let e = r.transform.reprojection_error(src[i], dst[i]);
            assert_eq!(inl, e < 2.0);
        }
    }

    #[test]
    fn collinear_input_is_degenerate() {
        let src: Vec<_> = (0..10).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let err = estimate_affine_ransac(&identity_matches(10), &src, &src, 50, 3.0, &mut Rng::new(0));
        assert!(matches!(err, Err(Error::Degenerate(_))));
        let err = estimate_affine_ransac(&identity_matches(2), &src, &src, 50, 3.0, &mut Rng::new(0));
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn same_seed_same_result() {
        let mut rng = Rng::new(3);
        let src: Vec<_> = (0..40).map(|_| (rng.range(0.0, 100.0), rng.range(0.0, 100.0))).collect();
        let dst: Vec<_> = src.iter().map(|p| (p.0 + rng.range(-1.5, 1.5), p.1 + rng.range(-1.5, 1.5))).collect();
        let a = estimate_affine_ransac(&identity_matches(40), &src, &dst, 300, 1.0, &mut Rng::new(8)).unwrap();
        let b = estimate_affine_ransac(&identity_matches(40), &src, &dst, 300, 1.0, &mut Rng::new(8)).unwrap();
        assert_eq!(a, b);
    }
}
