//! Input-level scanner analysis.
//!
//! Each patch is summarized by the mean and standard deviation of its R, G and
//! B values. The unpaired view pools all patches; the paired view subtracts
//! the reference scanner's statistics sample by sample, which isolates the
//! scanner effect from tissue composition. A PCA projection gives a 2-D view
//! and the silhouette coefficient quantifies how separable the scanners are.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::manifest::{DatasetManifest, PairedImages, ScannerId};

pub const STAT_NAMES: [&str; 6] = ["r_mean", "r_std", "g_mean", "g_std", "b_mean", "b_std"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchStats {
    pub sample_id: String,
    pub scanner: ScannerId,
    /// `[r_mean, r_std, g_mean, g_std, b_mean, b_std]`.
    pub values: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDeviation {
    pub sample_id: String,
    pub scanner: ScannerId,
    pub delta: [f64; 6],
}

/// Per-channel mean and population standard deviation.
pub fn compute_patch_stats(img: &RasterImage) -> [f64; 6] {
    let n = img.num_pixels() as f64;
    let mut sum = [0.0; 3];
    for p in img.pixels() {
        for c in 0..3 {
            sum[c] += p[c];
        }
    }
    let mean = sum.map(|s| s / n);
    let mut var = [0.0; 3];
    for p in img.pixels() {
        for c in 0..3 {
            var[c] += (p[c] - mean[c]).powi(2);
        }
    }
    let std = var.map(|v| (v / n).sqrt());
    [mean[0], std[0], mean[1], std[1], mean[2], std[2]]
}

/// One row per (sample, scanner), scanners in `scanners` order.
pub fn unpaired_stats(samples: &[PairedImages], scanners: &[ScannerId]) -> Vec<PatchStats> {
    samples
        .par_iter()
        .map(|s| {
            scanners
                .iter()
                .filter_map(|k| s.patches.get(k).map(|img| (k, img)))
                .map(|(k, img)| PatchStats { sample_id: s.sample_id.clone(), scanner: k.clone(), values: compute_patch_stats(img) })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect()
}

/// Statistic deltas against `reference`; the reference's own rows are zero.
pub fn paired_deviations(samples: &[PairedImages], scanners: &[ScannerId], reference: &ScannerId) -> Result<Vec<PairedDeviation>> {
    let stats = unpaired_stats(samples, scanners);
    deviations_from_stats(&stats, reference)
}

/// Re-references a stats table; every sample must contain `reference`.
pub fn deviations_from_stats(stats: &[PatchStats], reference: &ScannerId) -> Result<Vec<PairedDeviation>> {
    let mut refs: BTreeMap<&str, [f64; 6]> = BTreeMap::new();
    for row in stats.iter().filter(|r| &r.scanner == reference) {
        refs.insert(&row.sample_id, row.values);
    }
    stats
        .iter()
        .map(|row| {
            let base = refs
                .get(row.sample_id.as_str())
                .ok_or_else(|| Error::MissingPatch { sample: row.sample_id.clone(), scanner: reference.to_string() })?;
            let delta = if &row.scanner == reference {
                [0.0; 6]
            } else {
                std::array::from_fn(|i| row.values[i] - base[i])
            };
            Ok(PairedDeviation { sample_id: row.sample_id.clone(), scanner: row.scanner.clone(), delta })
        })
        .collect()
}

fn load_all(manifest: &DatasetManifest) -> Result<Vec<PairedImages>> {
    manifest.samples.par_iter().map(|s| manifest.load_sample(s)).collect()
}

pub fn unpaired_analysis(manifest: &DatasetManifest) -> Result<Vec<PatchStats>> {
    Ok(unpaired_stats(&load_all(manifest)?, &manifest.scanners))
}

pub fn paired_analysis(manifest: &DatasetManifest, reference: &ScannerId) -> Result<Vec<PairedDeviation>> {
    for s in &manifest.samples {
        if !s.patches.contains_key(reference) {
            return Err(Error::MissingPatch { sample: s.sample_id.clone(), scanner: reference.to_string() });
        }
    }
    paired_deviations(&load_all(manifest)?, &manifest.scanners, reference)
}

/// Mean-centred PCA onto the top two components. Each component's sign makes
/// its largest-magnitude loading positive.
pub fn project_2d(rows: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    if rows.len() < 2 {
        return Err(Error::EmptyInput(format!("{} row(s), need at least 2", rows.len())));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("rows differ in length".into()));
    }
    let n = rows.len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let component = |k: usize| -> Vec<f64> {
        let Some(&idx) = order.get(k) else { return vec![0.0; d] };
        let v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter().map(|x| -x).collect()
        } else {
            v
        }
    };
    let (c1, c2) = (component(0), component(1));
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let p = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            (p(&c1), p(&c2))
        })
        .collect())
}

/// Mean silhouette coefficient with Euclidean distance.
pub fn silhouette<L: Ord + Clone>(labels: &[L], points: &[Vec<f64>]) -> Result<f64> {
    if labels.len() != points.len() {
        return Err(Error::DimensionMismatch("labels and points differ in length".into()));
    }
    let mut groups: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.clone()).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::DegenerateGroups(format!("{} group(s), need at least 2", groups.len())));
    }
    if let Some((_, g)) = groups.iter().find(|(_, g)| g.len() < 2) {
        return Err(Error::DegenerateGroups(format!("a group has {} point(s), need at least 2", g.len())));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let members: Vec<&Vec<usize>> = groups.values().collect();
    let group_of: Vec<usize> = {
        let mut g = vec![0; labels.len()];
        for (gi, m) in members.iter().enumerate() {
            for &i in m.iter() {
                g[i] = gi;
            }
        }
        g
    };
    let scores: Vec<f64> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = group_of[i];
            let mean_to = |g: usize| {
                let m = members[g];
                let s: f64 = m.iter().filter(|&&j| j != i).map(|&j| dist(&points[i], &points[j])).sum();
                let count = if g == own { m.len() - 1 } else { m.len() };
                s / count as f64
            };
            let a = mean_to(own);
            let b = (0..members.len()).filter(|&g| g != own).map(mean_to).fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Silhouette of deviations grouped by scanner, leaving out `exclude` (the reference, whose rows are all zero).
pub fn separability_of_deviations(rows: &[PairedDeviation], exclude: Option<&ScannerId>) -> Result<f64> {
    let kept: Vec<&PairedDeviation> = rows.iter().filter(|r| Some(&r.scanner) != exclude).collect();
    let labels: Vec<ScannerId> = kept.iter().map(|r| r.scanner.clone()).collect();
    let points: Vec<Vec<f64>> = kept.iter().map(|r| r.delta.to_vec()).collect();
    silhouette(&labels, &points)
}

pub fn separability_of_stats(rows: &[PatchStats], exclude: Option<&ScannerId>) -> Result<f64> {
    let kept: Vec<&PatchStats> = rows.iter().filter(|r| Some(&r.scanner) != exclude).collect();
    let labels: Vec<ScannerId> = kept.iter().map(|r| r.scanner.clone()).collect();
    let points: Vec<Vec<f64>> = kept.iter().map(|r| r.values.to_vec()).collect();
    silhouette(&labels, &points)
}

fn csv_table<'a>(rows: impl Iterator<Item = (&'a str, &'a ScannerId, &'a [f64; 6])>, prefix: &str) -> String {
    let mut s = String::from("sample_id,scanner");
    for n in STAT_NAMES {
        write!(s, ",{prefix}{n}").unwrap();
    }
    s.push('\n');
    for (id, scanner, v) in rows {
        write!(s, "{id},{scanner}").unwrap();
        for x in v {
            write!(s, ",{x:.6}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn stats_csv(rows: &[PatchStats]) -> String {
    csv_table(rows.iter().map(|r| (r.sample_id.as_str(), &r.scanner, &r.values)), "")
}

pub fn deviations_csv(rows: &[PairedDeviation]) -> String {
    csv_table(rows.iter().map(|r| (r.sample_id.as_str(), &r.scanner, &r.delta)), "d_")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn ids(names: &[&str]) -> Vec<ScannerId> {
        names.iter().map(|n| ScannerId::new(*n).unwrap()).collect()
    }

    #[test]
    fn constant_image_stats() {
        let s = compute_patch_stats(&RasterImage::filled(3, 3, [0.2, 0.2, 0.2]));
        for c in 0..3 {
            assert!((s[2 * c] - 0.2).abs() < 1e-15);
            assert!(s[2 * c + 1] < 1e-15);
        }
    }

    #[test]
    fn checkerboard_two_point_distribution() {
        let img = RasterImage::from_fn(8, 8, |x, y| [((x + y) % 2) as f64, 0.3, 0.3]);
        let s = compute_patch_stats(&img);
        assert_eq!((s[0], s[1]), (0.5, 0.5));
    }

    #[test]
    fn stats_ignore_pixel_order() {
        let mut rng = Rng::new(3);
        let data: Vec<[f64; 3]> = (0..30).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect();
        let a = RasterImage::from_fn(6, 5, |x, y| data[y * 6 + x]);
        let perm = rng.permutation(30);
        let b = RasterImage::from_fn(6, 5, |x, y| data[perm[y * 6 + x]]);
        let (sa, sb) = (compute_patch_stats(&a), compute_patch_stats(&b));
        for i in 0..6 {
            assert!((sa[i] - sb[i]).abs() < 1e-12);
        }
    }

    fn paired_samples(n: usize, scanners: &[ScannerId], shift: f64) -> Vec<PairedImages> {
        let mut rng = Rng::new(1);
        (0..n)
            .map(|i| {
                let base = [rng.range(0.3, 0.7), rng.range(0.3, 0.7), rng.range(0.3, 0.7)];
                let tex = RasterImage::from_fn(8, 8, |x, y| {
                    let t = 0.1 * ((x * 3 + y * 5 + i) % 7) as f64 / 7.0;
                    [base[0] + t, base[1] - t, base[2] + 0.5 * t]
                });
                let patches = scanners
                    .iter()
                    .enumerate()
                    .map(|(j, k)| (k.clone(), tex.map_pixels(|p| [p[0] + shift * j as f64, p[1], p[2]])))
                    .collect();
                PairedImages { sample_id: format!("s{i}"), region_origin: [0, 0], patches, label: None }
            })
            .collect()
    }

    #[test]
    fn reference_rows_are_zero_and_shift_is_recovered() {
        let s = ids(&["A", "B"]);
        let samples = paired_samples(5, &s, 0.1);
        let dev = paired_deviations(&samples, &s, &s[0]).unwrap();
        assert_eq!(dev.len(), 10);
        for d in &dev {
            if d.scanner == s[0] {
                assert_eq!(d.delta, [0.0; 6]);
            } else {
                assert!((d.delta[0] - 0.1).abs() < 1e-9, "{:?}", d.delta);
            }
        }
    }

    #[test]
    fn re_referencing_is_idempotent() {
        let s = ids(&["A", "B", "C"]);
        let samples = paired_samples(4, &s, 0.05);
        let dev = paired_deviations(&samples, &s, &s[1]).unwrap();
        let as_stats: Vec<PatchStats> =
            dev.iter().map(|d| PatchStats { sample_id: d.sample_id.clone(), scanner: d.scanner.clone(), values: d.delta }).collect();
        let again = deviations_from_stats(&as_stats, &s[1]).unwrap();
        assert_eq!(again, dev);
    }

    #[test]
    fn missing_reference_errors() {
        let s = ids(&["A", "B", "C"]);
        let mut samples = paired_samples(2, &s, 0.05);
        samples[1].patches.remove(&s[0]);
        assert!(paired_deviations(&samples, &s, &s[0]).is_err());
    }

    #[test]
    fn collinear_points_project_onto_a_line() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| (0..6).map(|j| i as f64 * (j as f64 + 1.0) + 3.0).collect()).collect();
        for (_, y) in project_2d(&rows).unwrap() {
            assert!(y.abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_rows_project_identically() {
        let mut rng = Rng::new(4);
        let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| rng.uniform()).collect()).collect();
        let doubled: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
        let p = project_2d(&doubled).unwrap();
        for i in 0..8 {
            assert!((p[i].0 - p[i + 8].0).abs() < 1e-12 && (p[i].1 - p[i + 8].1).abs() < 1e-12);
        }
        assert!(project_2d(&rows[..1]).is_err());
    }

    /// Residual of reconstructing centred data from its projection onto an orthonormal basis.
    fn reconstruction_error(rows: &[Vec<f64>], basis: &[Vec<f64>]) -> f64 {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        rows.iter()
            .map(|r| {
                let c: Vec<f64> = r.iter().zip(&mean).map(|(a, m)| a - m).collect();
                let mut rec = vec![0.0; d];
                for b in basis {
                    let coef: f64 = c.iter().zip(b).map(|(x, y)| x * y).sum();
                    for j in 0..d {
                        rec[j] += coef * b[j];
                    }
                }
                c.iter().zip(&rec).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn pca_beats_random_projections() {
        let mut rng = Rng::new(8);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (u, v) = (rng.normal(), rng.normal() * 0.5);
                (0..6).map(|j| u * (j as f64 - 2.0) + v * (j % 2) as f64 + 0.05 * rng.normal()).collect()
            })
            .collect();
        let proj = project_2d(&rows).unwrap();
        // projection energy equals total energy minus reconstruction error
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..6).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let total: f64 = rows.iter().map(|r| r.iter().zip(&mean).map(|(a, m)| (a - m).powi(2)).sum::<f64>()).sum();
        let kept: f64 = proj.iter().map(|(x, y)| x * x + y * y).sum();
        let pca_err = total - kept;
        for _ in 0..50 {
            // Gram-Schmidt on two random directions
            let a: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let a: Vec<f64> = a.iter().map(|x| x / na).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let b: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - dot * y).collect();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            let b: Vec<f64> = b.iter().map(|x| x / nb).collect();
            assert!(pca_err <= reconstruction_error(&rows, &[a, b]) + 1e-9);
        }
    }

    #[test]
    fn separated_blobs_score_high() {
        let mut rng = Rng::new(1);
        let mut labels = Vec::new();
        let mut pts = Vec::new();
        for (l, c) in [(0, 0.0), (1, 10.0)] {
            for _ in 0..20 {
                labels.push(l);
                pts.push(vec![c + 0.1 * rng.normal(), c + 0.1 * rng.normal()]);
            }
        }
        assert!(silhouette(&labels, &pts).unwrap() > 0.9);
    }

    #[test]
    fn identical_distributions_score_near_zero() {
        let mut rng = Rng::new(2);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let s = silhouette(&labels, &pts).unwrap();
        assert!(s.abs() <= 0.1, "{s}");
    }

    #[test]
    fn singleton_groups_are_degenerate() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(silhouette(&[0, 1], &pts), Err(Error::DegenerateGroups(_))));
        assert!(matches!(silhouette(&[0, 0], &pts), Err(Error::DegenerateGroups(_))));
    }

    #[test]
    fn csv_layout() {
        let rows = vec![PatchStats { sample_id: "a".into(), scanner: ScannerId::new("AT2").unwrap(), values: [0.5; 6] }];
        let csv = stats_csv(&rows);
        assert!(csv.starts_with("sample_id,scanner,r_mean,r_std,g_mean,g_std,b_mean,b_std\na,AT2,0.500000"));
    }
}
