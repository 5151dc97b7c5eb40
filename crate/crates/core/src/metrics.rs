//! Dice scoring and the inter-scanner consistency protocol.
//!
//! For every unordered scanner pair the protocol takes the macro Dice between
//! hard predictions on the two patches of each sample, averages over samples,
//! and summarizes the pair scores by their mean and minimum.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LabelMask, ProbMap, RasterImage};
use crate::manifest::{DatasetManifest, PairedImages, ScannerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    /// `None` where the class is absent from both masks.
    pub per_class: Vec<Option<f64>>,
    /// Mean over defined classes.
    pub macro_avg: f64,
}

pub fn dice(a: &LabelMask, b: &LabelMask) -> Result<DiceScore> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!("masks {:?} vs {:?}", a.dims(), b.dims())));
    }
    if a.num_classes() != b.num_classes() {
        return Err(Error::DimensionMismatch(format!("{} vs {} classes", a.num_classes(), b.num_classes())));
    }
    let k = a.num_classes();
    let mut count_a = vec![0u64; k];
    let mut count_b = vec![0u64; k];
    let mut both = vec![0u64; k];
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        count_a[la as usize] += 1;
        count_b[lb as usize] += 1;
        if la == lb {
            both[la as usize] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let denom = count_a[c] + count_b[c];
            (denom > 0).then(|| 2.0 * both[c] as f64 / denom as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    // every pixel carries some class, so at least one class is defined
    let macro_avg = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(DiceScore { per_class, macro_avg })
}

/// Soft Dice between probability maps, macro over classes with non-zero mass.
pub fn soft_dice(p: &ProbMap, q: &ProbMap) -> Result<f64> {
    if p.dims() != q.dims() || p.num_classes() != q.num_classes() {
        return Err(Error::DimensionMismatch("probability maps differ in shape".into()));
    }
    let k = p.num_classes();
    let (mut inter, mut sp, mut sq) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for (a, b) in p.probs().chunks_exact(k).zip(q.probs().chunks_exact(k)) {
        for c in 0..k {
            inter[c] += a[c] * b[c];
            sp[c] += a[c];
            sq[c] += b[c];
        }
    }
    let vals: Vec<f64> = (0..k).filter(|&c| sp[c] + sq[c] > 0.0).map(|c| 2.0 * inter[c] / (sp[c] + sq[c])).collect();
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn hard_mask(p: &ProbMap) -> LabelMask {
    let k = p.num_classes();
    let labels = p
        .probs()
        .chunks_exact(k)
        .map(|px| {
            let mut best = 0;
            for c in 1..k {
                if px[c] > px[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::new(p.width(), p.height(), k, labels).expect("argmax is a valid label")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub scanner_a: ScannerId,
    pub scanner_b: ScannerId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBreakdown {
    pub sample_id: String,
    /// Aligned with [`ConsistencyReport::pairs`].
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub scanners: Vec<ScannerId>,
    pub pairs: Vec<PairScore>,
    pub avg: f64,
    pub min: f64,
    pub per_sample: Vec<SampleBreakdown>,
}

impl ConsistencyReport {
    /// Symmetric matrix in scanner order with a unit diagonal.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let n = self.scanners.len();
        let index: BTreeMap<&ScannerId, usize> = self.scanners.iter().enumerate().map(|(i, s)| (s, i)).collect();
        let mut m = vec![vec![1.0; n]; n];
        for p in &self.pairs {
            let (i, j) = (index[&p.scanner_a], index[&p.scanner_b]);
            m[i][j] = p.score;
            m[j][i] = p.score;
        }
        m
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `scanner_a,scanner_b,score` rows under a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scanner_a,scanner_b,score\n");
        for p in &self.pairs {
            writeln!(s, "{},{},{:.6}", p.scanner_a, p.scanner_b, p.score).unwrap();
        }
        s
    }
}

/// Hard masks of one sample, keyed by scanner.
#[derive(Debug, Clone)]
pub struct SamplePredictions {
    pub sample_id: String,
    pub masks: BTreeMap<ScannerId, LabelMask>,
}

/// Aggregates hard predictions into a report; `scanners` fixes the pair order.
pub fn consistency_from_predictions(scanners: &[ScannerId], samples: &[SamplePredictions]) -> Result<ConsistencyReport> {
    if scanners.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 scanners".into()));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate".into()));
    }
    let pairs: Vec<(usize, usize)> =
        (0..scanners.len()).flat_map(|i| (i + 1..scanners.len()).map(move |j| (i, j))).collect();
    let mut per_sample = Vec::with_capacity(samples.len());
    for s in samples {
        let get = |k: &ScannerId| {
            s.masks.get(k).ok_or_else(|| Error::MissingPatch { sample: s.sample_id.clone(), scanner: k.to_string() })
        };
        let scores = pairs
            .iter()
            .map(|&(i, j)| Ok(dice(get(&scanners[i])?, get(&scanners[j])?)?.macro_avg))
            .collect::<Result<Vec<f64>>>()?;
        per_sample.push(SampleBreakdown { sample_id: s.sample_id.clone(), scores });
    }
    let n = per_sample.len() as f64;
    let pair_scores: Vec<PairScore> = pairs
        .iter()
        .enumerate()
        .map(|(p, &(i, j))| PairScore {
            scanner_a: scanners[i].clone(),
            scanner_b: scanners[j].clone(),
            score: per_sample.iter().map(|s| s.scores[p]).sum::<f64>() / n,
        })
        .collect();
    let avg = pair_scores.iter().map(|p| p.score).sum::<f64>() / pair_scores.len() as f64;
    let min = pair_scores.iter().map(|p| p.score).fold(f64::INFINITY, f64::min);
    Ok(ConsistencyReport { scanners: scanners.to_vec(), pairs: pair_scores, avg, min, per_sample })
}

fn predict_masks<F>(sample: &PairedImages, scanners: &[ScannerId], predictor: &F) -> Result<SamplePredictions>
where
    F: Fn(&RasterImage) -> Result<ProbMap> + Sync,
{
    let mut masks = BTreeMap::new();
    for k in scanners {
        let img = sample.patch(k)?;
        let p = predictor(img)?;
        if p.dims() != img.dims() {
            return Err(Error::DimensionMismatch(format!(
                "predictor returned {:?} for a {:?} patch",
                p.dims(),
                img.dims()
            )));
        }
        masks.insert(k.clone(), hard_mask(&p));
    }
    Ok(SamplePredictions { sample_id: sample.sample_id.clone(), masks })
}

/// Protocol over in-memory paired samples. `parallel` evaluates samples on the
/// current rayon pool; output does not depend on it.
pub fn consistency_of_paired<F>(scanners: &[ScannerId], samples: &[PairedImages], predictor: &F, parallel: bool) -> Result<ConsistencyReport>
where
    F: Fn(&RasterImage) -> Result<ProbMap> + Sync,
{
    let preds: Vec<SamplePredictions> = if parallel {
        samples.par_iter().map(|s| predict_masks(s, scanners, predictor)).collect::<Result<_>>()?
    } else {
        samples.iter().map(|s| predict_masks(s, scanners, predictor)).collect::<Result<_>>()?
    };
    consistency_from_predictions(scanners, &preds)
}

/// Protocol over a manifest; patches are loaded per sample.
pub fn consistency_protocol<F>(manifest: &DatasetManifest, predictor: &F, parallel: bool) -> Result<ConsistencyReport>
where
    F: Fn(&RasterImage) -> Result<ProbMap> + Sync,
{
    let run = |s: &crate::manifest::PairedSample| -> Result<SamplePredictions> {
        for k in &manifest.scanners {
            if !s.patches.contains_key(k) {
                return Err(Error::MissingPatch { sample: s.sample_id.clone(), scanner: k.to_string() });
            }
        }
        predict_masks(&manifest.load_sample(s)?, &manifest.scanners, predictor)
    };
    let preds: Vec<SamplePredictions> = if parallel {
        manifest.samples.par_iter().map(run).collect::<Result<_>>()?
    } else {
        manifest.samples.iter().map(run).collect::<Result<_>>()?
    };
    consistency_from_predictions(&manifest.scanners, &preds)
}

/// Mean macro Dice of hard predictions against ground truth.
pub fn primary_dice<F>(samples: &[(RasterImage, LabelMask)], predictor: &F) -> Result<f64>
where
    F: Fn(&RasterImage) -> Result<ProbMap>,
{
    if samples.is_empty() {
        return Err(Error::EmptyInput("no labeled samples".into()));
    }
    let mut total = 0.0;
    for (img, label) in samples {
        total += dice(&hard_mask(&predictor(img)?), label)?.macro_avg;
    }
    Ok(total / samples.len() as f64)
}

/// Primary Dice over paired samples that carry labels, using one scanner's patches.
pub fn primary_dice_paired<F>(samples: &[PairedImages], scanner: &ScannerId, predictor: &F) -> Result<f64>
where
    F: Fn(&RasterImage) -> Result<ProbMap>,
{
    let labeled = samples
        .iter()
        .map(|s| {
            let label = s.label.clone().ok_or_else(|| Error::MissingLabel(s.sample_id.clone()))?;
            Ok((s.patch(scanner)?.clone(), label))
        })
        .collect::<Result<Vec<_>>>()?;
    primary_dice(&labeled, predictor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, k: usize, labels: &[u8]) -> LabelMask {
        LabelMask::new(w, h, k, labels.to_vec()).unwrap()
    }

    /// Set-based Dice, written without the counting shortcut.
    fn oracle_dice(a: &LabelMask, b: &LabelMask) -> (Vec<Option<f64>>, f64) {
        let per: Vec<Option<f64>> = (0..a.num_classes() as u8)
            .map(|c| {
                let sa: Vec<usize> = (0..a.labels().len()).filter(|&i| a.labels()[i] == c).collect();
                let sb: Vec<usize> = (0..b.labels().len()).filter(|&i| b.labels()[i] == c).collect();
                let inter = sa.iter().filter(|i| sb.contains(i)).count();
                if sa.is_empty() && sb.is_empty() {
                    None
                } else {
                    Some(2.0 * inter as f64 / (sa.len() + sb.len()) as f64)
                }
            })
            .collect();
        let d: Vec<f64> = per.iter().flatten().copied().collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        (per, m)
    }

    #[test]
    fn identical_masks_score_one() {
        let a = mask(3, 1, 3, &[0, 1, 2]);
        let d = dice(&a, &a).unwrap();
        assert_eq!(d.per_class, vec![Some(1.0); 3]);
        assert_eq!(d.macro_avg, 1.0);
    }

    #[test]
    fn half_overlap_binary() {
        // |a| = 4, |b| = 4, overlap 2 on class 1
        let a = mask(8, 1, 2, &[1, 1, 1, 1, 0, 0, 0, 0]);
        let b = mask(8, 1, 2, &[0, 0, 1, 1, 1, 1, 0, 0]);
        let d = dice(&a, &b).unwrap();
        assert_eq!(d.per_class[1], Some(0.5));
        assert_eq!(oracle_dice(&a, &b).0[1], Some(0.5));
    }

    #[test]
    fn absent_class_is_excluded() {
        let a = mask(4, 1, 3, &[0, 0, 1, 1]);
        let b = mask(4, 1, 3, &[0, 1, 1, 1]);
        let d = dice(&a, &b).unwrap();
        assert_eq!(d.per_class[2], None);
        let want = (2.0 / 3.0 + 0.8) / 2.0;
        assert!((d.macro_avg - want).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_errors() {
        assert!(dice(&mask(2, 1, 2, &[0, 1]), &mask(1, 2, 2, &[0, 1])).is_err());
        assert!(dice(&mask(2, 1, 2, &[0, 1]), &mask(2, 1, 3, &[0, 1])).is_err());
    }

    #[test]
    fn hard_mask_rules() {
        let onehot = mask(3, 1, 3, &[2, 0, 1]).one_hot();
        assert_eq!(hard_mask(&onehot).labels(), &[2, 0, 1]);
        assert!(hard_mask(&ProbMap::uniform(4, 4, 3)).labels().iter().all(|&l| l == 0));
        let p = ProbMap::new(2, 1, 2, vec![0.49, 0.51, 0.49, 0.51]).unwrap();
        assert_eq!(hard_mask(&p).labels(), &[1, 1]);
    }

    fn ids(n: usize) -> Vec<ScannerId> {
        (0..n).map(|i| ScannerId::new(format!("S{i}")).unwrap()).collect()
    }

    fn paired(scanners: &[ScannerId], n: usize) -> Vec<PairedImages> {
        (0..n)
            .map(|i| PairedImages {
                sample_id: format!("s{i}"),
                region_origin: [0, 0],
                patches: scanners
                    .iter()
                    .enumerate()
                    .map(|(j, k)| (k.clone(), RasterImage::filled(4, 4, [0.1 * j as f64, 0.5, 0.1 * i as f64])))
                    .collect(),
                label: None,
            })
            .collect()
    }

    #[test]
    fn five_scanners_give_ten_pairs() {
        let s = ids(5);
        let constant = |img: &RasterImage| Ok(ProbMap::uniform(img.width(), img.height(), 3));
        let r = consistency_of_paired(&s, &paired(&s, 3), &constant, false).unwrap();
        assert_eq!(r.pairs.len(), 10);
        assert_eq!((r.avg, r.min), (1.0, 1.0));
        let s3 = ids(3);
        assert_eq!(consistency_of_paired(&s3, &paired(&s3, 2), &constant, true).unwrap().pairs.len(), 3);
    }

    #[test]
    fn hand_built_half_dice_pair() {
        let s = ids(2);
        let a = mask(8, 1, 2, &[1, 1, 1, 1, 0, 0, 0, 0]);
        let b = mask(8, 1, 2, &[0, 0, 1, 1, 1, 1, 0, 0]);
        let preds = vec![SamplePredictions {
            sample_id: "x".into(),
            masks: BTreeMap::from([(s[0].clone(), a.clone()), (s[1].clone(), b.clone())]),
        }];
        let r = consistency_from_predictions(&s, &preds).unwrap();
        let want = oracle_dice(&a, &b).1;
        assert_eq!(want, 0.5);
        assert_eq!((r.avg, r.min), (want, want));
        assert_eq!(r.matrix()[0][1], 0.5);
        assert!(r.to_csv().starts_with("scanner_a,scanner_b,score\nS0,S1,0.500000\n"));
    }

    #[test]
    fn missing_patch_and_bad_predictor_size() {
        let s = ids(3);
        let mut samples = paired(&s, 1);
        samples[0].patches.remove(&s[2]);
        let constant = |img: &RasterImage| Ok(ProbMap::uniform(img.width(), img.height(), 2));
        assert!(matches!(consistency_of_paired(&s, &samples, &constant, false), Err(Error::MissingPatch { .. })));
        let wrong = |_: &RasterImage| Ok(ProbMap::uniform(2, 2, 2));
        assert!(consistency_of_paired(&s, &paired(&s, 1), &wrong, false).is_err());
    }

    #[test]
    fn primary_dice_extremes() {
        let truth = mask(4, 1, 2, &[0, 1, 1, 0]);
        let img = RasterImage::filled(4, 1, [0.5; 3]);
        let set = vec![(img, truth.clone())];
        let perfect = |_: &RasterImage| Ok(truth.one_hot());
        assert_eq!(primary_dice(&set, &perfect).unwrap(), 1.0);
        let complement = mask(4, 1, 2, &[1, 0, 0, 1]);
        let wrong = |_: &RasterImage| Ok(complement.one_hot());
        assert_eq!(primary_dice(&set, &wrong).unwrap(), 0.0);
    }

    #[test]
    fn primary_dice_known_confusion() {
        let t1 = mask(4, 1, 2, &[1, 1, 0, 0]);
        let p1 = mask(4, 1, 2, &[1, 0, 0, 0]);
        let t2 = mask(3, 1, 3, &[2, 2, 1]);
        let p2 = mask(3, 1, 3, &[2, 1, 1]);
        let img1 = RasterImage::filled(4, 1, [0.0; 3]);
        let img2 = RasterImage::filled(3, 1, [1.0; 3]);
        let set = vec![(img1, t1.clone()), (img2, t2.clone())];
        let pred = |img: &RasterImage| Ok(if img.width() == 4 { p1.one_hot() } else { p2.one_hot() });
        let want = (oracle_dice(&p1, &t1).1 + oracle_dice(&p2, &t2).1) / 2.0;
        assert!((primary_dice(&set, &pred).unwrap() - want).abs() < 1e-15);
    }

    fn arb_pair() -> impl Strategy<Value = (LabelMask, LabelMask)> {
        (1usize..=16, 1usize..=16, 2usize..=4).prop_flat_map(|(w, h, k)| {
            let labels = proptest::collection::vec(0..k as u8, w * h);
            (labels.clone(), labels).prop_map(move |(a, b)| (mask(w, h, k, &a), mask(w, h, k, &b)))
        })
    }

    proptest! {
        #[test]
        fn dice_matches_oracle_and_is_symmetric((a, b) in arb_pair()) {
            let d = dice(&a, &b).unwrap();
            let (per, m) = oracle_dice(&a, &b);
            prop_assert_eq!(&d.per_class, &per);
            prop_assert_eq!(d.macro_avg, m);
            prop_assert_eq!(dice(&b, &a).unwrap(), d);
        }

        #[test]
        fn min_le_avg_and_order_invariant(seed in any::<u64>(), n in 2usize..6) {
            let s = ids(n);
            let samples = paired(&s, 3);
            let predictor = move |img: &RasterImage| {
                let mut rng = crate::Rng::new(seed ^ (img.get(0, 0)[0] * 1000.0) as u64 ^ (img.get(0, 0)[2] * 1e6) as u64);
                let labels = (0..img.num_pixels()).map(|_| rng.below(3) as u8).collect();
                Ok(LabelMask::new(img.width(), img.height(), 3, labels)?.one_hot())
            };
            let r = consistency_of_paired(&s, &samples, &predictor, false).unwrap();
            prop_assert!(r.min <= r.avg && r.avg <= 1.0);
            let mut rev = s.clone();
            rev.reverse();
            let r2 = consistency_of_paired(&rev, &samples, &predictor, false).unwrap();
            prop_assert!((r.avg - r2.avg).abs() < 1e-12);
            prop_assert_eq!(r.min, r2.min);
        }
    }
}
