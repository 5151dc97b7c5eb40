//! Dice losses and the combined supervised + consistency objective.

use crate::augment::StyleAugmentation;
use crate::error::{Error, Result};
use crate::image::{LabelMask, ProbMap, RasterImage};
use crate::rng::Rng;

use super::model::Segmenter;

/// Smoothing added to numerator and denominator of every class term.
pub const DICE_EPS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DiceLoss {
    pub loss: f64,
    /// `dL/dp`, pixel-major.
    pub grad_p: Vec<f64>,
    /// `dL/dt`, pixel-major.
    pub grad_t: Vec<f64>,
}

fn check(p: &ProbMap, t: &ProbMap) -> Result<()> {
    if p.dims() != t.dims() || p.num_classes() != t.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "{:?}x{} vs {:?}x{}",
            p.dims(),
            p.num_classes(),
            t.dims(),
            t.num_classes()
        )));
    }
    Ok(())
}

/// `1 - mean_c (2 Σ p_c t_c + ε) / (Σ p_c + Σ t_c + ε)` with gradients for both arguments.
pub fn soft_dice_loss(p: &ProbMap, t: &ProbMap) -> Result<DiceLoss> {
    check(p, t)?;
    let k = p.num_classes();
    let (mut inter, mut sp, mut st) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for (a, b) in p.probs().chunks_exact(k).zip(t.probs().chunks_exact(k)) {
        for c in 0..k {
            inter[c] += a[c] * b[c];
            sp[c] += a[c];
            st[c] += b[c];
        }
    }
    let kf = k as f64;
    let mut loss = 1.0;
    let mut coef_cross = vec![0.0; k];
    let mut coef_const = vec![0.0; k];
    for c in 0..k {
        let num = 2.0 * inter[c] + DICE_EPS;
        let den = sp[c] + st[c] + DICE_EPS;
        loss -= num / den / kf;
        // d(num/den)/dp_ic = 2 t_ic / den - num / den^2
        coef_cross[c] = -2.0 / (den * kf);
        coef_const[c] = num / (den * den * kf);
    }
    let grad = |other: &ProbMap| -> Vec<f64> {
        other.probs().chunks_exact(k).flat_map(|o| (0..k).map(|c| coef_cross[c] * o[c] + coef_const[c]).collect::<Vec<_>>()).collect()
    };
    Ok(DiceLoss { loss, grad_p: grad(t), grad_t: grad(p) })
}

pub fn soft_dice_loss_mask(p: &ProbMap, target: &LabelMask) -> Result<DiceLoss> {
    soft_dice_loss(p, &target.one_hot())
}

/// Dice loss between two predictions, `1 - mean_c (2 Σ p q + ε) / (Σ p² + Σ q² + ε)`.
///
/// Agrees with [`soft_dice_loss`] whenever `q` is one-hot, and vanishes whenever `p == q`.
pub fn consistency_dice_loss(p: &ProbMap, q: &ProbMap) -> Result<DiceLoss> {
    check(p, q)?;
    let k = p.num_classes();
    let (mut inter, mut sp, mut sq) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for (a, b) in p.probs().chunks_exact(k).zip(q.probs().chunks_exact(k)) {
        for c in 0..k {
            inter[c] += a[c] * b[c];
            sp[c] += a[c] * a[c];
            sq[c] += b[c] * b[c];
        }
    }
    let kf = k as f64;
    let mut loss = 1.0;
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];
    for c in 0..k {
        num[c] = 2.0 * inter[c] + DICE_EPS;
        den[c] = sp[c] + sq[c] + DICE_EPS;
        loss -= num[c] / den[c] / kf;
    }
    // d(num/den)/dp = 2 q / den - num * 2 p / den^2
    let grad = |this: &ProbMap, other: &ProbMap| -> Vec<f64> {
        this.probs()
            .chunks_exact(k)
            .zip(other.probs().chunks_exact(k))
            .flat_map(|(a, b)| {
                (0..k).map(|c| -(2.0 * b[c] / den[c] - 2.0 * num[c] * a[c] / (den[c] * den[c])) / kf).collect::<Vec<_>>()
            })
            .collect()
    };
    Ok(DiceLoss { loss, grad_p: grad(p, q), grad_t: grad(q, p) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConsLoss {
    pub total: f64,
    pub supervised: f64,
    pub consistency: f64,
    pub grad: Vec<f64>,
}

/// Objective with a fixed style-altered input `x_sa`.
pub fn simcons_loss_with(model: &Segmenter, x: &RasterImage, y: &LabelMask, x_sa: &RasterImage, lambda: f64) -> Result<SimConsLoss> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be finite and >= 0")));
    }
    if x.dims() != y.dims() || x.dims() != x_sa.dims() {
        return Err(Error::DimensionMismatch("image, label and augmented image must share dimensions".into()));
    }
    let cache = model.forward_cached(x);
    let p = cache.prob_map(model.num_classes());
    let sup = soft_dice_loss_mask(&p, y)?;
    let cache_sa = model.forward_cached(x_sa);
    let p_sa = cache_sa.prob_map(model.num_classes());
    let cons = consistency_dice_loss(&p, &p_sa)?;

    let mut grad = vec![0.0; model.params().len()];
    if lambda == 0.0 {
        model.backward(&cache, &sup.grad_p, &mut grad);
    } else {
        let g: Vec<f64> = sup.grad_p.iter().zip(&cons.grad_p).map(|(s, c)| s + lambda * c).collect();
        model.backward(&cache, &g, &mut grad);
        let g_sa: Vec<f64> = cons.grad_t.iter().map(|c| lambda * c).collect();
        model.backward(&cache_sa, &g_sa, &mut grad);
    }
    Ok(SimConsLoss { total: sup.loss + lambda * cons.loss, supervised: sup.loss, consistency: cons.loss, grad })
}

/// Supervised Dice on `F(x)` plus `lambda` times the consistency Dice between
/// `F(x)` and `F(SA(x))`. Gradients flow through both branches.
pub fn simcons_loss(
    model: &Segmenter,
    x: &RasterImage,
    y: &LabelMask,
    sa: &dyn StyleAugmentation,
    lambda: f64,
    rng: &mut Rng,
) -> Result<SimConsLoss> {
    let x_sa = sa.apply(x, rng);
    simcons_loss_with(model, x, y, &x_sa, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{IdentitySa, FdaParams, fda_transfer};

    fn random_probs(w: usize, h: usize, k: usize, rng: &mut Rng) -> ProbMap {
        let mut v = Vec::new();
        for _ in 0..w * h {
            let e: Vec<f64> = (0..k).map(|_| rng.range(0.05, 1.0)).collect();
            let s: f64 = e.iter().sum();
            v.extend(e.iter().map(|x| x / s));
        }
        ProbMap::new(w, h, k, v).unwrap()
    }

    fn random_mask(w: usize, h: usize, k: usize, rng: &mut Rng) -> LabelMask {
        LabelMask::from_fn(w, h, k, |_, _| rng.below(k) as u8).unwrap()
    }

    fn random_image(w: usize, h: usize, rng: &mut Rng) -> RasterImage {
        RasterImage::from_fn(w, h, |_, _| [rng.uniform(), rng.uniform(), rng.uniform()])
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let mut rng = Rng::new(1);
        let y = random_mask(8, 8, 3, &mut rng);
        let l = soft_dice_loss_mask(&y.one_hot(), &y).unwrap();
        assert!(l.loss.abs() <= DICE_EPS / (64.0 + DICE_EPS));
    }

    #[test]
    fn uniform_prediction_against_half_mask() {
        // binary target on half of 8x8 pixels, p = 0.5 everywhere
        let y = LabelMask::from_fn(8, 8, 2, |x, _| (x < 4) as u8).unwrap();
        let p = ProbMap::uniform(8, 8, 2);
        let l = soft_dice_loss_mask(&p, &y).unwrap();
        // per class: inter = 32 * 0.5 = 16, sum p = 32, sum t = 32
        let term = (2.0 * 16.0 + 1.0) / (32.0 + 32.0 + 1.0);
        assert!((l.loss - (1.0 - term)).abs() < 1e-15);
    }

    fn fd_check(f: impl Fn(&ProbMap, &ProbMap) -> DiceLoss, p: &ProbMap, t: &ProbMap) {
        let l = f(p, t);
        let h = 1e-4;
        let perturb = |m: &ProbMap, i: usize, d: f64| {
            let mut v = m.probs().to_vec();
            v[i] += d;
            ProbMap::new_unchecked(m.width(), m.height(), m.num_classes(), v)
        };
        for i in 0..p.probs().len() {
            let fd_p = (f(&perturb(p, i, h), t).loss - f(&perturb(p, i, -h), t).loss) / (2.0 * h);
            let fd_t = (f(p, &perturb(t, i, h)).loss - f(p, &perturb(t, i, -h)).loss) / (2.0 * h);
            for (fd, an) in [(fd_p, l.grad_p[i]), (fd_t, l.grad_t[i])] {
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel <= 1e-3, "entry {i}: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn dice_gradients_match_finite_differences() {
        let mut rng = Rng::new(2);
        let p = random_probs(5, 4, 3, &mut rng);
        let t = random_probs(5, 4, 3, &mut rng);
        fd_check(|a, b| soft_dice_loss(a, b).unwrap(), &p, &t);
        fd_check(|a, b| consistency_dice_loss(a, b).unwrap(), &p, &t);
    }

    #[test]
    fn consistency_loss_properties() {
        let mut rng = Rng::new(3);
        let p = random_probs(6, 6, 3, &mut rng);
        assert!(consistency_dice_loss(&p, &p).unwrap().loss.abs() < 1e-12);
        // the two forms differ only through sum p^2 vs sum p, so they agree on hard maps
        let y = random_mask(6, 6, 3, &mut rng).one_hot();
        let hard = random_mask(6, 6, 3, &mut rng).one_hot();
        let (a, b) = (consistency_dice_loss(&hard, &y).unwrap().loss, soft_dice_loss(&hard, &y).unwrap().loss);
        assert!((a - b).abs() < 1e-12);
        assert!(consistency_dice_loss(&p, &y).unwrap().loss > 0.0);
    }

    #[test]
    fn mismatched_shapes_error() {
        assert!(soft_dice_loss(&ProbMap::uniform(4, 4, 2), &ProbMap::uniform(4, 5, 2)).is_err());
        assert!(soft_dice_loss(&ProbMap::uniform(4, 4, 2), &ProbMap::uniform(4, 4, 3)).is_err());
    }

    #[test]
    fn zero_lambda_total_equals_supervised() {
        let mut rng = Rng::new(4);
        let m = Segmenter::init(3, &mut rng);
        let x = random_image(8, 8, &mut rng);
        let x_sa = random_image(8, 8, &mut rng);
        let y = random_mask(8, 8, 3, &mut rng);
        let l = simcons_loss_with(&m, &x, &y, &x_sa, 0.0).unwrap();
        assert_eq!(l.total, l.supervised);
        assert!(l.consistency > 0.0);
        let l1 = simcons_loss_with(&m, &x, &y, &x_sa, 1.5).unwrap();
        assert_eq!(l1.total, l1.supervised + 1.5 * l1.consistency);
    }

    #[test]
    fn identity_sa_has_zero_consistency() {
        let mut rng = Rng::new(5);
        let m = Segmenter::init(3, &mut rng);
        let x = random_image(8, 8, &mut rng);
        let y = random_mask(8, 8, 3, &mut rng);
        let l = simcons_loss(&m, &x, &y, &IdentitySa, 1.0, &mut rng).unwrap();
        assert!(l.consistency.abs() <= 1e-9);
    }

    #[test]
    fn negative_lambda_rejected() {
        let mut rng = Rng::new(6);
        let m = Segmenter::init(2, &mut rng);
        let x = random_image(5, 5, &mut rng);
        let y = random_mask(5, 5, 2, &mut rng);
        assert!(simcons_loss_with(&m, &x, &y, &x, -0.1).is_err());
    }

    /// Central differences of the total loss over every parameter.
    pub(crate) fn max_relative_error(m: &Segmenter, x: &RasterImage, y: &LabelMask, x_sa: &RasterImage, lambda: f64) -> f64 {
        let l = simcons_loss_with(m, x, y, x_sa, lambda).unwrap();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..l.grad.len() {
            let mut plus = m.clone();
            plus.params_mut()[i] += h;
            let mut minus = m.clone();
            minus.params_mut()[i] -= h;
            let fd = (simcons_loss_with(&plus, x, y, x_sa, lambda).unwrap().total
                - simcons_loss_with(&minus, x, y, x_sa, lambda).unwrap().total)
                / (2.0 * h);
            let rel = (fd - l.grad[i]).abs() / fd.abs().max(l.grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let m = Segmenter::init(3, &mut rng);
        let x = random_image(7, 6, &mut rng);
        let y = random_mask(7, 6, 3, &mut rng);
        let style = random_image(7, 6, &mut rng);
        let x_sa = fda_transfer(&x, &style, &FdaParams { beta: 0.3 }).unwrap();
        for lambda in [0.0, 1.0] {
            let e = max_relative_error(&m, &x, &y, &x_sa, lambda);
            assert!(e <= 1e-3, "lambda {lambda}: {e}");
        }
    }
}
