//! HOI probabilities and the distillation objective.
//!
//! The HOI score of class `(a, o)` for a candidate pair is the product of
//! the human confidence, the object confidence and Â(a), and zero for classes
//! of other objects. Training minimizes
//!
//! ```text
//! λ1 L(Ŷ, Y_gt) + λ2 L(Ŷ, Ŷ_proj) + λ3 L(Ŷ, Y_gt_proj)
//! ```
//!
//! where `L` is the mean soft-target binary cross-entropy over HOI classes
//! and the two teachers are HOI vectors built from projected action
//! vectors. The self-teacher `Ŷ_proj` is treated as a constant target.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::cooc::CoocBank;
use crate::corpus::{ActionSet, CandidatePair, LabelSpace};
use crate::error::{AcpError, Result};
use crate::projection::{project_weighted, ProjectionWeights};

/// Predictions are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// A vector over the M HOI classes.
#[derive(Clone, Debug, PartialEq)]
pub struct HoiProbs(pub Vec<f64>);

impl Deref for HoiProbs {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl LossWeights {
    /// Ground-truth term only.
    pub const GT_ONLY: LossWeights = LossWeights {
        lambda1: 1.0,
        lambda2: 0.0,
        lambda3: 0.0,
    };

    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = LossWeights { lambda1, lambda2, lambda3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda1, self.lambda2, self.lambda3];
        if l.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(AcpError::contract(format!("loss weights must be non-negative, got {l:?}")));
        }
        if l.iter().all(|&v| v == 0.0) {
            return Err(AcpError::contract("at least one loss weight must be positive"));
        }
        Ok(())
    }

    pub fn uses_teachers(&self) -> bool {
        self.lambda2 > 0.0 || self.lambda3 > 0.0
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.5,
            lambda3: 0.5,
        }
    }
}

/// `Ĥ · Ô · Â(a)` for every class `(a, object)`, zero elsewhere.
pub fn joint_hoi(h_conf: f64, o_conf: f64, a_probs: &[f64], object: usize, space: &LabelSpace) -> HoiProbs {
    let mut y = vec![0.0; space.n_classes()];
    let scale = h_conf * o_conf;
    for &m in space.classes_for_object(object) {
        y[m] = scale * a_probs[space.hoi_classes()[m].action];
    }
    HoiProbs(y)
}

/// Binary ground-truth HOI vector for a pair.
pub fn gt_hoi(pair: &CandidatePair, space: &LabelSpace) -> HoiProbs {
    let mut y = vec![0.0; space.n_classes()];
    for &a in &pair.gt_actions {
        if let Some(m) = space.class_of(a, pair.object) {
            y[m] = 1.0;
        }
    }
    HoiProbs(y)
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Mean soft-target binary cross-entropy.
pub fn bce(pred: &[f64], target: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    sum / pred.len() as f64
}

/// d bce / d pred. Zero where the clamp is active.
pub fn bce_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let m = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                0.0
            } else {
                (p - t) / (p * (1.0 - p)) / m
            }
        })
        .collect()
}

/// Projected teacher vectors for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherTargets {
    /// Ŷ projected through the predicted object's matrices.
    pub pred_proj: HoiProbs,
    /// Ground truth projected through the labeled object's matrices.
    pub gt_proj: HoiProbs,
    /// True if either object was missing from the bank.
    pub fallback: bool,
}

/// Teacher built from the prediction alone.
pub fn self_teacher(
    h_conf: f64,
    o_conf: f64,
    a_probs: &[f64],
    object: usize,
    bank: &CoocBank,
    w: ProjectionWeights,
    space: &LabelSpace,
) -> Result<(HoiProbs, bool)> {
    let (pair, fallback) = bank.for_object(object);
    let projected = project_weighted(a_probs, pair, w)?;
    Ok((joint_hoi(h_conf, o_conf, &projected, object, space), fallback))
}

/// Teacher built from the ground-truth action set with unit confidences.
pub fn gt_teacher(
    gt_actions: &ActionSet,
    gt_object: usize,
    bank: &CoocBank,
    w: ProjectionWeights,
    space: &LabelSpace,
) -> Result<(HoiProbs, bool)> {
    let mut a = vec![0.0; space.n_actions()];
    for &i in gt_actions {
        a[i] = 1.0;
    }
    let (pair, fallback) = bank.for_object(gt_object);
    let projected = project_weighted(&a, pair, w)?;
    Ok((joint_hoi(1.0, 1.0, &projected, gt_object, space), fallback))
}

#[allow(clippy::too_many_arguments)]
pub fn teacher_targets(
    h_conf: f64,
    o_conf: f64,
    a_probs: &[f64],
    gt_actions: &ActionSet,
    object: usize,
    bank: &CoocBank,
    w: ProjectionWeights,
    space: &LabelSpace,
) -> Result<TeacherTargets> {
    let (pred_proj, f1) = self_teacher(h_conf, o_conf, a_probs, object, bank, w, space)?;
    let (gt_proj, f2) = gt_teacher(gt_actions, object, bank, w, space)?;
    Ok(TeacherTargets {
        pred_proj,
        gt_proj,
        fallback: f1 || f2,
    })
}

/// The three weighted terms and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub gt: f64,
    pub teacher_pred: f64,
    pub teacher_gt: f64,
    /// Auxiliary anchor cross-entropy (multi-task only), included in `total`.
    pub anchor_aux: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.gt += other.gt;
        self.teacher_pred += other.teacher_pred;
        self.teacher_gt += other.teacher_gt;
        self.anchor_aux += other.anchor_aux;
    }

    pub fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * s,
            gt: self.gt * s,
            teacher_pred: self.teacher_pred * s,
            teacher_gt: self.teacher_gt * s,
            anchor_aux: self.anchor_aux * s,
        }
    }
}

/// λ1 L(Ŷ, Y_gt) + λ2 L(Ŷ, Ŷ_proj) + λ3 L(Ŷ, Y_gt_proj). The component
/// fields hold the unweighted BCE values.
pub fn total_loss(y_hat: &[f64], y_gt: &[f64], y_pred_proj: &[f64], y_gt_proj: &[f64], lw: LossWeights) -> LossBreakdown {
    let gt = bce(y_hat, y_gt);
    let teacher_pred = if lw.lambda2 > 0.0 { bce(y_hat, y_pred_proj) } else { 0.0 };
    let teacher_gt = if lw.lambda3 > 0.0 { bce(y_hat, y_gt_proj) } else { 0.0 };
    LossBreakdown {
        total: lw.lambda1 * gt + lw.lambda2 * teacher_pred + lw.lambda3 * teacher_gt,
        gt,
        teacher_pred,
        teacher_gt,
        anchor_aux: 0.0,
    }
}

/// d total_loss / dŶ with both teachers held constant.
pub fn total_loss_grad(y_hat: &[f64], y_gt: &[f64], y_pred_proj: &[f64], y_gt_proj: &[f64], lw: LossWeights) -> Vec<f64> {
    let mut g = vec![0.0; y_hat.len()];
    for (lambda, target) in [(lw.lambda1, y_gt), (lw.lambda2, y_pred_proj), (lw.lambda3, y_gt_proj)] {
        if lambda == 0.0 {
            continue;
        }
        for (acc, d) in g.iter_mut().zip(bce_grad(y_hat, target)) {
            *acc += lambda * d;
        }
    }
    g
}

/// Chains dL/dŶ back to dL/dÂ through the joint product.
pub fn hoi_grad_to_actions(d_y: &[f64], h_conf: f64, o_conf: f64, object: usize, space: &LabelSpace) -> Vec<f64> {
    let mut d_a = vec![0.0; space.n_actions()];
    let scale = h_conf * o_conf;
    for &m in space.classes_for_object(object) {
        d_a[space.hoi_classes()[m].action] += scale * d_y[m];
    }
    d_a
}

/// Per-pair objective and its gradient with respect to Â.
#[allow(clippy::too_many_arguments)]
pub fn pair_objective(
    pair: &CandidatePair,
    a_probs: &[f64],
    y_gt: &[f64],
    y_gt_proj: Option<&[f64]>,
    bank: &CoocBank,
    w: ProjectionWeights,
    lw: LossWeights,
    space: &LabelSpace,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let y_hat = joint_hoi(pair.human_conf, pair.object_conf, a_probs, pair.object, space);
    let pred_proj = if lw.lambda2 > 0.0 {
        self_teacher(pair.human_conf, pair.object_conf, a_probs, pair.object, bank, w, space)?.0
    } else {
        HoiProbs(Vec::new())
    };
    let gt_proj: &[f64] = match y_gt_proj {
        Some(t) => t,
        None if lw.lambda3 > 0.0 => {
            return Err(AcpError::contract("λ3 > 0 needs the projected ground-truth target"))
        }
        None => &[],
    };
    let losses = total_loss(&y_hat, y_gt, &pred_proj, gt_proj, lw);
    let d_y = total_loss_grad(&y_hat, y_gt, &pred_proj, gt_proj, lw);
    let d_a = hoi_grad_to_actions(&d_y, pair.human_conf, pair.object_conf, pair.object, space);
    Ok((losses, d_a))
}

/// Cross-entropy of the anchor softmax against a target distribution, and
/// its gradient with respect to the logits.
pub fn anchor_cross_entropy(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let loss = -logits.iter().zip(target).map(|(z, t)| t * (z - lse)).sum::<f64>();
    let t_sum: f64 = target.iter().sum();
    let grad = logits
        .iter()
        .zip(target)
        .map(|(z, t)| (z - lse).exp() * t_sum - t)
        .collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cooc::build_bank;
    use crate::corpus::fixtures::toy;

    fn toy_space() -> LabelSpace {
        toy().label_space().clone()
    }

    #[test]
    fn joint_product() {
        let space = toy_space();
        let y = joint_hoi(0.9, 0.8, &[0.5, 0.5, 0.5], 0, &space);
        assert!((y[0] - 0.36).abs() < 1e-15);
        let y = joint_hoi(0.5, 1.0, &[0.2, 0.5, 0.9], 0, &space);
        assert_eq!(y.0, vec![0.1, 0.25, 0.45]);
        let y = joint_hoi(1.0, 1.0, &[0.2, 0.5, 0.9], 0, &space);
        assert_eq!(y.0, vec![0.2, 0.5, 0.9]);
    }

    #[test]
    fn joint_is_zero_for_other_objects() {
        let space = LabelSpace::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![
                crate::corpus::HoiClass { action: 0, object: 0 },
                crate::corpus::HoiClass { action: 1, object: 1 },
            ],
        )
        .unwrap();
        let y = joint_hoi(1.0, 1.0, &[0.7, 0.9], 1, &space);
        assert_eq!(y.0, vec![0.0, 0.9]);
    }

    #[test]
    fn bce_values() {
        assert!((bce(&[0.5], &[1.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(&[1.0, 0.0], &[1.0, 0.0]) <= -(1.0f64 - 1e-7).ln() + 1e-18);
        assert!((bce(&[0.9, 0.1], &[1.0, 0.0]) - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        let pred = [0.3, 0.8, 0.55];
        let target = [0.2, 1.0, 0.0];
        let g = bce_grad(&pred, &target);
        for k in 0..3 {
            let h = 1e-6;
            let mut up = pred;
            up[k] += h;
            let mut down = pred;
            down[k] -= h;
            let fd = (bce(&up, &target) - bce(&down, &target)) / (2.0 * h);
            assert!((g[k] - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn one_hot_gt_teacher_row() {
        let c = toy();
        let space = c.label_space();
        let bank = build_bank(&c).unwrap();
        let w = ProjectionWeights::default();
        let gt: ActionSet = [1].into();
        let (t, fallback) = gt_teacher(&gt, 0, &bank, w, space).unwrap();
        assert!(!fallback);
        let p = &bank.per_object[&0];
        for j in 0..3 {
            let comp: f64 = (0..3).filter(|&k| k != 1).map(|k| p.c_comp(k, j)).sum();
            let expected = ((w.alpha * p.c(1, j) + w.beta * comp) / 3.0).clamp(0.0, 1.0);
            assert!((t[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn gt_teacher_on_marginals_is_a_fixed_point() {
        // soft "ground truth" equal to the empirical marginals
        let c = toy();
        let bank = build_bank(&c).unwrap();
        let marginal = [0.5, 0.5, 0.5];
        let out = project_weighted(&marginal, &bank.per_object[&0], ProjectionWeights::UNIT).unwrap();
        for (o, m) in out.iter().zip(marginal) {
            assert!((o - m).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_zero_and_empty_gt_annihilates() {
        let c = toy();
        let bank = build_bank(&c).unwrap();
        let w = ProjectionWeights::new(2.0, 0.0).unwrap();
        let (t, _) = gt_teacher(&ActionSet::new(), 0, &bank, w, c.label_space()).unwrap();
        assert_eq!(t.0, vec![0.0; 3]);
    }

    #[test]
    fn teacher_targets_flag_fallback() {
        let c = crate::corpus::fixtures::corpus(
            2,
            2,
            vec![vec![crate::corpus::fixtures::pair(0, &[0])]],
        );
        let bank = build_bank(&c).unwrap();
        let t = teacher_targets(0.9, 0.9, &[0.5, 0.5], &[0].into(), 1, &bank, ProjectionWeights::default(), c.label_space())
            .unwrap();
        assert!(t.fallback);
        let t = teacher_targets(0.9, 0.9, &[0.5, 0.5], &[0].into(), 0, &bank, ProjectionWeights::default(), c.label_space())
            .unwrap();
        assert!(!t.fallback);
    }

    #[test]
    fn total_loss_reductions() {
        let y = [0.3, 0.9];
        let gt = [0.0, 1.0];
        let tp = [0.2, 0.6];
        let tg = [0.1, 0.4];
        let l = total_loss(&y, &gt, &tp, &tg, LossWeights::GT_ONLY);
        assert_eq!(l.total, bce(&y, &gt));

        let self_l = total_loss(&y, &gt, &y, &tg, LossWeights::new(0.0, 1.0, 0.0).unwrap());
        assert_eq!(self_l.total, bce(&y, &y));

        let lw = LossWeights::new(1.0, 0.5, 0.5).unwrap();
        let l = total_loss(&y, &gt, &tp, &tg, lw);
        let by_hand = |p: [f64; 2], t: [f64; 2]| {
            (0..2)
                .map(|k| -(t[k] * p[k].ln() + (1.0 - t[k]) * (1.0 - p[k]).ln()))
                .sum::<f64>()
                / 2.0
        };
        let expected = by_hand(y, gt) + 0.5 * by_hand(y, tp) + 0.5 * by_hand(y, tg);
        assert!((l.total - expected).abs() < 1e-12);
        assert!((l.total - (l.gt + 0.5 * l.teacher_pred + 0.5 * l.teacher_gt)).abs() < 1e-12);
    }

    #[test]
    fn loss_weight_validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(1.0, -0.1, 0.0).is_err());
        assert!(LossWeights::new(0.0, 0.0, 1.0).is_ok());
    }

    #[test]
    fn anchor_cross_entropy_gradient() {
        let z = [0.3, -1.2, 2.0];
        let t = [0.0, 1.0, 0.0];
        let (l, g) = anchor_cross_entropy(&z, &t);
        let p = crate::predictor::softmax(&z);
        assert!((l + p[1].ln()).abs() < 1e-12);
        for k in 0..3 {
            assert!((g[k] - (p[k] - t[k])).abs() < 1e-12);
        }
    }
}
