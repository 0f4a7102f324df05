//! Projection of action probabilities through co-occurrence priors.
//!
//! For an action distribution `A`, the projected probability of action `j`
//! averages, over every conditioning action `i`, the law of total
//! probability `p(i) p(j|i) + p(not i) p(j|not i)`:
//!
//! ```text
//! A*(j) = (α Σ_i A(i) C[i][j] + β Σ_i (1 - A(i)) C'[i][j]) / N
//! ```
//!
//! With α = β = 1 this is the unweighted projection. Outputs are clamped to
//! `[0, 1]` since weighted projections can exceed one.

use serde::{Deserialize, Serialize};

use crate::cooc::{CoocBank, CoocPair};
use crate::error::{AcpError, Result};
use crate::predictor::ActionProbs;

/// Weights on the co-occurrence and complementary terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl ProjectionWeights {
    /// α = β = 1: the unweighted projection.
    pub const UNIT: ProjectionWeights = ProjectionWeights { alpha: 1.0, beta: 1.0 };

    /// Requires `alpha + beta = 2` and `alpha > beta >= 0`.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = ProjectionWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    /// Weights from α alone, with β = 2 − α.
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        Self::new(alpha, 2.0 - alpha)
    }

    pub fn validate(&self) -> Result<()> {
        let ProjectionWeights { alpha, beta } = *self;
        if *self == Self::UNIT {
            return Ok(());
        }
        if !(alpha.is_finite() && beta.is_finite()) || beta < 0.0 || alpha < 0.0 {
            return Err(AcpError::contract(format!(
                "projection weights must be non-negative, got α = {alpha}, β = {beta}"
            )));
        }
        if (alpha + beta - 2.0).abs() > 1e-12 {
            return Err(AcpError::contract(format!("α + β must be 2, got {}", alpha + beta)));
        }
        if alpha <= beta {
            return Err(AcpError::contract(format!("α must exceed β, got α = {alpha}, β = {beta}")));
        }
        Ok(())
    }
}

impl Default for ProjectionWeights {
    fn default() -> Self {
        ProjectionWeights { alpha: 1.5, beta: 0.5 }
    }
}

fn check_input(a: &[f64], pair: &CoocPair) -> Result<()> {
    if a.len() != pair.n() {
        return Err(AcpError::contract(format!(
            "probability vector has length {}, matrices are {n}x{n}",
            a.len(),
            n = pair.n()
        )));
    }
    if let Some(v) = a.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(AcpError::contract(format!("probability {v} outside [0, 1]")));
    }
    Ok(())
}

/// The weighted projection before clamping. Each entry lies in
/// `[0, max(α, β)]` for inputs in `[0, 1]`.
pub fn project_unclamped(a: &[f64], pair: &CoocPair, alpha: f64, beta: f64) -> Vec<f64> {
    let n = pair.n();
    let mut with = vec![0.0; n];
    let mut without = vec![0.0; n];
    for (i, &p) in a.iter().enumerate() {
        let q = 1.0 - p;
        for (acc, &c) in with.iter_mut().zip(pair.cooc_row(i)) {
            *acc += p * c;
        }
        for (acc, &c) in without.iter_mut().zip(pair.comp_row(i)) {
            *acc += q * c;
        }
    }
    let n = n as f64;
    with.iter()
        .zip(&without)
        .map(|(w, wo)| (alpha * w + beta * wo) / n)
        .collect()
}

fn clamp01(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect()
}

/// `(A C + (1 - A) C') / N`, clamped.
pub fn project(a: &[f64], pair: &CoocPair) -> Result<Vec<f64>> {
    check_input(a, pair)?;
    Ok(clamp01(project_unclamped(a, pair, 1.0, 1.0)))
}

/// `(α A C_o + β (1 - A) C'_o) / N`, clamped.
pub fn project_weighted(a: &[f64], pair: &CoocPair, w: ProjectionWeights) -> Result<Vec<f64>> {
    w.validate()?;
    check_input(a, pair)?;
    Ok(clamp01(project_unclamped(a, pair, w.alpha, w.beta)))
}

/// Replaces Â by its projection through the matrices of `object` (global
/// matrices for an object the bank has not seen). Auxiliary outputs are
/// kept as they are.
pub fn postprocess(probs: &ActionProbs, object: usize, bank: &CoocBank, w: ProjectionWeights) -> Result<ActionProbs> {
    let (pair, _fallback) = bank.for_object(object);
    Ok(ActionProbs {
        actions: project_weighted(&probs.actions, pair, w)?,
        anchor: probs.anchor.clone(),
        group_cond: probs.group_cond.clone(),
    })
}
