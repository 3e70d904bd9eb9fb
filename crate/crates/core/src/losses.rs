//! Per-sample surrogate losses and the two critic objectives.
//!
//! `ℓ_logistic(z, y) = −log softmax(z)_y / log|Y|` rewards agreement with the
//! pseudo-label `y`; `ℓ_dis(z, y) = log(1 + exp(z_y − mean_{k≠y} z_k)) / log 2`
//! rewards disagreement with it. Both are normalized so that they equal 1 at
//! uniform logits, and both are invariant to adding a constant to every logit.
//!
//! The objectives use a mean reduction inside each domain:
//!
//! ```text
//! L(h̄)    = mean_S ℓ_logistic(h̄(x), ĥ(x)) + mean_T        ℓ_dis(h̄(x), ĥ(x))
//! L(h̄, α) = mean_S ℓ_logistic(h̄(x), ĥ(x)) + mean_T s(x)₁ · ℓ_dis(h̄(x), ĥ(x))
//! ```

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::nn::Mlp;
use crate::overlap::OverlapWeights;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Logistic,
    Disagreement,
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_logits(logits: &[f64], y: usize) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::input(format!(
            "need at least 2 classes, got {}",
            logits.len()
        )));
    }
    if y >= logits.len() {
        return Err(Error::input(format!(
            "class {y} out of range for {} classes",
            logits.len()
        )));
    }
    Ok(())
}

pub fn logistic_loss(logits: &[f64], y: usize) -> Result<f64> {
    check_logits(logits, y)?;
    Ok(logistic_value(logits, y))
}

pub fn dis_loss(logits: &[f64], y: usize) -> Result<f64> {
    check_logits(logits, y)?;
    Ok(dis_value(logits, y))
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn logistic_value(logits: &[f64], y: usize) -> f64 {
    (log_sum_exp(logits) - logits[y]) / (logits.len() as f64).ln()
}

fn dis_margin(logits: &[f64], y: usize) -> f64 {
    let k = logits.len();
    let others = logits.iter().sum::<f64>() - logits[y];
    logits[y] - others / (k - 1) as f64
}

fn dis_value(logits: &[f64], y: usize) -> f64 {
    softplus(dis_margin(logits, y)) / std::f64::consts::LN_2
}

impl LossKind {
    /// Loss for one row; inputs are assumed validated.
    pub(crate) fn value(self, logits: &[f64], y: usize) -> f64 {
        match self {
            LossKind::Logistic => logistic_value(logits, y),
            LossKind::Disagreement => dis_value(logits, y),
        }
    }

    /// Loss for one row and its gradient with respect to the logits, written
    /// into `grad` (scaled by `scale`).
    pub(crate) fn value_and_grad(self, logits: &[f64], y: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let k = logits.len();
        match self {
            LossKind::Logistic => {
                let norm = (k as f64).ln();
                let lse = log_sum_exp(logits);
                for (g, z) in grad.iter_mut().zip(logits) {
                    *g = scale * (z - lse).exp() / norm;
                }
                grad[y] -= scale / norm;
                (lse - logits[y]) / norm
            }
            LossKind::Disagreement => {
                let margin = dis_margin(logits, y);
                let s = sigmoid(margin) / std::f64::consts::LN_2;
                let off = -scale * s / (k - 1) as f64;
                for g in grad.iter_mut() {
                    *g = off;
                }
                grad[y] = scale * s;
                softplus(margin) / std::f64::consts::LN_2
            }
        }
    }
}

fn check_rows(what: &'static str, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty(what));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Shape {
            what,
            expected: x.nrows(),
            found: labels.len(),
        });
    }
    Ok(())
}

fn weighted_mean_loss(
    model: &Mlp,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    kind: LossKind,
    weights: Option<&[f64]>,
) -> Result<f64> {
    let logits = model.forward(x)?;
    let mut total = 0.0;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let row = row.as_slice().expect("forward output is row-major");
        check_logits(row, labels[i])?;
        let w = weights.map_or(1.0, |w| w[i]);
        total += w * kind.value(row, labels[i]);
    }
    Ok(total / x.nrows() as f64)
}

/// Dis² critic objective: mean source log-loss against ĥ's pseudo-labels plus
/// mean target disagreement loss.
pub fn dis2_objective(
    critic: &Mlp,
    source_x: ArrayView2<'_, f64>,
    source_pseudo: &[usize],
    target_x: ArrayView2<'_, f64>,
    target_pseudo: &[usize],
) -> Result<f64> {
    check_rows("source set", source_x, source_pseudo)?;
    check_rows("target set", target_x, target_pseudo)?;
    let source = weighted_mean_loss(critic, source_x, source_pseudo, LossKind::Logistic, None)?;
    let target = weighted_mean_loss(critic, target_x, target_pseudo, LossKind::Disagreement, None)?;
    Ok(source + target)
}

/// ODD critic objective: the target disagreement loss of each row is scaled
/// by its non-overlap weight `s(x)₁`. With `discount_source` the source
/// log-loss is likewise scaled by `s(x)₀`.
#[allow(clippy::too_many_arguments)]
pub fn odd_objective(
    critic: &Mlp,
    source_x: ArrayView2<'_, f64>,
    source_pseudo: &[usize],
    target_x: ArrayView2<'_, f64>,
    target_pseudo: &[usize],
    weights: &OverlapWeights,
    discount_source: bool,
) -> Result<f64> {
    check_rows("source set", source_x, source_pseudo)?;
    check_rows("target set", target_x, target_pseudo)?;
    weights.check_aligned(source_x.nrows(), target_x.nrows())?;
    let source_w = discount_source.then_some(weights.source());
    let source = weighted_mean_loss(critic, source_x, source_pseudo, LossKind::Logistic, source_w)?;
    let target = weighted_mean_loss(
        critic,
        target_x,
        target_pseudo,
        LossKind::Disagreement,
        Some(weights.target()),
    )?;
    Ok(source + target)
}
