//! Discrepancies, the concentration term, and bound reports.
//!
//! With per-row non-overlap weights `w` (1 = outside the overlap region) and
//! the disagreement indicator `δ(x) = 1{argmax h(x) ≠ argmax h'(x)}`:
//!
//! ```text
//! Δ(h, h')     = mean_T δ           − mean_S δ
//! Δ(h, h', α)  = mean_T w_T · δ      − mean_S w_S · δ
//! Δ̲(h, h', α)  = mean_T (1 − w_T) δ  − mean_S (1 − w_S) δ
//! ```
//!
//! so `Δ = Δ(α) + Δ̲(α)` for any weights. The accuracy lower bound is
//! `acc_S(ĥ) − Δ_selected − √((n_S + 4 n_T) ln(1/δ) / (2 n_S n_T))`.

use serde::{Deserialize, Serialize};

use crate::critic::CriticResult;
use crate::data::{Dataset, DatasetPair};
use crate::nn::Mlp;
use crate::overlap::{OverlapWeights, WeightMode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscrepancyMode {
    #[default]
    Full,
    NonoverlapSoft,
    NonoverlapHard,
}

impl std::str::FromStr for DiscrepancyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(DiscrepancyMode::Full),
            "nonoverlap-soft" => Ok(DiscrepancyMode::NonoverlapSoft),
            "nonoverlap-hard" => Ok(DiscrepancyMode::NonoverlapHard),
            other => Err(Error::config(format!("unknown discrepancy mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundConvention {
    ErrorBound,
    #[default]
    AccuracyLowerBound,
}

/// How source rows are weighted in the non-overlap discrepancy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceWeighting {
    /// `s(x)₀` (soft) or `1{argmax d(x) = 0}` (hard).
    #[default]
    DomainClassifier,
    /// Every source row counts as non-overlapping.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub delta: f64,
    pub mode: DiscrepancyMode,
    pub convention: BoundConvention,
    pub source_weighting: SourceWeighting,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            delta: 0.01,
            mode: DiscrepancyMode::Full,
            convention: BoundConvention::AccuracyLowerBound,
            source_weighting: SourceWeighting::DomainClassifier,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }
}

fn check_same_len(a: &[usize], b: &[usize]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Empty("prediction set"));
    }
    if a.len() != b.len() {
        return Err(Error::Shape {
            what: "predictions",
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}

/// `(1/n) Σ wᵢ · 1{aᵢ ≠ bᵢ}`; unweighted when `weights` is `None`.
pub fn disagreement_rate(a: &[usize], b: &[usize], weights: Option<&[f64]>) -> Result<f64> {
    check_same_len(a, b)?;
    let total = match weights {
        None => a.iter().zip(b).filter(|(x, y)| x != y).count() as f64,
        Some(w) => {
            if w.len() != a.len() {
                return Err(Error::Shape {
                    what: "disagreement weights",
                    expected: a.len(),
                    found: w.len(),
                });
            }
            a.iter()
                .zip(b)
                .zip(w)
                .map(|((x, y), w)| if x != y { *w } else { 0.0 })
                .sum()
        }
    };
    Ok(total / a.len() as f64)
}

/// Disagreement of two models on `x`.
pub fn disagreement(h: &Mlp, h_prime: &Mlp, x: ndarray::ArrayView2<'_, f64>, weights: Option<&[f64]>) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::Empty("input set"));
    }
    disagreement_rate(&h.predict(x)?, &h_prime.predict(x)?, weights)
}

/// Target minus source weighted disagreement from precomputed predictions.
pub fn weighted_discrepancy(
    h_source: &[usize],
    h2_source: &[usize],
    h_target: &[usize],
    h2_target: &[usize],
    weights: Option<&OverlapWeights>,
) -> Result<f64> {
    let t = disagreement_rate(h_target, h2_target, weights.map(|w| w.target()))?;
    let s = disagreement_rate(h_source, h2_source, weights.map(|w| w.source()))?;
    Ok(t - s)
}

/// Predictions of both models on both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPredictions {
    pub h_source: Vec<usize>,
    pub h_target: Vec<usize>,
    pub h2_source: Vec<usize>,
    pub h2_target: Vec<usize>,
}

impl PairPredictions {
    pub fn compute(h: &Mlp, h_prime: &Mlp, pair: &DatasetPair) -> Result<Self> {
        if pair.source.n() == 0 || pair.target.n() == 0 {
            return Err(Error::Empty("domain"));
        }
        Ok(Self {
            h_source: h.predict(pair.source.x())?,
            h_target: h.predict(pair.target.x())?,
            h2_source: h_prime.predict(pair.source.x())?,
            h2_target: h_prime.predict(pair.target.x())?,
        })
    }

    pub fn dis2(&self) -> Result<f64> {
        weighted_discrepancy(&self.h_source, &self.h2_source, &self.h_target, &self.h2_target, None)
    }

    pub fn odd(&self, weights: &OverlapWeights) -> Result<f64> {
        weights.check_aligned(self.h_source.len(), self.h_target.len())?;
        weighted_discrepancy(
            &self.h_source,
            &self.h2_source,
            &self.h_target,
            &self.h2_target,
            Some(weights),
        )
    }

    pub fn overlap(&self, weights: &OverlapWeights) -> Result<f64> {
        weights.check_aligned(self.h_source.len(), self.h_target.len())?;
        let comp_t: Vec<f64> = weights.target().iter().map(|w| 1.0 - w).collect();
        let comp_s: Vec<f64> = weights.source().iter().map(|w| 1.0 - w).collect();
        let t = disagreement_rate(&self.h_target, &self.h2_target, Some(&comp_t))?;
        let s = disagreement_rate(&self.h_source, &self.h2_source, Some(&comp_s))?;
        Ok(t - s)
    }
}

/// Target disagreement minus source disagreement.
pub fn dis2_discrepancy(h: &Mlp, h_prime: &Mlp, pair: &DatasetPair) -> Result<f64> {
    PairPredictions::compute(h, h_prime, pair)?.dis2()
}

/// Discrepancy restricted (by weight) to the non-overlap region.
pub fn odd_discrepancy(h: &Mlp, h_prime: &Mlp, pair: &DatasetPair, weights: &OverlapWeights) -> Result<f64> {
    PairPredictions::compute(h, h_prime, pair)?.odd(weights)
}

/// Discrepancy inside the overlap region (complement weights).
pub fn overlap_discrepancy(h: &Mlp, h_prime: &Mlp, pair: &DatasetPair, weights: &OverlapWeights) -> Result<f64> {
    PairPredictions::compute(h, h_prime, pair)?.overlap(weights)
}

/// `√((n_S + 4 n_T) ln(1/δ) / (2 n_S n_T))`.
pub fn concentration(n_source: usize, n_target: usize, delta: f64) -> Result<f64> {
    if n_source == 0 || n_target == 0 {
        return Err(Error::input("sample counts must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta {delta} outside (0, 1)")));
    }
    let (ns, nt) = (n_source as f64, n_target as f64);
    Ok(((ns + 4.0 * nt) * (1.0 / delta).ln() / (2.0 * ns * nt)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n_source: usize,
    pub n_target: usize,
    pub source_val_error: f64,
    pub source_val_accuracy: f64,
    pub discrepancy_full: f64,
    pub discrepancy_nonoverlap: f64,
    pub overlap_discrepancy: f64,
    /// Discrepancy entering the prediction, chosen by [`DiscrepancyMode`].
    pub selected_discrepancy: f64,
    pub concentration_term: f64,
    pub predicted_error_upper: f64,
    pub predicted_accuracy_lower: f64,
    /// Same predictions with the concentration term dropped.
    pub predicted_error_upper_no_delta: f64,
    pub predicted_accuracy_lower_no_delta: f64,
    /// Agreement of ĥ and the critic on each evaluation domain.
    pub source_agreement: f64,
    pub target_agreement: f64,
    pub true_target_accuracy: Option<f64>,
    /// `predicted_accuracy_lower ≤ true_target_accuracy`, when the truth is known.
    pub valid: Option<bool>,
    pub assumption2_gap: Option<f64>,
    pub convention: BoundConvention,
}

impl BoundReport {
    /// Prediction in the configured convention.
    pub fn prediction(&self) -> f64 {
        match self.convention {
            BoundConvention::AccuracyLowerBound => self.predicted_accuracy_lower,
            BoundConvention::ErrorBound => self.predicted_error_upper,
        }
    }

    /// Column order of [`BoundReport::csv_row`].
    pub const CSV_HEADER: &'static str = "n_source,n_target,source_val_error,source_val_accuracy,disc_full,disc_nonoverlap,overlap_disc,selected_disc,concentration,pred_error_upper,pred_accuracy_lower,pred_error_upper_no_delta,pred_accuracy_lower_no_delta,source_agreement,target_agreement,true_target_acc,valid,assumption2_gap";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{},{},{}",
            self.n_source,
            self.n_target,
            self.source_val_error,
            self.source_val_accuracy,
            self.discrepancy_full,
            self.discrepancy_nonoverlap,
            self.overlap_discrepancy,
            self.selected_discrepancy,
            self.concentration_term,
            self.predicted_error_upper,
            self.predicted_accuracy_lower,
            self.predicted_error_upper_no_delta,
            self.predicted_accuracy_lower_no_delta,
            self.source_agreement,
            self.target_agreement,
            opt(self.true_target_accuracy),
            self.valid.map(|v| if v { "1" } else { "0" }).unwrap_or(""),
            opt(self.assumption2_gap),
        )
    }
}

/// Fills every field of a [`BoundReport`] for `ĥ` and a critic, evaluated on
/// `pair`. `source_val` must be labeled; target labels are optional.
pub fn bound_report(
    h_hat: &Mlp,
    critic: &CriticResult,
    pair: &DatasetPair,
    source_val: &Dataset,
    weights: Option<&OverlapWeights>,
    config: &BoundConfig,
) -> Result<BoundReport> {
    bound_report_for_model(h_hat, &critic.critic, pair, source_val, weights, config)
}

pub fn bound_report_for_model(
    h_hat: &Mlp,
    critic: &Mlp,
    pair: &DatasetPair,
    source_val: &Dataset,
    weights: Option<&OverlapWeights>,
    config: &BoundConfig,
) -> Result<BoundReport> {
    config.validate()?;
    let source_labels = source_val.class_labels()?;
    let source_val_accuracy = crate::nn::accuracy(h_hat, source_val.x(), &source_labels)?;
    let source_val_error = 1.0 - source_val_accuracy;

    let preds = PairPredictions::compute(h_hat, critic, pair)?;
    let discrepancy_full = preds.dis2()?;
    let effective = match weights {
        Some(w) => {
            if matches!(config.mode, DiscrepancyMode::NonoverlapHard) && w.mode() != WeightMode::Hard {
                return Err(Error::config("nonoverlap-hard mode needs hard overlap weights"));
            }
            if matches!(config.mode, DiscrepancyMode::NonoverlapSoft) && w.mode() != WeightMode::Soft {
                return Err(Error::config("nonoverlap-soft mode needs soft overlap weights"));
            }
            Some(match config.source_weighting {
                SourceWeighting::DomainClassifier => w.clone(),
                SourceWeighting::Unweighted => {
                    OverlapWeights::new(vec![1.0; w.source().len()], w.target().to_vec(), w.mode())?
                }
            })
        }
        None => {
            if config.mode != DiscrepancyMode::Full {
                return Err(Error::config("non-overlap discrepancy modes need overlap weights"));
            }
            None
        }
    };
    let (discrepancy_nonoverlap, overlap_discrepancy) = match &effective {
        Some(w) => (preds.odd(w)?, preds.overlap(w)?),
        None => (discrepancy_full, 0.0),
    };
    let selected_discrepancy = match config.mode {
        DiscrepancyMode::Full => discrepancy_full,
        _ => discrepancy_nonoverlap,
    };
    let concentration_term = concentration(pair.source.n(), pair.target.n(), config.delta)?;

    let source_agreement = 1.0 - disagreement_rate(&preds.h_source, &preds.h2_source, None)?;
    let target_agreement = 1.0 - disagreement_rate(&preds.h_target, &preds.h2_target, None)?;

    let predicted_accuracy_lower = source_val_accuracy - selected_discrepancy - concentration_term;
    let true_target_accuracy = if pair.target.is_fully_labeled() {
        let labels = pair.target.class_labels()?;
        let hits = preds.h_target.iter().zip(&labels).filter(|(p, y)| p == y).count();
        Some(hits as f64 / labels.len() as f64)
    } else {
        None
    };
    let assumption2_gap = match (&effective, pair.target.is_fully_labeled() && pair.source.is_fully_labeled()) {
        (Some(w), true) => Some(assumption2_gap_from_predictions(
            &preds.h_source,
            &preds.h_target,
            pair,
            w,
        )?),
        _ => None,
    };
    Ok(BoundReport {
        n_source: pair.source.n(),
        n_target: pair.target.n(),
        source_val_error,
        source_val_accuracy,
        discrepancy_full,
        discrepancy_nonoverlap,
        overlap_discrepancy,
        selected_discrepancy,
        concentration_term,
        predicted_error_upper: source_val_error + selected_discrepancy + concentration_term,
        predicted_accuracy_lower,
        predicted_error_upper_no_delta: source_val_error + selected_discrepancy,
        predicted_accuracy_lower_no_delta: source_val_accuracy - selected_discrepancy,
        source_agreement,
        target_agreement,
        true_target_accuracy,
        valid: true_target_accuracy.map(|t| predicted_accuracy_lower <= t),
        assumption2_gap,
        convention: config.convention,
    })
}

/// The full error bound split into its non-overlap and overlap parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitBound {
    pub source_error: f64,
    pub nonoverlap_term: f64,
    pub overlap_term: f64,
    pub concentration_term: f64,
    /// `source_error + nonoverlap_term + overlap_term + concentration_term`,
    /// i.e. the Dis² error bound.
    pub total: f64,
}

pub fn split_bound_report(report: &BoundReport) -> SplitBound {
    let total = report.source_val_error
        + report.discrepancy_nonoverlap
        + report.overlap_discrepancy
        + report.concentration_term;
    SplitBound {
        source_error: report.source_val_error,
        nonoverlap_term: report.discrepancy_nonoverlap,
        overlap_term: report.overlap_discrepancy,
        concentration_term: report.concentration_term,
        total,
    }
}

fn assumption2_gap_from_predictions(
    h_source: &[usize],
    h_target: &[usize],
    pair: &DatasetPair,
    weights: &OverlapWeights,
) -> Result<f64> {
    let ys = pair.source.class_labels()?;
    let yt = pair.target.class_labels()?;
    let comp_t: Vec<f64> = weights.target().iter().map(|w| 1.0 - w).collect();
    let comp_s: Vec<f64> = weights.source().iter().map(|w| 1.0 - w).collect();
    let t = disagreement_rate(h_target, &yt, Some(&comp_t))?;
    let s = disagreement_rate(h_source, &ys, Some(&comp_s))?;
    Ok(t - s)
}

/// Overlap-weighted target error of ĥ minus overlap-weighted source error.
/// Needs true labels on both domains.
pub fn assumption2_gap(h_hat: &Mlp, pair: &DatasetPair, weights: &OverlapWeights) -> Result<f64> {
    weights.check_aligned(pair.source.n(), pair.target.n())?;
    if !pair.target.is_fully_labeled() {
        return Err(Error::MissingLabels("target rows"));
    }
    let hs = h_hat.predict(pair.source.x())?;
    let ht = h_hat.predict(pair.target.x())?;
    assumption2_gap_from_predictions(&hs, &ht, pair, weights)
}

/// Agreement rates of ĥ and a critic inside and outside the overlap region,
/// plus the overlap error gap of ĥ when target labels are known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapDiagnostics {
    pub assumption2_gap: Option<f64>,
    pub source_agreement_overlap: f64,
    pub source_agreement_nonoverlap: f64,
    pub target_agreement_overlap: f64,
    pub target_agreement_nonoverlap: f64,
}

fn normalized_agreement(a: &[usize], b: &[usize], w: impl Iterator<Item = f64>) -> f64 {
    let (hit, mass) = a
        .iter()
        .zip(b)
        .zip(w)
        .fold((0.0, 0.0), |(h, m), ((x, y), w)| (h + if x == y { w } else { 0.0 }, m + w));
    if mass > 0.0 {
        hit / mass
    } else {
        1.0
    }
}

pub fn overlap_diagnostics(
    h_hat: &Mlp,
    critic: &Mlp,
    pair: &DatasetPair,
    weights: &OverlapWeights,
) -> Result<OverlapDiagnostics> {
    weights.check_aligned(pair.source.n(), pair.target.n())?;
    let p = PairPredictions::compute(h_hat, critic, pair)?;
    let assumption2_gap = if pair.target.is_fully_labeled() && pair.source.is_fully_labeled() {
        Some(assumption2_gap_from_predictions(&p.h_source, &p.h_target, pair, weights)?)
    } else {
        None
    };
    let ws = weights.source();
    let wt = weights.target();
    Ok(OverlapDiagnostics {
        assumption2_gap,
        source_agreement_overlap: normalized_agreement(&p.h_source, &p.h2_source, ws.iter().map(|w| 1.0 - w)),
        source_agreement_nonoverlap: normalized_agreement(&p.h_source, &p.h2_source, ws.iter().copied()),
        target_agreement_overlap: normalized_agreement(&p.h_target, &p.h2_target, wt.iter().map(|w| 1.0 - w)),
        target_agreement_nonoverlap: normalized_agreement(&p.h_target, &p.h2_target, wt.iter().copied()),
    })
}
