//! MAE, coverage and validity-cell metrics over bound predictions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::records::RunRecord;
use crate::bounds::BoundReport;
use crate::{Error, Result};

/// A predicted accuracy lower bound and the true accuracy it targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub predicted: f64,
    pub truth: f64,
}

impl Prediction {
    pub fn is_valid(&self) -> bool {
        self.predicted <= self.truth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub mae: f64,
    pub coverage: f64,
    /// MAE over invalid predictions only; 0 when every prediction is valid.
    pub overestimation_mae: f64,
    pub invalid: usize,
}

pub fn evaluate(predictions: &[Prediction]) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    let n = predictions.len();
    let mut abs_sum = 0.0;
    let mut over_sum = 0.0;
    let mut invalid = 0usize;
    for p in predictions {
        if !p.predicted.is_finite() || !p.truth.is_finite() {
            return Err(Error::input("non-finite prediction or truth"));
        }
        let err = (p.predicted - p.truth).abs();
        abs_sum += err;
        if !p.is_valid() {
            invalid += 1;
            over_sum += err;
        }
    }
    Ok(MetricsReport {
        n,
        mae: abs_sum / n as f64,
        coverage: (n - invalid) as f64 / n as f64,
        overestimation_mae: if invalid == 0 { 0.0 } else { over_sum / invalid as f64 },
        invalid,
    })
}

/// Metrics over bound reports; every report must carry the true target
/// accuracy.
pub fn evaluate_reports(reports: &[BoundReport]) -> Result<MetricsReport> {
    let preds = reports
        .iter()
        .map(|r| {
            r.true_target_accuracy
                .map(|truth| Prediction {
                    predicted: r.predicted_accuracy_lower,
                    truth,
                })
                .ok_or(Error::MissingLabels("target"))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&preds)
}

/// Paired validity counts, Dis² against ODD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidityCells {
    pub both_valid: usize,
    pub dis2_invalid_odd_valid: usize,
    pub dis2_valid_odd_invalid: usize,
    pub both_invalid: usize,
}

impl ValidityCells {
    pub fn total(&self) -> usize {
        self.both_valid + self.dis2_invalid_odd_valid + self.dis2_valid_odd_invalid + self.both_invalid
    }
}

/// Mean, standard deviation and t statistic of paired differences
/// (ODD prediction minus Dis² prediction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub t: Option<f64>,
}

pub fn paired_difference(diffs: &[f64]) -> Option<PairedDifference> {
    let n = diffs.len();
    if n == 0 {
        return None;
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let t = (n > 1 && sd > 0.0).then(|| mean / (sd / (n as f64).sqrt()));
    Some(PairedDifference { n, mean, sd, t })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEvaluation {
    pub per_method: BTreeMap<String, MetricsReport>,
    /// Present when both `dis2` and an ODD method have successful rows.
    pub cells: Option<ValidityCells>,
    pub paired: Option<PairedDifference>,
    /// Distinct runs with at least one failed method.
    pub failed_runs: usize,
    pub total_runs: usize,
}

/// Metrics from per-run rows. Failed rows are skipped; runs are paired by
/// `run_id`.
pub fn evaluate_records(records: &[RunRecord]) -> Result<SweepEvaluation> {
    let mut by_method: BTreeMap<String, Vec<Prediction>> = BTreeMap::new();
    let mut runs: BTreeMap<usize, (Option<Prediction>, Option<Prediction>, bool)> = BTreeMap::new();
    for r in records {
        let entry = runs.entry(r.run_id).or_insert((None, None, false));
        if r.is_failure() {
            entry.2 = true;
            continue;
        }
        let (Some(predicted), Some(truth)) = (r.pred_lower, r.true_target_acc) else {
            continue;
        };
        let p = Prediction { predicted, truth };
        by_method.entry(r.method.clone()).or_default().push(p);
        if r.method == "dis2" {
            entry.0 = Some(p);
        } else {
            entry.1 = Some(p);
        }
    }
    let per_method = by_method
        .into_iter()
        .map(|(m, preds)| evaluate(&preds).map(|rep| (m, rep)))
        .collect::<Result<BTreeMap<_, _>>>()?;

    let mut cells = ValidityCells::default();
    let mut diffs = Vec::new();
    for (d, o, _) in runs.values() {
        if let (Some(d), Some(o)) = (d, o) {
            match (d.is_valid(), o.is_valid()) {
                (true, true) => cells.both_valid += 1,
                (false, true) => cells.dis2_invalid_odd_valid += 1,
                (true, false) => cells.dis2_valid_odd_invalid += 1,
                (false, false) => cells.both_invalid += 1,
            }
            diffs.push(o.predicted - d.predicted);
        }
    }
    Ok(SweepEvaluation {
        per_method,
        cells: (cells.total() > 0).then_some(cells),
        paired: paired_difference(&diffs),
        failed_runs: runs.values().filter(|r| r.2).count(),
        total_runs: runs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn preds(p: &[f64], t: &[f64]) -> Vec<Prediction> {
        p.iter()
            .zip(t)
            .map(|(&predicted, &truth)| Prediction { predicted, truth })
            .collect()
    }

    #[test]
    fn hand_example() {
        let m = evaluate(&preds(&[0.7, 0.9], &[0.8, 0.85])).unwrap();
        assert_abs_diff_eq!(m.mae, 0.075, epsilon = 1e-12);
        assert_eq!(m.coverage, 0.5);
        assert_abs_diff_eq!(m.overestimation_mae, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn all_valid_has_zero_overestimation() {
        let m = evaluate(&preds(&[0.1, 0.2], &[0.3, 0.2])).unwrap();
        assert_eq!(m.overestimation_mae, 0.0);
        assert_eq!(m.coverage, 1.0);
    }

    #[test]
    fn exact_predictions() {
        let m = evaluate(&preds(&[0.4, 0.6], &[0.4, 0.6])).unwrap();
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.coverage, 1.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(evaluate(&[]).is_err());
    }

    #[test]
    fn paired_t() {
        let p = paired_difference(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.mean, 2.0);
        assert_eq!(p.sd, 1.0);
        assert_abs_diff_eq!(p.t.unwrap(), 2.0 * 3f64.sqrt(), epsilon = 1e-12);
    }
}
