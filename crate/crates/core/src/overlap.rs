//! Domain classifier and the overlap weights derived from it.
//!
//! A two-class MLP `d` is trained to tell source rows (class 0) from target
//! rows (class 1) on a class-balanced set. Its softmax `s(x)` then stands in
//! for membership outside the overlap region: `s(x)₁` for target rows and
//! `s(x)₀` for source rows. The hard variant replaces the probabilities with
//! argmax indicators.

use std::io::Write;
use std::path::Path;

use ndarray::{concatenate, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::DatasetPair;
use crate::losses::LossKind;
use crate::nn::{self, Mlp, TrainConfig, TrainTerm, TrainableScope};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    Soft,
    Hard,
}

/// Per-row non-overlap weights in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapWeights {
    source: Vec<f64>,
    target: Vec<f64>,
    mode: WeightMode,
}

impl OverlapWeights {
    pub fn new(source: Vec<f64>, target: Vec<f64>, mode: WeightMode) -> Result<Self> {
        let in_range = |v: &f64| (0.0..=1.0).contains(v);
        if !source.iter().chain(&target).all(in_range) {
            return Err(Error::input("overlap weights must lie in [0, 1]"));
        }
        if mode == WeightMode::Hard && !source.iter().chain(&target).all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::input("hard overlap weights must be 0 or 1"));
        }
        Ok(Self { source, target, mode })
    }

    /// Every row treated as non-overlapping; reduces ODD to Dis².
    pub fn ones(n_source: usize, n_target: usize) -> Self {
        Self {
            source: vec![1.0; n_source],
            target: vec![1.0; n_target],
            mode: WeightMode::Hard,
        }
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn check_aligned(&self, n_source: usize, n_target: usize) -> Result<()> {
        if self.source.len() != n_source {
            return Err(Error::Shape {
                what: "source overlap weights",
                expected: n_source,
                found: self.source.len(),
            });
        }
        if self.target.len() != n_target {
            return Err(Error::Shape {
                what: "target overlap weights",
                expected: n_target,
                found: self.target.len(),
            });
        }
        Ok(())
    }

    /// Audit export with columns `index,domain,weight`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,domain,weight")?;
        for (i, w) in self.source.iter().enumerate() {
            writeln!(out, "{i},0,{w:?}")?;
        }
        for (i, w) in self.target.iter().enumerate() {
            writeln!(out, "{i},1,{w:?}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainClassifierConfig {
    /// Hidden layer widths; `None` uses two hidden layers as wide as the
    /// feature dimension (a 3-layer MLP).
    pub hidden: Option<Vec<usize>>,
    pub train: TrainConfig,
    /// Fraction of the balanced set held out to measure classifier quality.
    pub heldout_fraction: f64,
}

impl Default for DomainClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            train: TrainConfig {
                learning_rate: 1e-4,
                max_epochs: 2000,
                batch_size: 32,
                seed: 0,
                convergence_tol: 1e-4,
                convergence_patience: 10,
            },
            heldout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainClassifier {
    model: Mlp,
    pub seed: u64,
    pub epochs_run: usize,
    /// Balanced accuracy on the held-out slice; `None` when nothing was held out.
    pub heldout_balanced_accuracy: Option<f64>,
}

impl DomainClassifier {
    /// Wraps an existing two-output model.
    pub fn from_model(model: Mlp) -> Result<Self> {
        if model.output_dim() != 2 {
            return Err(Error::Shape {
                what: "domain classifier outputs",
                expected: 2,
                found: model.output_dim(),
            });
        }
        Ok(Self {
            model,
            seed: 0,
            epochs_run: 0,
            heldout_balanced_accuracy: None,
        })
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }
}

/// Row indices chosen so both domains contribute the same number of rows;
/// the majority domain is subsampled uniformly without replacement.
pub fn balanced_indices(n_source: usize, n_target: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let n = n_source.min(n_target);
    let mut pick = |total: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..total).collect();
        if total > n {
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx.sort_unstable();
        }
        idx
    };
    let s = pick(n_source);
    let t = pick(n_target);
    (s, t)
}

pub fn train_domain_classifier(pair: &DatasetPair, config: &DomainClassifierConfig) -> Result<DomainClassifier> {
    if pair.source.n() == 0 {
        return Err(Error::Empty("source domain"));
    }
    if pair.target.n() == 0 {
        return Err(Error::Empty("target domain"));
    }
    if !(0.0..1.0).contains(&config.heldout_fraction) {
        return Err(Error::config("heldout_fraction must be in [0, 1)"));
    }
    let dim = pair.dim();
    let hidden = config.hidden.clone().unwrap_or_else(|| vec![dim, dim]);
    let mut dims = vec![dim];
    dims.extend(hidden);
    dims.push(2);

    let base = config.train.seed;
    let (mut src, mut tgt) = balanced_indices(pair.source.n(), pair.target.n(), seed::derive(base, 1));
    let mut rng = seed::rng(seed::derive(base, 2));
    src.shuffle(&mut rng);
    tgt.shuffle(&mut rng);
    let per_domain = src.len();
    let n_held = ((per_domain as f64) * config.heldout_fraction).floor() as usize;
    let n_held = n_held.min(per_domain - 1);
    let (held_s, fit_s) = src.split_at(n_held);
    let (held_t, fit_t) = tgt.split_at(n_held);

    let x = concatenate![
        Axis(0),
        nn::take_rows(pair.source.x(), fit_s),
        nn::take_rows(pair.target.x(), fit_t)
    ];
    let y: Vec<usize> = std::iter::repeat_n(0, fit_s.len())
        .chain(std::iter::repeat_n(1, fit_t.len()))
        .collect();
    let init = Mlp::new(&dims, seed::derive(base, 3))?;
    let term = TrainTerm {
        inputs: x.view(),
        targets: &y,
        loss: LossKind::Logistic,
        weights: None,
    };
    let outcome = nn::train_terms(init, &[term], &config.train, TrainableScope::All, |_, _| {})?;

    let heldout_balanced_accuracy = if n_held > 0 {
        let s_preds = outcome.model.predict(nn::take_rows(pair.source.x(), held_s).view())?;
        let t_preds = outcome.model.predict(nn::take_rows(pair.target.x(), held_t).view())?;
        let s_acc = s_preds.iter().filter(|&&p| p == 0).count() as f64 / n_held as f64;
        let t_acc = t_preds.iter().filter(|&&p| p == 1).count() as f64 / n_held as f64;
        Some(0.5 * (s_acc + t_acc))
    } else {
        None
    };
    Ok(DomainClassifier {
        model: outcome.model,
        seed: base,
        epochs_run: outcome.epochs_run,
        heldout_balanced_accuracy,
    })
}

/// `softmax(d(x))₁` for a logit pair, computed without overflow.
pub(crate) fn target_probability(d0: f64, d1: f64) -> f64 {
    crate::losses::sigmoid(d1 - d0)
}

fn domain_logits(d: &DomainClassifier, pair: &DatasetPair) -> Result<(ndarray::Array2<f64>, ndarray::Array2<f64>)> {
    Ok((d.model.forward(pair.source.x())?, d.model.forward(pair.target.x())?))
}

/// `target_w = s(x)₁` on target rows, `source_w = s(x)₀` on source rows.
pub fn soft_weights(d: &DomainClassifier, pair: &DatasetPair) -> Result<OverlapWeights> {
    let (ls, lt) = domain_logits(d, pair)?;
    let source = ls
        .rows()
        .into_iter()
        .map(|r| target_probability(r[1], r[0]))
        .collect();
    let target = lt
        .rows()
        .into_iter()
        .map(|r| target_probability(r[0], r[1]))
        .collect();
    Ok(OverlapWeights {
        source,
        target,
        mode: WeightMode::Soft,
    })
}

/// Indicator weights: a target row counts as non-overlapping when `d`
/// classifies it as target, a source row when `d` classifies it as source.
pub fn hard_weights(d: &DomainClassifier, pair: &DatasetPair) -> Result<OverlapWeights> {
    let (ls, lt) = domain_logits(d, pair)?;
    let indicator = |logits: ndarray::Array2<f64>, class: usize| -> Vec<f64> {
        nn::predict_logits(logits.view())
            .into_iter()
            .map(|p| if p == class { 1.0 } else { 0.0 })
            .collect()
    };
    Ok(OverlapWeights {
        source: indicator(ls, 0),
        target: indicator(lt, 1),
        mode: WeightMode::Hard,
    })
}

/// Intersection of the `α`-superlevel sets of `N(μ_S, σ²)` and `N(μ_T, σ²)`
/// (second parameter is the variance). `None` when the intersection is empty.
pub fn gaussian_overlap_interval(mu_source: f64, mu_target: f64, variance: f64, alpha: f64) -> Result<Option<(f64, f64)>> {
    if variance.is_nan() || alpha.is_nan() || variance <= 0.0 || alpha <= 0.0 {
        return Err(Error::input("variance and alpha must be positive"));
    }
    let peak = 1.0 / (std::f64::consts::TAU * variance).sqrt();
    if alpha >= peak {
        return Ok(None);
    }
    let radius = (2.0 * variance * (peak / alpha).ln()).sqrt();
    let lo = mu_source.max(mu_target) - radius;
    let hi = mu_source.min(mu_target) + radius;
    Ok((lo < hi).then_some((lo, hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy_pair() -> DatasetPair {
        use crate::data::{Dataset, Domain};
        let s = Dataset::unlabeled(array![[0.0, 1.0], [1.0, 2.0], [2.0, -1.0]], Domain::Source).unwrap();
        let t = Dataset::unlabeled(array![[5.0, 1.0], [-3.0, 0.5]], Domain::Target).unwrap();
        DatasetPair::new(s, t).unwrap()
    }

    #[test]
    fn zero_classifier_weights() {
        let d = DomainClassifier::from_model(Mlp::zeros(&[2, 2, 2]).unwrap()).unwrap();
        let soft = soft_weights(&d, &toy_pair()).unwrap();
        assert!(soft.target().iter().chain(soft.source()).all(|&w| w == 0.5));
        let hard = hard_weights(&d, &toy_pair()).unwrap();
        assert!(hard.target().iter().all(|&w| w == 0.0));
        assert!(hard.source().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn soft_components_sum_to_one_and_hard_rounds_soft() {
        let d = DomainClassifier::from_model(Mlp::new(&[2, 5, 2], 17).unwrap()).unwrap();
        let pair = toy_pair();
        let soft = soft_weights(&d, &pair).unwrap();
        let hard = hard_weights(&d, &pair).unwrap();
        let logits = d.model().forward(pair.target.x()).unwrap();
        for (i, r) in logits.rows().into_iter().enumerate() {
            let s1 = soft.target()[i];
            let s0 = target_probability(r[1], r[0]);
            assert_abs_diff_eq!(s0 + s1, 1.0, epsilon = 1e-12);
            assert_eq!(hard.target()[i], if s1 > 0.5 { 1.0 } else { 0.0 });
        }
        for (s, h) in soft.source().iter().zip(hard.source()) {
            assert_eq!(*h, if *s >= 0.5 { 1.0 } else { 0.0 });
        }
        assert!(hard.target().iter().all(|&w| w == 0.0 || w == 1.0));
    }

    #[test]
    fn wrong_output_dim_rejected() {
        assert!(DomainClassifier::from_model(Mlp::zeros(&[2, 3]).unwrap()).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(OverlapWeights::new(vec![0.2], vec![1.2], WeightMode::Soft).is_err());
        assert!(OverlapWeights::new(vec![0.2], vec![1.0], WeightMode::Hard).is_err());
        assert!(OverlapWeights::new(vec![0.0], vec![1.0], WeightMode::Hard).is_ok());
    }

    #[test]
    fn balanced_subsample_sizes() {
        let (s, t) = balanced_indices(10, 4, 3);
        assert_eq!(s.len(), 4);
        assert_eq!(t, vec![0, 1, 2, 3]);
        let mut dedup = s.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 4);
        assert!(s.iter().all(|&i| i < 10));
    }

    #[test]
    fn gaussian_interval_examples() {
        let (lo, hi) = gaussian_overlap_interval(-3.0, 3.0, 2.0, 0.02).unwrap().unwrap();
        // (1/√(4π)) e^{−(x−μ)²/4} = 0.02  ⇒  |x − μ| = 2·√(ln(1/(0.02·√(4π))))
        let r = 2.0 * (1.0 / (0.02 * (4.0 * std::f64::consts::PI).sqrt())).ln().sqrt();
        assert_abs_diff_eq!(hi, -3.0 + r, epsilon = 1e-12);
        assert_abs_diff_eq!(lo, 3.0 - r, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 0.253, epsilon = 1e-3);

        let peak = 1.0 / (std::f64::consts::TAU * 2.0f64).sqrt();
        assert_eq!(gaussian_overlap_interval(-3.0, 3.0, 2.0, peak * 1.01).unwrap(), None);

        let (lo, hi) = gaussian_overlap_interval(1.5, 1.5, 0.7, 0.1).unwrap().unwrap();
        assert_abs_diff_eq!(lo + hi, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn weights_csv_layout() {
        let w = OverlapWeights::new(vec![0.25], vec![0.5, 1.0], WeightMode::Soft).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "index,domain,weight\n0,0,0.25\n0,1,0.5\n1,1,1.0\n");
    }
}
