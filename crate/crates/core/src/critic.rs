//! Worst-case critic search.
//!
//! Given the studied classifier `ĥ`, its predictions are frozen as
//! pseudo-labels on both domains. Each restart starts from `ĥ`'s parameters
//! (restart 0 exactly, later restarts with small Gaussian perturbations) and
//! minimizes either the Dis² or the ODD objective. The restart with the
//! largest empirical discrepancy on the training pair wins.

use perturb::gaussian_perturb;
use serde::{Deserialize, Serialize};

use crate::bounds;
use crate::data::DatasetPair;
use crate::losses::{self, LossKind};
use crate::nn::{self, Mlp, TrainConfig, TrainTerm, TrainableScope};
use crate::overlap::{OverlapWeights, WeightMode};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticMethod {
    Dis2,
    OddSoft,
    OddHard,
}

impl CriticMethod {
    pub fn name(self) -> &'static str {
        match self {
            CriticMethod::Dis2 => "dis2",
            CriticMethod::OddSoft => "odd",
            CriticMethod::OddHard => "odd-hard",
        }
    }

    pub fn uses_weights(self) -> bool {
        !matches!(self, CriticMethod::Dis2)
    }
}

impl std::str::FromStr for CriticMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dis2" => Ok(CriticMethod::Dis2),
            "odd" | "odd-soft" => Ok(CriticMethod::OddSoft),
            "odd-hard" => Ok(CriticMethod::OddHard),
            other => Err(Error::config(format!("unknown critic method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub method: CriticMethod,
    pub restarts: usize,
    /// `max_epochs = 0` is allowed here and leaves every restart at its
    /// initialization.
    pub train: TrainConfig,
    pub scope: TrainableScope,
    /// Also scale the source log-loss by `s(x)₀`.
    pub discount_source: bool,
    /// Perturbation sd for restarts after the first, as a multiple of each
    /// parameter tensor's RMS.
    pub perturbation: f64,
    /// Record the per-epoch discrepancy of every restart.
    pub trace: bool,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            method: CriticMethod::Dis2,
            restarts: 30,
            train: TrainConfig {
                learning_rate: 1e-3,
                max_epochs: 300,
                batch_size: 0,
                seed: 0,
                convergence_tol: 0.0,
                convergence_patience: 10,
            },
            scope: TrainableScope::All,
            discount_source: false,
            perturbation: 0.05,
            trace: false,
        }
    }
}

impl CriticConfig {
    pub fn with_method(method: CriticMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::config("restarts must be at least 1"));
        }
        if self.train.max_epochs > 0 {
            self.train.validate()?;
        }
        if self.perturbation.is_nan() || self.perturbation < 0.0 {
            return Err(Error::config("perturbation must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub seed: u64,
    pub final_objective: f64,
    pub discrepancy: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticResult {
    pub critic: Mlp,
    pub empirical_discrepancy: f64,
    pub per_restart: Vec<RestartSummary>,
    pub best_restart: usize,
    pub method: CriticMethod,
    trace: Option<Vec<f64>>,
}

/// Metadata written next to a saved critic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticMetadata {
    pub method: CriticMethod,
    pub empirical_discrepancy: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary>,
}

impl CriticResult {
    pub fn metadata(&self) -> CriticMetadata {
        CriticMetadata {
            method: self.method,
            empirical_discrepancy: self.empirical_discrepancy,
            best_restart: self.best_restart,
            restarts: self.per_restart.clone(),
        }
    }

    /// Saves `<stem>.mlp` (model text format) and `<stem>.json` (metadata).
    pub fn save(&self, stem: impl AsRef<std::path::Path>) -> Result<()> {
        let stem = stem.as_ref();
        self.critic.save(stem.with_extension("mlp"))?;
        let json = serde_json::to_string_pretty(&self.metadata())?;
        std::fs::write(stem.with_extension("json"), json)?;
        Ok(())
    }
}

/// Per-epoch discrepancy of the winning restart. Entry 0 is the
/// initialization, entry `e` the state after epoch `e`.
pub fn discrepancy_trace(result: &CriticResult) -> Result<&[f64]> {
    result
        .trace
        .as_deref()
        .ok_or_else(|| Error::config("discrepancy tracing was not enabled"))
}

/// Discrepancy used to rank restarts: Dis² for [`CriticMethod::Dis2`], the
/// weighted non-overlap discrepancy otherwise.
fn selection_discrepancy(
    method: CriticMethod,
    h_preds: &PseudoLabels,
    critic: &Mlp,
    pair: &DatasetPair,
    weights: Option<&OverlapWeights>,
) -> Result<f64> {
    let cs = critic.predict(pair.source.x())?;
    let ct = critic.predict(pair.target.x())?;
    let w = match method {
        CriticMethod::Dis2 => None,
        _ => weights,
    };
    bounds::weighted_discrepancy(&h_preds.source, &cs, &h_preds.target, &ct, w)
}

struct PseudoLabels {
    source: Vec<usize>,
    target: Vec<usize>,
}

pub fn find_critic(
    h_hat: &Mlp,
    pair: &DatasetPair,
    weights: Option<&OverlapWeights>,
    config: &CriticConfig,
) -> Result<CriticResult> {
    config.validate()?;
    if pair.source.n() == 0 {
        return Err(Error::Empty("source domain"));
    }
    if pair.target.n() == 0 {
        return Err(Error::Empty("target domain"));
    }
    if h_hat.input_dim() != pair.dim() {
        return Err(Error::Shape {
            what: "ĥ input dimension",
            expected: pair.dim(),
            found: h_hat.input_dim(),
        });
    }
    let weights = match (config.method, weights) {
        (CriticMethod::Dis2, _) => None,
        (_, None) => {
            return Err(Error::config(format!(
                "method {} needs overlap weights",
                config.method.name()
            )))
        }
        (m, Some(w)) => {
            w.check_aligned(pair.source.n(), pair.target.n())?;
            if m == CriticMethod::OddHard && w.mode() != WeightMode::Hard {
                return Err(Error::config("odd-hard needs hard overlap weights"));
            }
            Some(w)
        }
    };

    let pseudo = PseudoLabels {
        source: h_hat.predict(pair.source.x())?,
        target: h_hat.predict(pair.target.x())?,
    };
    let source_w = match (weights, config.discount_source) {
        (Some(w), true) => Some(w.source()),
        _ => None,
    };
    let terms = [
        TrainTerm {
            inputs: pair.source.x(),
            targets: &pseudo.source,
            loss: LossKind::Logistic,
            weights: source_w,
        },
        TrainTerm {
            inputs: pair.target.x(),
            targets: &pseudo.target,
            loss: LossKind::Disagreement,
            weights: weights.map(|w| w.target()),
        },
    ];
    let objective = |critic: &Mlp| -> Result<f64> {
        match weights {
            None => losses::dis2_objective(critic, pair.source.x(), &pseudo.source, pair.target.x(), &pseudo.target),
            Some(w) => losses::odd_objective(
                critic,
                pair.source.x(),
                &pseudo.source,
                pair.target.x(),
                &pseudo.target,
                w,
                config.discount_source,
            ),
        }
    };

    let mut best: Option<(f64, usize, Mlp, Option<Vec<f64>>)> = None;
    let mut per_restart = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let restart_seed = seed::derive(config.train.seed, r as u64);
        let mut init = h_hat.clone();
        if r > 0 && config.perturbation > 0.0 {
            gaussian_perturb(&mut init, config.perturbation, config.scope, restart_seed);
        }
        let mut trace = config.trace.then(Vec::new);
        if let Some(t) = trace.as_mut() {
            t.push(selection_discrepancy(config.method, &pseudo, &init, pair, weights)?);
        }
        let (critic, epochs_run) = if config.train.max_epochs == 0 {
            (init, 0)
        } else {
            let train_cfg = TrainConfig {
                seed: restart_seed,
                ..config.train
            };
            let mut trace_err = None;
            let outcome = nn::train_terms(init, &terms, &train_cfg, config.scope, |_, m| {
                if let Some(t) = trace.as_mut() {
                    match selection_discrepancy(config.method, &pseudo, m, pair, weights) {
                        Ok(d) => t.push(d),
                        Err(e) => trace_err = Some(e),
                    }
                }
            })?;
            if let Some(e) = trace_err {
                return Err(e);
            }
            (outcome.model, outcome.epochs_run)
        };
        let final_objective = objective(&critic)?;
        if !final_objective.is_finite() {
            return Err(Error::Divergence {
                epoch: epochs_run,
                loss: final_objective,
            });
        }
        let discrepancy = selection_discrepancy(config.method, &pseudo, &critic, pair, weights)?;
        per_restart.push(RestartSummary {
            seed: restart_seed,
            final_objective,
            discrepancy,
            epochs_run,
        });
        if best.as_ref().is_none_or(|(d, ..)| discrepancy > *d) {
            best = Some((discrepancy, r, critic, trace));
        }
    }
    let (empirical_discrepancy, best_restart, critic, trace) = best.expect("at least one restart");
    Ok(CriticResult {
        critic,
        empirical_discrepancy,
        per_restart,
        best_restart,
        method: config.method,
        trace,
    })
}

mod perturb {
    use crate::nn::{Mlp, TrainableScope};
    use crate::seed::{self, BoxMuller};

    fn rms<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
        let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }

    /// Adds `N(0, (scale · rms(tensor))²)` noise to each trainable tensor.
    pub(super) fn gaussian_perturb(model: &mut Mlp, scale: f64, scope: TrainableScope, seed: u64) {
        let mut rng = seed::rng(seed);
        let mut normal = BoxMuller::new();
        let first = match scope {
            TrainableScope::All => 0,
            TrainableScope::LastLayer => model.num_layers() - 1,
        };
        let (weights, biases) = model.params_mut();
        for l in first..weights.len() {
            let sd = scale * rms(weights[l].iter());
            weights[l].mapv_inplace(|v| v + sd * normal.sample(&mut rng));
            let sd = scale * rms(biases[l].iter());
            biases[l].mapv_inplace(|v| v + sd * normal.sample(&mut rng));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Domain};
    use ndarray::Array2;

    fn blobs() -> (Mlp, DatasetPair) {
        let mut rng = seed::rng(5);
        let mut normal = seed::BoxMuller::new();
        let mut draw = |cx: f64, n: usize| {
            Array2::from_shape_fn((n, 2), |(_, j)| (if j == 0 { cx } else { 0.0 }) + normal.sample(&mut rng))
        };
        let s = Dataset::unlabeled(draw(-1.0, 60), Domain::Source).unwrap();
        let t = Dataset::unlabeled(draw(2.0, 60), Domain::Target).unwrap();
        (Mlp::new(&[2, 8, 2], 1).unwrap(), DatasetPair::new(s, t).unwrap())
    }

    #[test]
    fn zero_epochs_returns_h_hat() {
        let (h, pair) = blobs();
        let cfg = CriticConfig {
            restarts: 1,
            train: TrainConfig {
                max_epochs: 0,
                ..CriticConfig::default().train
            },
            trace: true,
            ..CriticConfig::default()
        };
        let res = find_critic(&h, &pair, None, &cfg).unwrap();
        assert_eq!(res.critic, h);
        assert_eq!(res.empirical_discrepancy, 0.0);
        assert_eq!(discrepancy_trace(&res).unwrap(), &[0.0]);
    }

    #[test]
    fn selection_takes_max_and_trace_matches() {
        let (h, pair) = blobs();
        let cfg = CriticConfig {
            restarts: 4,
            train: TrainConfig {
                max_epochs: 40,
                learning_rate: 1e-2,
                ..CriticConfig::default().train
            },
            trace: true,
            ..CriticConfig::default()
        };
        let res = find_critic(&h, &pair, None, &cfg).unwrap();
        for r in &res.per_restart {
            assert!(res.empirical_discrepancy >= r.discrepancy);
        }
        assert_eq!(res.per_restart[res.best_restart].discrepancy, res.empirical_discrepancy);
        let trace = discrepancy_trace(&res).unwrap();
        assert_eq!(trace.len(), res.per_restart[res.best_restart].epochs_run + 1);
        assert_eq!(*trace.last().unwrap(), res.empirical_discrepancy);
        if res.best_restart == 0 {
            assert_eq!(trace[0], 0.0);
        }
    }

    #[test]
    fn h_hat_initialized_restart_starts_at_zero() {
        let (h, pair) = blobs();
        let cfg = CriticConfig {
            restarts: 1,
            train: TrainConfig {
                max_epochs: 5,
                ..CriticConfig::default().train
            },
            trace: true,
            ..CriticConfig::default()
        };
        let res = find_critic(&h, &pair, None, &cfg).unwrap();
        assert_eq!(discrepancy_trace(&res).unwrap()[0], 0.0);
    }

    #[test]
    fn trace_requires_flag() {
        let (h, pair) = blobs();
        let cfg = CriticConfig {
            restarts: 1,
            train: TrainConfig {
                max_epochs: 2,
                ..CriticConfig::default().train
            },
            ..CriticConfig::default()
        };
        let res = find_critic(&h, &pair, None, &cfg).unwrap();
        assert!(discrepancy_trace(&res).is_err());
    }

    #[test]
    fn odd_requires_weights() {
        let (h, pair) = blobs();
        let cfg = CriticConfig::with_method(CriticMethod::OddSoft);
        assert!(find_critic(&h, &pair, None, &cfg).is_err());
        let soft = OverlapWeights::new(vec![0.5; 60], vec![0.5; 60], WeightMode::Soft).unwrap();
        let cfg = CriticConfig {
            restarts: 1,
            ..CriticConfig::with_method(CriticMethod::OddHard)
        };
        assert!(find_critic(&h, &pair, Some(&soft), &cfg).is_err());
    }

    #[test]
    fn last_layer_scope_keeps_hidden_weights() {
        let (h, pair) = blobs();
        let cfg = CriticConfig {
            restarts: 3,
            scope: TrainableScope::LastLayer,
            train: TrainConfig {
                max_epochs: 10,
                ..CriticConfig::default().train
            },
            ..CriticConfig::default()
        };
        let res = find_critic(&h, &pair, None, &cfg).unwrap();
        assert_eq!(res.critic.weights()[0], h.weights()[0]);
    }

    #[test]
    fn method_names_parse() {
        for m in [CriticMethod::Dis2, CriticMethod::OddSoft, CriticMethod::OddHard] {
            assert_eq!(m.name().parse::<CriticMethod>().unwrap(), m);
        }
        assert!("dis3".parse::<CriticMethod>().is_err());
    }
}
