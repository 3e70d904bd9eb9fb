//! One end-to-end bound estimate on an ingested CSV.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_report, BoundConfig, BoundReport};
use crate::critic::{find_critic, CriticConfig, CriticMetadata, CriticMethod};
use crate::data::{load_csv, CsvMode, Dataset, DatasetPair};
use crate::losses::LossKind;
use crate::nn::{train, Mlp, TrainConfig, TrainableScope};
use crate::overlap::{hard_weights, soft_weights, train_domain_classifier, DomainClassifierConfig};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleConfig {
    pub mode: CsvMode,
    pub method: CriticMethod,
    /// Fraction of each domain held out for bound evaluation.
    pub val_fraction: f64,
    pub seed: u64,
    /// Training of the linear ĥ in features mode.
    pub h_train: TrainConfig,
    pub domain: DomainClassifierConfig,
    pub critic: CriticConfig,
    /// Hard non-overlap mode needs `method = odd-hard`, which produces hard
    /// weights; the other methods produce soft weights.
    pub bound: BoundConfig,
}

impl Default for SingleConfig {
    fn default() -> Self {
        Self {
            mode: CsvMode::Features,
            method: CriticMethod::OddSoft,
            val_fraction: 0.5,
            seed: 0,
            h_train: TrainConfig {
                learning_rate: 1e-3,
                max_epochs: 500,
                batch_size: 0,
                seed: 0,
                convergence_tol: 1e-6,
                convergence_patience: 10,
            },
            domain: DomainClassifierConfig::default(),
            critic: CriticConfig {
                scope: TrainableScope::LastLayer,
                ..CriticConfig::default()
            },
            bound: BoundConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleOutput {
    pub method: CriticMethod,
    pub report: BoundReport,
    pub critic: CriticMetadata,
    pub domain_heldout_balanced_accuracy: Option<f64>,
}

fn split(d: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = d.n();
    let n_val = ((n as f64) * val_fraction).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::input(format!(
            "cannot split {n} rows into train and validation halves"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed));
    let (val, tr) = idx.split_at(n_val);
    let (mut val, mut tr) = (val.to_vec(), tr.to_vec());
    val.sort_unstable();
    tr.sort_unstable();
    Ok((d.select(&tr)?, d.select(&val)?))
}

/// Splits each domain into seeded train/validation parts.
pub fn split_pair(pair: &DatasetPair, val_fraction: f64, seed: u64) -> Result<(DatasetPair, DatasetPair)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::config("val_fraction must be in (0, 1)"));
    }
    let (s_tr, s_val) = split(&pair.source, val_fraction, seed::derive(seed, 0))?;
    let (t_tr, t_val) = split(&pair.target, val_fraction, seed::derive(seed, 1))?;
    Ok((DatasetPair::new(s_tr, t_tr)?, DatasetPair::new(s_val, t_val)?))
}

pub fn run_single(csv_path: impl AsRef<Path>, config: &SingleConfig) -> Result<SingleOutput> {
    let pair = load_csv(csv_path, config.mode)?;
    run_single_pair(&pair, config)
}

pub fn run_single_pair(pair: &DatasetPair, config: &SingleConfig) -> Result<SingleOutput> {
    if !pair.source.is_fully_labeled() {
        return Err(Error::MissingLabels("source rows"));
    }
    let (train_pair, val_pair) = split_pair(pair, config.val_fraction, config.seed)?;

    let h_hat = match config.mode {
        CsvMode::Logits => Mlp::identity(pair.dim())?,
        CsvMode::Features => {
            let classes = [pair.source.max_label(), pair.target.max_label()]
                .into_iter()
                .flatten()
                .max()
                .unwrap_or(0) as usize
                + 1;
            let dims = [pair.dim(), classes.max(2)];
            let cfg = TrainConfig {
                seed: seed::derive(config.seed, 2),
                ..config.h_train
            };
            train(
                Mlp::new(&dims, seed::derive(config.seed, 3))?,
                &train_pair.source,
                LossKind::Logistic,
                None,
                &cfg,
            )?
            .model
        }
    };

    let mut domain_cfg = config.domain.clone();
    domain_cfg.train.seed = seed::derive(config.seed, 4);
    let classifier = train_domain_classifier(&train_pair, &domain_cfg)?;
    let (train_w, val_w) = match config.method {
        CriticMethod::OddHard => (
            hard_weights(&classifier, &train_pair)?,
            hard_weights(&classifier, &val_pair)?,
        ),
        CriticMethod::OddSoft | CriticMethod::Dis2 => (
            soft_weights(&classifier, &train_pair)?,
            soft_weights(&classifier, &val_pair)?,
        ),
    };

    let critic_cfg = CriticConfig {
        method: config.method,
        train: TrainConfig {
            seed: seed::derive(config.seed, 5),
            ..config.critic.train
        },
        ..config.critic.clone()
    };
    let critic = find_critic(&h_hat, &train_pair, Some(&train_w), &critic_cfg)?;
    let report = bound_report(&h_hat, &critic, &val_pair, &val_pair.source, Some(&val_w), &config.bound)?;
    Ok(SingleOutput {
        method: config.method,
        report,
        critic: critic.metadata(),
        domain_heldout_balanced_accuracy: classifier.heldout_balanced_accuracy,
    })
}
