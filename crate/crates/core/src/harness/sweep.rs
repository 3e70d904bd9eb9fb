//! Synthetic overlap sweep: many (data draw, ĥ, domain classifier, critic)
//! runs binned by overlap factor.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::records::{BinSummary, MethodBin, RunRecord, SweepSummary};
use crate::bounds::{bound_report, BoundConfig, DiscrepancyMode};
use crate::critic::{find_critic, CriticConfig, CriticMethod};
use crate::data::{generate_pair, SyntheticConfig};
use crate::losses::LossKind;
use crate::nn::{train, Mlp, TrainConfig};
use crate::overlap::{soft_weights, train_domain_classifier, DomainClassifierConfig};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Desk,
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::config(format!("unknown scale `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Independent overlap-factor draws.
    pub draws: usize,
    /// Runs per draw, each with fresh data, ĥ, classifier and critics.
    pub repeats: usize,
    pub bins: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub label_noise_sd: f64,
    pub h_hidden: Vec<usize>,
    pub h_train: TrainConfig,
    pub domain: DomainClassifierConfig,
    /// Shared critic settings; the method field is overridden per run.
    pub critic: CriticConfig,
    /// ODD variant compared against Dis².
    pub odd_method: CriticMethod,
    /// Applied to both methods' reports. Hard non-overlap mode is rejected
    /// since the sweep computes soft weights.
    pub bound: BoundConfig,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

impl SweepConfig {
    pub fn desk() -> Self {
        Self {
            draws: 100,
            repeats: 4,
            bins: 20,
            n_train: 500,
            n_val: 300,
            h_hidden: vec![16, 16],
            label_noise_sd: 0.05,
            h_train: TrainConfig {
                learning_rate: 1e-3,
                max_epochs: 300,
                batch_size: 0,
                seed: 0,
                convergence_tol: 0.0,
                convergence_patience: 10,
            },
            domain: DomainClassifierConfig {
                hidden: Some(vec![16, 16]),
                ..DomainClassifierConfig::default()
            },
            critic: {
                let mut c = CriticConfig {
                    restarts: 3,
                    ..CriticConfig::default()
                };
                c.train.learning_rate = 1e-2;
                c
            },
            odd_method: CriticMethod::OddSoft,
            bound: BoundConfig::default(),
            seed: 0,
            output_dir: None,
        }
    }

    pub fn full() -> Self {
        let mut c = Self::desk();
        c.repeats = 40;
        c.n_train = 2000;
        c.n_val = 1250;
        c.critic.restarts = 30;
        c
    }

    pub fn for_scale(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Full => Self::full(),
        }
    }

    pub fn total_runs(&self) -> usize {
        self.draws * self.repeats
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.repeats == 0 {
            return Err(Error::config("draws and repeats must be positive"));
        }
        if self.bins == 0 {
            return Err(Error::config("bins must be positive"));
        }
        if self.draws < self.bins {
            return Err(Error::config("draws must be at least bins"));
        }
        if self.n_train == 0 || self.n_val == 0 {
            return Err(Error::config("split sizes must be positive"));
        }
        if self.odd_method == CriticMethod::Dis2 {
            return Err(Error::config("odd_method must be an ODD variant"));
        }
        if self.odd_method == CriticMethod::OddHard {
            return Err(Error::config("the synthetic sweep uses soft weights; odd-hard is not supported here"));
        }
        if self.bound.mode == DiscrepancyMode::NonoverlapHard {
            return Err(Error::config("the synthetic sweep uses soft weights; nonoverlap-hard is not supported here"));
        }
        self.h_train.validate()?;
        self.domain.train.validate()?;
        self.critic.validate()?;
        self.bound.validate()
    }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Bin index of an overlap factor in `[0, 1]`.
pub fn bin_of(overlap_factor: f64, bins: usize) -> usize {
    ((overlap_factor * bins as f64).floor() as usize).min(bins - 1)
}

pub struct SweepOutput {
    pub records: Vec<RunRecord>,
    pub summary: SweepSummary,
}

/// Seed and overlap factor for run `run_id`. Repeats of one draw share the
/// factor.
pub fn run_plan(config: &SweepConfig, run_id: usize) -> (u64, f64) {
    let draw = run_id / config.repeats;
    let mut rng = seed::rng(seed::derive(config.seed, draw as u64));
    let f: f64 = rng.gen();
    (seed::derive(seed::derive(config.seed, u64::MAX), run_id as u64), f)
}

struct RunSeeds {
    data: u64,
    h_init: u64,
    h_train: u64,
    domain: u64,
    critic: u64,
}

impl RunSeeds {
    fn new(run_seed: u64) -> Self {
        Self {
            data: seed::derive(run_seed, 1),
            h_init: seed::derive(run_seed, 2),
            h_train: seed::derive(run_seed, 3),
            domain: seed::derive(run_seed, 4),
            critic: seed::derive(run_seed, 5),
        }
    }
}

/// Runs one sweep entry and returns its Dis² and ODD rows. Errors become
/// failure rows.
pub fn run_one(config: &SweepConfig, run_id: usize) -> [RunRecord; 2] {
    let (run_seed, f) = run_plan(config, run_id);
    let methods = [CriticMethod::Dis2, config.odd_method];
    match run_one_inner(config, run_id, run_seed, f) {
        Ok(rows) => rows,
        Err(e) => {
            let msg = e.to_string();
            methods.map(|m| RunRecord::failed(run_id, run_seed, f, m.name(), &msg))
        }
    }
}

fn run_one_inner(config: &SweepConfig, run_id: usize, run_seed: u64, f: f64) -> Result<[RunRecord; 2]> {
    let seeds = RunSeeds::new(run_seed);
    let mut data_cfg = SyntheticConfig::random(seeds.data, f, config.n_train, config.n_val);
    data_cfg.seed = seeds.data;
    data_cfg.label_noise_sd = config.label_noise_sd;
    let splits = generate_pair(&data_cfg)?;

    let mut dims = vec![2];
    dims.extend(&config.h_hidden);
    dims.push(2);
    let h_cfg = TrainConfig {
        seed: seeds.h_train,
        ..config.h_train
    };
    let h_hat = train(
        Mlp::new(&dims, seeds.h_init)?,
        &splits.train.source,
        LossKind::Logistic,
        None,
        &h_cfg,
    )?
    .model;

    let mut domain_cfg = config.domain.clone();
    domain_cfg.train.seed = seeds.domain;
    let classifier = train_domain_classifier(&splits.train, &domain_cfg)?;
    let train_weights = soft_weights(&classifier, &splits.train)?;
    let val_weights = soft_weights(&classifier, &splits.val)?;

    let mut rows = Vec::with_capacity(2);
    for method in [CriticMethod::Dis2, config.odd_method] {
        let mut critic_cfg = config.critic.clone();
        critic_cfg.method = method;
        critic_cfg.train.seed = seeds.critic;
        let result = find_critic(&h_hat, &splits.train, Some(&train_weights), &critic_cfg)?;
        let report = bound_report(
            &h_hat,
            &result,
            &splits.val,
            &splits.val.source,
            Some(&val_weights),
            &config.bound,
        )?;
        rows.push(RunRecord {
            run_id,
            seed: run_seed,
            overlap_factor: f,
            method: method.name().to_string(),
            source_acc: Some(report.source_val_accuracy),
            true_target_acc: report.true_target_accuracy,
            pred_lower: Some(report.predicted_accuracy_lower),
            disc_full: Some(report.discrepancy_full),
            disc_nonoverlap: Some(report.discrepancy_nonoverlap),
            overlap_disc: Some(report.overlap_discrepancy),
            concentration: Some(report.concentration_term),
            assumption2_gap: report.assumption2_gap,
            valid: report.valid,
            failure: None,
            source_agree: Some(report.source_agreement),
            target_agree: Some(report.target_agreement),
        });
    }
    let [a, b]: [RunRecord; 2] = rows.try_into().expect("two methods");
    Ok([a, b])
}

/// Runs every (draw, repeat) entry. Work is spread over the rayon pool and
/// collected in run order, so results do not depend on thread count.
/// `progress` is called with the number of finished runs.
pub fn run_sweep(config: &SweepConfig, progress: impl Fn(usize, usize) + Sync) -> Result<SweepOutput> {
    config.validate()?;
    let total = config.total_runs();
    let done = AtomicUsize::new(0);
    let records: Vec<RunRecord> = (0..total)
        .into_par_iter()
        .map(|run_id| {
            let rows = run_one(config, run_id);
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            progress(k, total);
            rows
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summary = summarize(&records, config.bins, config.odd_method.name())?;
    Ok(SweepOutput { records, summary })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn method_bin(rows: &[&RunRecord]) -> MethodBin {
    let ok: Vec<&RunRecord> = rows.iter().copied().filter(|r| !r.is_failure()).collect();
    MethodBin {
        pred_lower: mean(ok.iter().filter_map(|r| r.pred_lower)),
        source_agree: mean(ok.iter().filter_map(|r| r.source_agree)),
        target_agree: mean(ok.iter().filter_map(|r| r.target_agree)),
        disc_full: mean(ok.iter().filter_map(|r| r.disc_full)),
        disc_nonoverlap: mean(ok.iter().filter_map(|r| r.disc_nonoverlap)),
        coverage: mean(ok.iter().filter_map(|r| r.valid).map(|v| if v { 1.0 } else { 0.0 })),
    }
}

/// Per-bin means of the per-run rows. Bins with no successful rows carry
/// `None` means.
pub fn summarize(records: &[RunRecord], bins: usize, odd_method: &str) -> Result<SweepSummary> {
    if bins == 0 {
        return Err(Error::config("bins must be positive"));
    }
    let mut out = Vec::with_capacity(bins);
    for b in 0..bins {
        let in_bin: Vec<&RunRecord> = records
            .iter()
            .filter(|r| bin_of(r.overlap_factor, bins) == b)
            .collect();
        let mut ids: Vec<usize> = in_bin.iter().map(|r| r.run_id).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut failed: Vec<usize> = in_bin.iter().filter(|r| r.is_failure()).map(|r| r.run_id).collect();
        failed.sort_unstable();
        failed.dedup();
        let dis2: Vec<&RunRecord> = in_bin.iter().copied().filter(|r| r.method == "dis2").collect();
        let odd: Vec<&RunRecord> = in_bin.iter().copied().filter(|r| r.method == odd_method).collect();
        let ok_dis2 = || dis2.iter().filter(|r| !r.is_failure());
        out.push(BinSummary {
            bin: b,
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            runs: ids.len(),
            failures: failed.len(),
            overlap_factor: mean(ok_dis2().map(|r| r.overlap_factor)),
            true_target_acc: mean(ok_dis2().filter_map(|r| r.true_target_acc)),
            assumption2_gap: mean(ok_dis2().filter_map(|r| r.assumption2_gap)),
            dis2: method_bin(&dis2),
            odd: method_bin(&odd),
        });
    }
    Ok(SweepSummary { bins: out })
}
