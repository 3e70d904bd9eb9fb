//! Sweep settings loaded from a flat TOML key-value file.
//!
//! Every key is optional and overrides the scale preset:
//!
//! ```toml
//! scale = "desk"          # or "full"
//! draws = 100
//! repeats = 4
//! bins = 20
//! n_train = 500
//! n_val = 300
//! label_noise_sd = 0.05
//! seed = 0
//! delta = 0.01
//! mode = "full"          # or "nonoverlap-soft"
//! restarts = 3
//! critic_epochs = 300
//! critic_lr = 0.01
//! h_epochs = 300
//! h_lr = 0.001
//! domain_epochs = 2000
//! domain_lr = 0.0001
//! domain_batch = 32
//! output_dir = "out"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweep::{Scale, SweepConfig};
use crate::bounds::DiscrepancyMode;
use crate::{Error, Result};

/// Environment variable that overrides the output directory of the file.
pub const OUTPUT_DIR_ENV: &str = "ODDBOUND_OUTPUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub scale: Option<Scale>,
    pub draws: Option<usize>,
    pub repeats: Option<usize>,
    pub bins: Option<usize>,
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub label_noise_sd: Option<f64>,
    pub seed: Option<u64>,
    pub delta: Option<f64>,
    pub mode: Option<DiscrepancyMode>,
    pub restarts: Option<usize>,
    pub critic_epochs: Option<usize>,
    pub critic_lr: Option<f64>,
    pub h_epochs: Option<usize>,
    pub h_lr: Option<f64>,
    pub domain_epochs: Option<usize>,
    pub domain_lr: Option<f64>,
    pub domain_batch: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl SweepFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(Error::io_at(path))?)
    }

    /// Later layers win: `self` over `other`.
    pub fn or(self, other: SweepFile) -> SweepFile {
        SweepFile {
            scale: self.scale.or(other.scale),
            draws: self.draws.or(other.draws),
            repeats: self.repeats.or(other.repeats),
            bins: self.bins.or(other.bins),
            n_train: self.n_train.or(other.n_train),
            n_val: self.n_val.or(other.n_val),
            label_noise_sd: self.label_noise_sd.or(other.label_noise_sd),
            seed: self.seed.or(other.seed),
            delta: self.delta.or(other.delta),
            mode: self.mode.or(other.mode),
            restarts: self.restarts.or(other.restarts),
            critic_epochs: self.critic_epochs.or(other.critic_epochs),
            critic_lr: self.critic_lr.or(other.critic_lr),
            h_epochs: self.h_epochs.or(other.h_epochs),
            h_lr: self.h_lr.or(other.h_lr),
            domain_epochs: self.domain_epochs.or(other.domain_epochs),
            domain_lr: self.domain_lr.or(other.domain_lr),
            domain_batch: self.domain_batch.or(other.domain_batch),
            output_dir: self.output_dir.or(other.output_dir),
        }
    }

    /// Builds a sweep config from the scale preset plus these overrides.
    /// The output directory also honours [`OUTPUT_DIR_ENV`] when the file
    /// leaves it unset.
    pub fn resolve(&self) -> SweepConfig {
        self.resolve_with_env(std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
    }

    pub fn resolve_with_env(&self, env_dir: Option<PathBuf>) -> SweepConfig {
        let mut c = SweepConfig::for_scale(self.scale.unwrap_or(Scale::Desk));
        macro_rules! set {
            ($field:ident => $($target:tt)+) => {
                if let Some(v) = self.$field.clone() {
                    c.$($target)+ = v;
                }
            };
        }
        set!(draws => draws);
        set!(repeats => repeats);
        set!(bins => bins);
        set!(n_train => n_train);
        set!(n_val => n_val);
        set!(label_noise_sd => label_noise_sd);
        set!(seed => seed);
        set!(delta => bound.delta);
        set!(mode => bound.mode);
        set!(restarts => critic.restarts);
        set!(critic_epochs => critic.train.max_epochs);
        set!(critic_lr => critic.train.learning_rate);
        set!(h_epochs => h_train.max_epochs);
        set!(h_lr => h_train.learning_rate);
        set!(domain_epochs => domain.train.max_epochs);
        set!(domain_lr => domain.train.learning_rate);
        set!(domain_batch => domain.train.batch_size);
        c.output_dir = self.output_dir.clone().or(env_dir);
        c
    }
}
