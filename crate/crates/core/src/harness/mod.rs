//! Few-shot episodes, training loop, evaluation and the multi-seed protocol.

pub mod data;
pub mod episode;
pub mod metrics;
pub mod pretrain;
pub mod protocol;
pub mod synth;
pub mod train;

pub use data::{load_corpus, parse_corpus, Dataset, Record};
pub use episode::{sample_episode, Episode};
pub use metrics::{format_mean_std, mean_std, spearman, MetricReport, SeedResult};
pub use pretrain::{masked_perplexity, pretrain_mlm, PretrainConfig};
pub use protocol::{k_trend, run_protocol, sweep_k, sweep_prompt_length, sweep_records, Experiment, SweepRow};
pub use synth::{generate_synthetic_task, shuffle_labels, SynthSpec, SynthTask, VocabSpec};
pub use train::{evaluate, train_episode, EpisodeOutcome, TrainTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation metric of a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    F1,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
        }
    }
}

pub const DEFAULT_SEEDS: [u64; 5] = [13, 21, 42, 87, 100];
pub const SEED_OFFSET_VAR: &str = "STT_LAB_SEED_OFFSET";

/// Training and protocol hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub prompt_length: usize,
    pub seeds: Vec<u64>,
    pub dev_eval_every: usize,
    /// Return the best-on-dev checkpoint; otherwise the final one.
    pub select_on_dev: bool,
    pub clip_norm: Option<f64>,
    /// Worker threads for seed-parallel runs.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            steps: 500,
            batch_size: 2,
            lr: 2e-5,
            prompt_length: 25,
            seeds: DEFAULT_SEEDS.to_vec(),
            dev_eval_every: 50,
            select_on_dev: true,
            clip_norm: None,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.dev_eval_every == 0 {
            return Err(Error::Config("dev evaluation interval must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Seed shift from the environment; unset means 0.
pub fn seed_offset_from_env() -> Result<i64> {
    match std::env::var(SEED_OFFSET_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_OFFSET_VAR} must be an integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

/// Applies a signed shift to every seed.
pub fn shifted_seeds(seeds: &[u64], offset: i64) -> Vec<u64> {
    seeds.iter().map(|&s| s.wrapping_add_signed(offset)).collect()
}
