//! Experiment configuration, read from TOML.
//!
//! Every section is optional and falls back to the defaults below. The only
//! environment overrides are `TOKPRUNE_OUTPUT_DIR` (output directory) and
//! `TOKPRUNE_THREADS` (worker threads, read by the binary).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tokprune_core::env::Difficulty;
use tokprune_core::grpo::{GrpoConfig, RewardMode};
use tokprune_core::scorer::{ScorerFlags, DEFAULT_HIDDEN};
use tokprune_core::sft::SftConfig;

use crate::error::{CliError, CliResult};

pub const CONFIG_FORMAT_VERSION: u32 = 1;
pub const OUTPUT_DIR_ENV: &str = "TOKPRUNE_OUTPUT_DIR";
pub const THREADS_ENV: &str = "TOKPRUNE_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    /// Evaluation tasks per level, LV1 to LV3.
    pub counts: [usize; 3],
    /// Training tasks per level.
    pub train_counts: [usize; 3],
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub master_seed: u64,
    /// Share of tasks marked open-ended; the rest are verifiable.
    pub open_ended_fraction: f64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            counts: [100, 100, 100],
            train_counts: [100, 100, 100],
            height: 8,
            width: 8,
            feature_dim: 4,
            master_seed: 2024,
            open_ended_fraction: 0.0,
        }
    }
}

impl SuiteSpec {
    pub fn count(&self, split: Split, level: Difficulty) -> usize {
        let counts = match split {
            Split::Train => &self.train_counts,
            Split::Eval => &self.counts,
        };
        counts[level as usize]
    }

    pub fn num_tokens(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(format!("unknown split {other:?} (expected train or eval)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSpec {
    pub hidden: usize,
    /// Seed for weight initialization and both training stages.
    pub seed: u64,
    pub disable_film_modulator: bool,
    /// Loss-only reward for every task in Stage II.
    pub disable_hybrid_reward: bool,
    pub disable_heuristic_fusion: bool,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            seed: 0,
            disable_film_modulator: false,
            disable_hybrid_reward: false,
            disable_heuristic_fusion: false,
        }
    }
}

impl ScorerSpec {
    pub fn flags(&self) -> ScorerFlags {
        ScorerFlags {
            disable_film_modulator: self.disable_film_modulator,
            disable_heuristic_fusion: self.disable_heuristic_fusion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    TEq,
    FlopProxy,
    Granularity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    pub keep_ratios: Vec<f64>,
    /// Cells per side for spatial entropy.
    pub partition: usize,
    pub metrics: Vec<Metric>,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self {
            keep_ratios: vec![0.5, 0.25],
            partition: 2,
            metrics: vec![Metric::Accuracy, Metric::TEq, Metric::FlopProxy, Metric::Granularity],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub output_dir: PathBuf,
    pub suite: SuiteSpec,
    pub scorer: ScorerSpec,
    pub sft: SftConfig,
    pub grpo: GrpoConfig,
    pub evaluation: EvaluationSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            output_dir: PathBuf::from("runs/default"),
            suite: SuiteSpec::default(),
            scorer: ScorerSpec::default(),
            sft: SftConfig::default(),
            grpo: GrpoConfig::default(),
            evaluation: EvaluationSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> CliResult<Self> {
        let config: Self = toml::from_str(text).map_err(|source| CliError::ConfigParse {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Read, apply the output-directory override and validate.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut config = Self::from_toml(&text, path)?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                config.output_dir = PathBuf::from(dir);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "config format_version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let s = &self.suite;
        if s.height * s.width < 4 || s.feature_dim < 2 {
            return Err(CliError::Config("suite needs at least 4 tokens and 2 feature channels".into()));
        }
        if !(0.0..=1.0).contains(&s.open_ended_fraction) {
            return Err(CliError::Config("open_ended_fraction must lie in [0, 1]".into()));
        }
        if self.sft.n0 != s.num_tokens() {
            return Err(CliError::Config(format!(
                "sft.n0 = {} but the grid has {} tokens",
                self.sft.n0,
                s.num_tokens()
            )));
        }
        if self.scorer.hidden == 0 {
            return Err(CliError::Config("scorer.hidden must be positive".into()));
        }
        if self.evaluation.partition == 0 || self.evaluation.partition > s.height.min(s.width) {
            return Err(CliError::Config("evaluation.partition must lie in 1..=min(height, width)".into()));
        }
        for &r in &self.evaluation.keep_ratios {
            if !(r > 0.0 && r <= 1.0) {
                return Err(CliError::Config(format!("evaluation keep ratio {r} outside (0, 1]")));
            }
        }
        self.sft.validate()?;
        self.grpo.validate()?;
        Ok(())
    }

    /// Stage II settings with the reward ablation applied.
    pub fn effective_grpo(&self) -> GrpoConfig {
        let mut g = self.grpo.clone();
        if self.scorer.disable_hybrid_reward {
            g.reward_mode = RewardMode::OpenEnded;
        }
        g
    }

    pub fn tasks_dir(&self) -> PathBuf {
        self.output_dir.join("tasks")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.output_dir.join("checkpoints")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.output_dir.join("results")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let config = ExperimentConfig::default();
        let text = config.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text, Path::new("x.toml")).unwrap(), config);
    }

    #[test]
    fn sections_are_optional() {
        let c = ExperimentConfig::from_toml("[scorer]\ndisable_film_modulator = true\n", Path::new("x")).unwrap();
        assert!(c.scorer.disable_film_modulator);
        assert!(!c.scorer.disable_hybrid_reward);
        assert_eq!(c.suite, SuiteSpec::default());
    }

    #[test]
    fn ablations_default_off() {
        let f = ExperimentConfig::default().scorer;
        assert!(!f.disable_film_modulator && !f.disable_hybrid_reward && !f.disable_heuristic_fusion);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        assert!(ExperimentConfig::from_toml("[scorer]\nfilm = false\n", Path::new("x")).is_err());
        assert!(ExperimentConfig::from_toml("format_version = 2\n", Path::new("x")).is_err());
        assert!(ExperimentConfig::from_toml("[suite]\nheight = 4\n", Path::new("x")).is_err());
    }

    #[test]
    fn reward_ablation_forces_loss_reward() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.effective_grpo().reward_mode, RewardMode::Hybrid);
        c.scorer.disable_hybrid_reward = true;
        assert_eq!(c.effective_grpo().reward_mode, RewardMode::OpenEnded);
    }
}
