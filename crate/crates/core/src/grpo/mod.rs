//! Stage II: the scorer as a Bernoulli policy over keep/drop actions,
//! optimized with group-relative advantages, a clipped ratio objective and a
//! per-token KL anchor to the Stage I policy.

mod credit;
mod objective;
mod reward;
mod trainer;

pub use credit::{credit_assignment_demo, CreditReport, CulpritEnvironment, TokenEstimate};
pub use objective::{bernoulli_kl, grpo_loss_and_grad, token_gradient_estimate, token_gradient_estimate_with_se, ObjectiveStats};
pub use reward::{group_advantages, open_ended_reward, task_reward, trajectory_reward};
pub use trainer::{reference_loss, rollout_group, train_grpo, GrpoIterationLog, RolloutGroup};

use serde::{Deserialize, Serialize};

use crate::env::{TaskMode, TaskOutcome};
use crate::error::{Error, Result};
use crate::mask::RetentionMask;

/// Which task reward each rollout receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Each task's own mode: correctness for verifiable tasks, the anchored
    /// loss reward for open-ended ones.
    Hybrid,
    /// Correctness for every task.
    Verifiable,
    /// Anchored loss reward for every task.
    OpenEnded,
}

impl RewardMode {
    pub fn for_task(self, task_mode: TaskMode) -> TaskMode {
        match self {
            RewardMode::Hybrid => task_mode,
            RewardMode::Verifiable => TaskMode::Verifiable,
            RewardMode::OpenEnded => TaskMode::OpenEnded,
        }
    }
}

/// Importance ratio granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioMode {
    /// One ratio per rollout: product over tokens.
    Trajectory,
    /// One ratio per token, averaged over tokens.
    PerToken,
}

/// Stage II hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coeff: f64,
    /// Reward lost per equivalent token above the target.
    pub budget_penalty: f64,
    /// Slope of the anchored loss reward.
    pub reward_scale: f64,
    /// Target keep ratio; `T_target = keep_ratio * N0 * sum(stage_layers)`.
    pub keep_ratio: f64,
    /// Further keep ratios to train at. Each sampled task draws one of
    /// `keep_ratio` and these uniformly.
    pub extra_keep_ratios: Vec<f64>,
    pub stage_layers: Vec<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub reward_mode: RewardMode,
    pub ratio_mode: RatioMode,
    pub tasks_per_iteration: usize,
    /// Optimizer steps per batch of rollouts; the old policy is the one that
    /// sampled them.
    pub inner_steps: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            clip_eps: 0.2,
            kl_coeff: 0.01,
            budget_penalty: 0.005,
            reward_scale: 1.0,
            keep_ratio: 0.5,
            extra_keep_ratios: Vec::new(),
            stage_layers: vec![1],
            iterations: 500,
            learning_rate: 3e-3,
            reward_mode: RewardMode::Hybrid,
            ratio_mode: RatioMode::Trajectory,
            tasks_per_iteration: 8,
            inner_steps: 1,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidArgument("group_size must be at least 2".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::InvalidArgument("clip_eps must lie in (0, 1)".into()));
        }
        if self.kl_coeff < 0.0 || self.budget_penalty < 0.0 {
            return Err(Error::InvalidArgument("kl_coeff and budget_penalty must be non-negative".into()));
        }
        if self.tasks_per_iteration == 0 || self.inner_steps == 0 || self.stage_layers.is_empty() {
            return Err(Error::InvalidArgument(
                "tasks_per_iteration, inner_steps and stage_layers must be non-empty".into(),
            ));
        }
        for &r in std::iter::once(&self.keep_ratio).chain(&self.extra_keep_ratios) {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidArgument(format!("keep ratio {r} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// All keep ratios sampled during training, primary first.
    pub fn training_keep_ratios(&self) -> Vec<f64> {
        std::iter::once(self.keep_ratio).chain(self.extra_keep_ratios.iter().copied()).collect()
    }

    pub fn t_target(&self, keep_ratio: f64, n0: usize) -> f64 {
        keep_ratio * n0 as f64 * self.stage_layers.iter().sum::<usize>() as f64
    }
}

/// One sampled trajectory and everything derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// The actions; bit i is `a_i`.
    pub mask: RetentionMask,
    pub log_prob_current: f64,
    pub log_prob_old: f64,
    pub outcome: TaskOutcome,
    pub r_task: f64,
    pub t_eq: f64,
    pub reward: f64,
    pub advantage: f64,
    pub forced_keep: bool,
}
