//! Diagnostics: correctness-versus-budget curves and the difficulty levels
//! they induce, method comparison stratified by level, spatial granularity of
//! kept tokens and a quadratic compute proxy.

mod compare;
mod granularity;
mod policy;

pub use compare::{compare_methods, evaluate_policy, ComparisonRow, ComparisonTable, LevelAccuracy, TaskEvaluation};
pub use granularity::{granularity_report, max_component_ratio, spatial_entropy, GranularityReport};
pub use policy::{ConstantPolicy, HeuristicPolicy, LearnedPolicy, SelectionPolicy};

use serde::{Deserialize, Serialize};

use crate::budget::BudgetSpec;
use crate::env::{evaluate, Difficulty, SyntheticTask};
use crate::error::{ensure_len, Error, Result};

/// Default spatial partition for entropy on small grids.
pub const DEFAULT_PARTITION: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyProfile {
    pub keep_ratios: Vec<f64>,
    pub correct_flags: Vec<bool>,
    pub true_class_prob: Vec<f64>,
    pub transitions: usize,
    pub level: Difficulty,
}

impl DifficultyProfile {
    /// Profile from flags alone; probabilities are left empty.
    pub fn from_flags(keep_ratios: Vec<f64>, correct_flags: Vec<bool>) -> Self {
        let transitions = count_transitions(&correct_flags);
        Self {
            keep_ratios,
            correct_flags,
            true_class_prob: Vec::new(),
            transitions,
            level: Difficulty::from_transitions(transitions),
        }
    }
}

/// Number of adjacent flag pairs that differ.
pub fn count_transitions(flags: &[bool]) -> usize {
    flags.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Apply the policy's top-K at each ratio and record the outcome.
pub fn correctness_curve(
    policy: &dyn SelectionPolicy,
    task: &SyntheticTask,
    keep_ratios: &[f64],
) -> Result<DifficultyProfile> {
    if keep_ratios.is_empty() {
        return Err(Error::InvalidArgument("correctness curve needs at least one keep ratio".into()));
    }
    if keep_ratios.windows(2).any(|w| w[1] < w[0]) || keep_ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "keep ratios must be ascending in (0, 1]: {keep_ratios:?}"
        )));
    }
    let mut flags = Vec::with_capacity(keep_ratios.len());
    let mut probs = Vec::with_capacity(keep_ratios.len());
    for &r in keep_ratios {
        let outcome = evaluate(task, &policy.select(task, r)?)?;
        flags.push(outcome.correct);
        probs.push(outcome.class_probability(task.label));
    }
    let mut profile = DifficultyProfile::from_flags(keep_ratios.to_vec(), flags);
    profile.true_class_prob = probs;
    Ok(profile)
}

pub fn classify_difficulty(profile: &DifficultyProfile) -> Difficulty {
    Difficulty::from_transitions(count_transitions(&profile.correct_flags))
}

/// `sum_i kept_i^2 * L_i`, a stand-in for attention cost.
pub fn flop_proxy(budget: &BudgetSpec, kept_per_stage: &[usize]) -> Result<f64> {
    ensure_len("flop_proxy stages", budget.num_stages(), kept_per_stage.len())?;
    Ok(kept_per_stage
        .iter()
        .zip(&budget.stage_layers)
        .map(|(&k, &l)| (k * k * l) as f64)
        .sum())
}
