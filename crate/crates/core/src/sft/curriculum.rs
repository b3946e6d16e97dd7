use serde::{Deserialize, Serialize};

use super::SftConfig;
use crate::budget::{scale_ratios_to_target, BudgetSpec};
use crate::error::{Error, Result};

/// Budget in force during one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumStep {
    pub t_eq_target: f64,
    pub stage_keep_ratios: Vec<f64>,
    pub budget: BudgetSpec,
}

impl CurriculumStep {
    /// Keep ratio of a single selection that spends the target over all
    /// layers: `T_eq / (N0 * sum L_i)`. Equals the stage ratio for one stage.
    pub fn effective_keep_ratio(&self) -> f64 {
        self.t_eq_target / (self.budget.n0 as f64 * self.budget.total_layers() as f64)
    }
}

/// Piecewise-constant lookup of the curriculum table, with per-stage keep
/// ratios rescaled uniformly to meet the target.
pub fn curriculum_target(config: &SftConfig, epoch: usize) -> Result<CurriculumStep> {
    let first = config
        .curriculum
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty curriculum".into()))?;
    let mut target = first.1;
    for &(start, t) in &config.curriculum {
        if start <= epoch {
            target = t;
        }
    }
    let ratios = scale_ratios_to_target(config.n0, &config.stage_layers, &config.stage_base_ratios, target)?;
    let mut budget = BudgetSpec::from_stages(config.n0, config.stage_layers.clone(), ratios.clone())?;
    budget.t_target = target;
    Ok(CurriculumStep {
        t_eq_target: target,
        stage_keep_ratios: ratios,
        budget,
    })
}

/// Curriculum table that lowers the keep ratio linearly from `from_ratio` to
/// `to_ratio` over `ramp_epochs` in `steps` levels, then holds the last level.
pub fn linear_curriculum(
    n0: usize,
    total_layers: usize,
    from_ratio: f64,
    to_ratio: f64,
    ramp_epochs: usize,
    steps: usize,
) -> Vec<(usize, f64)> {
    let full = (n0 * total_layers) as f64;
    if steps <= 1 {
        return vec![(0, full * to_ratio)];
    }
    (0..steps)
        .map(|s| {
            let frac = s as f64 / (steps - 1) as f64;
            let epoch = (frac * ramp_epochs as f64).round() as usize;
            (epoch, full * (from_ratio + (to_ratio - from_ratio) * frac))
        })
        .collect()
}
