use crate::env::SyntheticTask;
use crate::error::Result;
use crate::mask::{keep_count, RetentionMask};
use crate::scorer::{score_traced, Conditioning, ScorerParams};

/// Anything that ranks tokens for deterministic top-K selection.
pub trait SelectionPolicy: Sync {
    fn name(&self) -> &str;

    /// Per-token scores at the given keep ratio; higher is kept first.
    fn scores(&self, task: &SyntheticTask, keep_ratio: f64) -> Result<Vec<f64>>;

    fn select(&self, task: &SyntheticTask, keep_ratio: f64) -> Result<RetentionMask> {
        let scores = self.scores(task, keep_ratio)?;
        RetentionMask::top_k(&scores, keep_count(keep_ratio, task.num_tokens()))
    }
}

/// The task's own heuristic prior.
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicPolicy;

impl SelectionPolicy for HeuristicPolicy {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn scores(&self, task: &SyntheticTask, _keep_ratio: f64) -> Result<Vec<f64>> {
        Ok(task.grid.heuristic_scores.clone())
    }
}

/// Same score for every token, so top-K keeps the lowest indices.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantPolicy;

impl SelectionPolicy for ConstantPolicy {
    fn name(&self) -> &str {
        "constant"
    }

    fn scores(&self, task: &SyntheticTask, _keep_ratio: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; task.num_tokens()])
    }
}

/// A trained scorer, conditioned on the keep ratio it is asked for.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub name: String,
    pub params: ScorerParams,
}

impl LearnedPolicy {
    pub fn new(name: impl Into<String>, params: ScorerParams) -> Self {
        Self {
            name: name.into(),
            params,
        }
    }
}

impl SelectionPolicy for LearnedPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn scores(&self, task: &SyntheticTask, keep_ratio: f64) -> Result<Vec<f64>> {
        let all = RetentionMask::all(task.num_tokens());
        Ok(score_traced(&self.params, &task.grid, &all, Conditioning::keep(keep_ratio))?.output.s_final)
    }
}
