use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{correctness_curve, granularity_report, GranularityReport, HeuristicPolicy, SelectionPolicy};
use crate::env::{evaluate, Difficulty, SyntheticTask, CURVE_RATIOS};
use crate::error::{Error, Result};

/// One policy on one task at one keep ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub task_index: usize,
    pub seed: u64,
    pub correct: bool,
    pub loss: f64,
    pub true_class_prob: f64,
    pub kept: usize,
    /// Realized equivalent tokens, the mask applied over `layers` layers.
    pub t_eq: f64,
    pub flop_proxy: f64,
    pub granularity: GranularityReport,
}

/// Deterministic top-K evaluation of `policy` across `tasks`.
pub fn evaluate_policy(
    policy: &dyn SelectionPolicy,
    tasks: &[SyntheticTask],
    keep_ratio: f64,
    layers: usize,
    partition: usize,
) -> Result<Vec<TaskEvaluation>> {
    tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let mask = policy.select(task, keep_ratio)?;
            let outcome = evaluate(task, &mask)?;
            let kept = mask.kept();
            let m = partition.min(task.grid.height).min(task.grid.width);
            Ok(TaskEvaluation {
                task_index: i,
                seed: task.seed,
                correct: outcome.correct,
                loss: outcome.loss,
                true_class_prob: outcome.class_probability(task.label),
                kept,
                t_eq: (kept * layers) as f64,
                flop_proxy: (kept * kept * layers) as f64,
                granularity: granularity_report(&mask, task.grid.height, task.grid.width, m)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl LevelAccuracy {
    fn from_flags(flags: impl Iterator<Item = bool>) -> Option<Self> {
        let (mut correct, mut total) = (0, 0);
        for f in flags {
            total += 1;
            correct += f as usize;
        }
        (total > 0).then(|| Self {
            correct,
            total,
            accuracy: correct as f64 / total as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    /// `None` when the suite has no task at that level.
    pub per_level: BTreeMap<Difficulty, Option<LevelAccuracy>>,
    pub overall: LevelAccuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub keep_ratio: f64,
    /// Level of each task from the heuristic correctness curve.
    pub levels: Vec<Difficulty>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn accuracy(&self, method: &str, level: Difficulty) -> Option<f64> {
        let row = self.rows.iter().find(|r| r.method == method)?;
        row.per_level.get(&level).copied().flatten().map(|a| a.accuracy)
    }

    pub fn overall(&self, method: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method).map(|r| r.overall.accuracy)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("keep ratio {:.3}\n{:<16}", self.keep_ratio, "method");
        for level in Difficulty::ALL {
            out.push_str(&format!(" {:>14}", level.name()));
        }
        out.push_str(&format!(" {:>14}\n", "overall"));
        let cell = |a: Option<LevelAccuracy>| match a {
            Some(a) => format!("{:>6.1}% ({:>3})", 100.0 * a.accuracy, a.total),
            None => "absent".to_string(),
        };
        for row in &self.rows {
            out.push_str(&format!("{:<16}", row.method));
            for level in Difficulty::ALL {
                out.push_str(&format!(" {:>14}", cell(row.per_level.get(&level).copied().flatten())));
            }
            out.push_str(&format!(" {:>14}\n", cell(Some(row.overall))));
        }
        out
    }

    /// `method,level,correct,total,accuracy`; absent levels have an empty accuracy.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,level,correct,total,accuracy\n");
        for row in &self.rows {
            let entries = Difficulty::ALL
                .iter()
                .map(|l| (l.name(), row.per_level.get(l).copied().flatten()))
                .chain(std::iter::once(("overall", Some(row.overall))));
            for (name, acc) in entries {
                match acc {
                    Some(a) => out.push_str(&format!("{},{name},{},{},{}\n", row.method, a.correct, a.total, a.accuracy)),
                    None => out.push_str(&format!("{},{name},0,0,\n", row.method)),
                }
            }
        }
        out
    }
}

/// Accuracy of each policy per heuristic-defined level at `keep_ratio`.
pub fn compare_methods(
    policies: &[&dyn SelectionPolicy],
    tasks: &[SyntheticTask],
    keep_ratio: f64,
) -> Result<ComparisonTable> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("compare_methods needs at least one task".into()));
    }
    let levels = tasks
        .par_iter()
        .map(|t| Ok(correctness_curve(&HeuristicPolicy, t, &CURVE_RATIOS)?.level))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(policies.len());
    for policy in policies {
        let evals = evaluate_policy(*policy, tasks, keep_ratio, 1, 1)?;
        let per_level = Difficulty::ALL
            .iter()
            .map(|&level| {
                let flags = evals.iter().zip(&levels).filter(|(_, &l)| l == level).map(|(e, _)| e.correct);
                (level, LevelAccuracy::from_flags(flags))
            })
            .collect();
        rows.push(ComparisonRow {
            method: policy.name().to_string(),
            per_level,
            overall: LevelAccuracy::from_flags(evals.iter().map(|e| e.correct)).expect("non-empty suite"),
        });
    }
    Ok(ComparisonTable {
        keep_ratio,
        levels,
        rows,
    })
}
