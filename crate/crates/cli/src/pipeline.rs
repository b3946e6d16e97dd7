//! Stage I then Stage II, and multi-method evaluation.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tokprune_core::analysis::{
    compare_methods, evaluate_policy, HeuristicPolicy, LearnedPolicy, LevelAccuracy, SelectionPolicy,
};
use tokprune_core::env::{Difficulty, SyntheticTask};
use tokprune_core::grpo::{train_grpo, GrpoIterationLog};
use tokprune_core::numeric::SeededRng;
use tokprune_core::scorer::ScorerParams;
use tokprune_core::sft::{train_sft, SftEpochLog};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::report::{aligned_table, csv, fmt4};

pub fn initial_params(config: &ExperimentConfig) -> CliResult<ScorerParams> {
    let mut rng = SeededRng::new(config.scorer.seed).derive("init");
    Ok(ScorerParams::new(
        config.suite.feature_dim,
        config.scorer.hidden,
        config.scorer.flags(),
        &mut rng,
    )?)
}

pub fn run_sft(config: &ExperimentConfig, tasks: &[SyntheticTask]) -> CliResult<(ScorerParams, Vec<SftEpochLog>)> {
    let init = initial_params(config)?;
    let rng = SeededRng::new(config.scorer.seed).derive("sft");
    train_sft(tasks, &config.sft, &init, &rng).map_err(|source| CliError::Stage { stage: "sft", source })
}

/// Stage II from `sft`; zero iterations returns `sft` unchanged.
pub fn run_grpo(
    config: &ExperimentConfig,
    tasks: &[SyntheticTask],
    sft: &ScorerParams,
) -> CliResult<(ScorerParams, Vec<GrpoIterationLog>)> {
    let rng = SeededRng::new(config.scorer.seed).derive("grpo");
    train_grpo(tasks, &config.effective_grpo(), sft, &rng).map_err(|source| CliError::Stage { stage: "grpo", source })
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub sft: ScorerParams,
    pub rl: ScorerParams,
    pub sft_log: Vec<SftEpochLog>,
    pub grpo_log: Vec<GrpoIterationLog>,
    /// Wall-clock seconds per stage; never part of checksummed output.
    pub timings: BTreeMap<String, f64>,
}

pub fn run_training(config: &ExperimentConfig, tasks: &[SyntheticTask]) -> CliResult<TrainingOutcome> {
    let mut timings = BTreeMap::new();
    let t = Instant::now();
    let (sft, sft_log) = run_sft(config, tasks)?;
    timings.insert("sft".to_string(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let (rl, grpo_log) = run_grpo(config, tasks, &sft)?;
    timings.insert("grpo".to_string(), t.elapsed().as_secs_f64());
    Ok(TrainingOutcome {
        sft,
        rl,
        sft_log,
        grpo_log,
        timings,
    })
}

/// Aligned text view of both training logs.
pub fn training_log_text(sft: &[SftEpochLog], grpo: &[GrpoIterationLog]) -> String {
    let rows: Vec<Vec<String>> = sft
        .iter()
        .map(|l| {
            vec![
                l.epoch.to_string(),
                format!("{:.1}", l.t_eq_target),
                fmt4(l.keep_ratio),
                fmt4(l.l_distill),
                fmt4(l.l_kl),
                fmt4(l.l_ratio),
                fmt4(l.total),
                fmt4(l.accuracy),
            ]
        })
        .collect();
    let mut out = String::from("stage I\n");
    out += &aligned_table(&["epoch", "t_eq", "keep", "distill", "kl", "ratio", "total", "acc"], &rows);
    let rows: Vec<Vec<String>> = grpo
        .iter()
        .map(|l| {
            vec![
                l.iteration.to_string(),
                fmt4(l.mean_reward),
                fmt4(l.min_reward),
                fmt4(l.max_reward),
                fmt4(l.accuracy),
                format!("{:.2}", l.mean_t_eq),
                fmt4(l.kl),
                fmt4(l.clip_fraction),
                fmt4(l.grad_norm),
            ]
        })
        .collect();
    out += "\nstage II\n";
    out += &aligned_table(
        &["iter", "reward", "min", "max", "acc", "t_eq", "kl", "clip", "grad"],
        &rows,
    );
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub accuracy: f64,
    pub per_level: BTreeMap<Difficulty, Option<LevelAccuracy>>,
    pub mean_t_eq: f64,
    pub mean_flop_proxy: f64,
    pub mean_max_component_ratio: f64,
    pub mean_spatial_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub keep_ratio: f64,
    pub t_target: f64,
    pub methods: Vec<MethodMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format_version: u32,
    pub num_tasks: usize,
    /// Task count per level from the heuristic correctness curves.
    pub level_counts: BTreeMap<Difficulty, usize>,
    pub budgets: Vec<BudgetReport>,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

impl EvaluationReport {
    pub fn method(&self, keep_ratio: f64, method: &str) -> Option<&MethodMetrics> {
        self.budgets
            .iter()
            .find(|b| b.keep_ratio == keep_ratio)?
            .methods
            .iter()
            .find(|m| m.method == method)
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for b in &self.budgets {
            for m in &b.methods {
                let mut row = vec![m.method.clone(), fmt4(b.keep_ratio), fmt4(m.accuracy)];
                for level in Difficulty::ALL {
                    row.push(match m.per_level.get(&level).copied().flatten() {
                        Some(a) => fmt4(a.accuracy),
                        None => String::new(),
                    });
                }
                row.extend([
                    format!("{:.2}", m.mean_t_eq),
                    format!("{:.1}", m.mean_flop_proxy),
                    fmt4(m.mean_max_component_ratio),
                    fmt4(m.mean_spatial_entropy),
                ]);
                rows.push(row);
            }
        }
        rows
    }

    const HEADER: [&'static str; 10] = [
        "method", "keep_ratio", "accuracy", "lv1", "lv2", "lv3", "t_eq", "flop_proxy", "max_component", "entropy",
    ];

    /// Absent levels are empty cells.
    pub fn to_csv(&self) -> String {
        csv(&Self::HEADER, &self.rows())
    }

    pub fn to_text(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .rows()
            .into_iter()
            .map(|r| r.into_iter().map(|c| if c.is_empty() { "absent".into() } else { c }).collect())
            .collect();
        aligned_table(&Self::HEADER, &rows)
    }
}

/// Heuristic baseline plus the given learned policies at every keep ratio.
pub fn evaluate_methods(
    config: &ExperimentConfig,
    learned: &[LearnedPolicy],
    tasks: &[SyntheticTask],
    keep_ratios: &[f64],
) -> CliResult<EvaluationReport> {
    let mut policies: Vec<&dyn SelectionPolicy> = vec![&HeuristicPolicy];
    policies.extend(learned.iter().map(|p| p as &dyn SelectionPolicy));
    let layers: usize = config.grpo.stage_layers.iter().sum();
    let n = config.suite.num_tokens();
    let mut level_counts = BTreeMap::new();
    let mut budgets = Vec::with_capacity(keep_ratios.len());
    for &ratio in keep_ratios {
        let table = compare_methods(&policies, tasks, ratio)?;
        if level_counts.is_empty() {
            for level in Difficulty::ALL {
                level_counts.insert(level, table.levels.iter().filter(|&&l| l == level).count());
            }
        }
        let mut methods = Vec::with_capacity(policies.len());
        for (policy, row) in policies.iter().zip(&table.rows) {
            let evals = evaluate_policy(*policy, tasks, ratio, layers, config.evaluation.partition)?;
            let m = evals.len() as f64;
            let mean = |f: &dyn Fn(&tokprune_core::analysis::TaskEvaluation) -> f64| evals.iter().map(f).sum::<f64>() / m;
            methods.push(MethodMetrics {
                method: row.method.clone(),
                accuracy: row.overall.accuracy,
                per_level: row.per_level.clone(),
                mean_t_eq: mean(&|e| e.t_eq),
                mean_flop_proxy: mean(&|e| e.flop_proxy),
                mean_max_component_ratio: mean(&|e| e.granularity.max_component_ratio),
                mean_spatial_entropy: mean(&|e| e.granularity.spatial_entropy),
            });
        }
        budgets.push(BudgetReport {
            keep_ratio: ratio,
            t_target: config.grpo.t_target(ratio, n),
            methods,
        });
    }
    Ok(EvaluationReport {
        format_version: REPORT_FORMAT_VERSION,
        num_tasks: tasks.len(),
        level_counts,
        budgets,
    })
}
