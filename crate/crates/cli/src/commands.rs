//! One function per subcommand. Each returns the text printed to stdout and
//! leaves its files under the configured output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tokprune_core::analysis::{correctness_curve, DifficultyProfile, HeuristicPolicy, LearnedPolicy, SelectionPolicy};
use tokprune_core::env::{Difficulty, SyntheticTask, CURVE_RATIOS};
use tokprune_core::grpo::{credit_assignment_demo, CreditReport, CulpritEnvironment};
use tokprune_core::numeric::SeededRng;
use tokprune_core::scorer::{load_checkpoint, save_checkpoint, ScorerFlags, ScorerParams, CHECKPOINT_VERSION};

use crate::config::{ExperimentConfig, Split};
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_file, RunManifest};
use crate::pipeline::{evaluate_methods, run_grpo, run_sft, training_log_text, EvaluationReport};
use crate::report::{aligned_table, csv, fmt4, to_jsonl, write_json, write_text};
use crate::suite::{generate_suite, load_suite, split_dir, write_suite};

#[derive(Debug, Clone, Default)]
pub struct CommandOutput {
    pub summary: String,
    pub warnings: Vec<String>,
}

impl CommandOutput {
    fn new(summary: String) -> Self {
        Self {
            summary,
            warnings: Vec::new(),
        }
    }
}

/// `path` relative to `root`, with `/` separators.
fn rel(root: &Path, path: &Path) -> String {
    let p = path.strip_prefix(root).unwrap_or(path);
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

struct Emitter<'a> {
    config: &'a ExperimentConfig,
    written: Vec<String>,
}

impl<'a> Emitter<'a> {
    fn new(config: &'a ExperimentConfig) -> Self {
        Self {
            config,
            written: Vec::new(),
        }
    }

    fn text(&mut self, path: PathBuf, text: &str) -> CliResult<()> {
        write_text(&path, text)?;
        self.written.push(rel(&self.config.output_dir, &path));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, path: PathBuf, value: &T) -> CliResult<()> {
        write_json(&path, value)?;
        self.written.push(rel(&self.config.output_dir, &path));
        Ok(())
    }

    fn record(&mut self, path: &Path) {
        self.written.push(rel(&self.config.output_dir, path));
    }

    fn finish(self, command: &str, timings: std::collections::BTreeMap<String, f64>) -> CliResult<RunManifest> {
        let manifest = RunManifest::build(command, self.config, &self.config.output_dir, &self.written, timings)?;
        manifest.write(&self.config.results_dir().join(format!("{command}.manifest.json")))?;
        Ok(manifest)
    }
}

pub fn generate_suite_cmd(config: &ExperimentConfig) -> CliResult<CommandOutput> {
    let mut out = Emitter::new(config);
    let mut summary = String::new();
    let mut warnings = Vec::new();
    for split in [Split::Train, Split::Eval] {
        let tasks = generate_suite(&config.suite, split)?;
        if tasks.is_empty() {
            warnings.push(format!("{} suite is empty: every level count is zero", split.name()));
        }
        let dir = split_dir(&config.tasks_dir(), split);
        let index = write_suite(&dir, &config.suite, split, &tasks)?;
        for e in &index.entries {
            out.record(&dir.join(&e.file));
        }
        out.record(&dir.join("index.json"));
        summary += &format!(
            "{:<5} {} tasks (LV1 {}, LV2 {}, LV3 {}) in {}\n",
            split.name(),
            tasks.len(),
            index.count(Difficulty::Lv1),
            index.count(Difficulty::Lv2),
            index.count(Difficulty::Lv3),
            dir.display()
        );
    }
    let manifest = out.finish("generate-suite", Default::default())?;
    summary += &format!("content hash {}\n", manifest.content_hash);
    Ok(CommandOutput { summary, warnings })
}

/// Written next to each checkpoint as `<name>.ckpt.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub format_version: u32,
    pub stage: String,
    pub checkpoint_version: u32,
    pub sha256: String,
    pub input_dim: usize,
    pub hidden: usize,
    pub flags: ScorerFlags,
    pub param_count: usize,
    pub config: ExperimentConfig,
}

fn save_with_sidecar(
    out: &mut Emitter,
    params: &ScorerParams,
    stage: &str,
) -> CliResult<PathBuf> {
    let path = out.config.checkpoints_dir().join(format!("{stage}.ckpt"));
    std::fs::create_dir_all(out.config.checkpoints_dir()).map_err(|e| CliError::io(out.config.checkpoints_dir(), e))?;
    save_checkpoint(params, &path)?;
    out.record(&path);
    let sidecar = CheckpointSidecar {
        format_version: 1,
        stage: stage.to_string(),
        checkpoint_version: CHECKPOINT_VERSION,
        sha256: sha256_file(&path)?,
        input_dim: params.input_dim,
        hidden: params.hidden,
        flags: params.flags,
        param_count: params.param_count(),
        config: out.config.clone(),
    };
    out.json(path.with_extension("ckpt.json"), &sidecar)?;
    Ok(path)
}

pub fn train_cmd(config: &ExperimentConfig) -> CliResult<CommandOutput> {
    let (_, tasks) = load_suite(&split_dir(&config.tasks_dir(), Split::Train))?;
    if tasks.is_empty() {
        return Err(CliError::Config("training suite is empty".into()));
    }
    let mut out = Emitter::new(config);
    let mut timings = std::collections::BTreeMap::new();
    let results = config.results_dir();

    let t = std::time::Instant::now();
    let (sft, sft_log) = run_sft(config, &tasks)?;
    timings.insert("sft".to_string(), t.elapsed().as_secs_f64());
    let sft_path = save_with_sidecar(&mut out, &sft, "sft")?;
    out.text(results.join("sft_log.jsonl"), &to_jsonl(&sft_log)?)?;

    let t = std::time::Instant::now();
    let (rl, grpo_log) = match run_grpo(config, &tasks, &sft) {
        Ok(r) => r,
        Err(e) => {
            // Stage I artifacts stay on disk; record them before failing.
            out.finish("train", timings)?;
            return Err(e);
        }
    };
    timings.insert("grpo".to_string(), t.elapsed().as_secs_f64());
    let rl_path = save_with_sidecar(&mut out, &rl, "rl")?;
    out.text(results.join("grpo_log.jsonl"), &to_jsonl(&grpo_log)?)?;
    out.text(results.join("train_log.txt"), &training_log_text(&sft_log, &grpo_log))?;
    let manifest = out.finish("train", timings)?;

    let mut summary = String::new();
    if let Some(l) = sft_log.last() {
        summary += &format!("stage I: {} epochs, final accuracy {:.4}, loss {:.4}\n", sft_log.len(), l.accuracy, l.total);
    }
    match grpo_log.last() {
        Some(l) => {
            summary += &format!(
                "stage II: {} iterations, final mean reward {:.4}, rollout accuracy {:.4}\n",
                grpo_log.len(),
                l.mean_reward,
                l.accuracy
            )
        }
        None => summary += "stage II: 0 iterations, RL checkpoint equals the stage I checkpoint\n",
    }
    summary += &format!("checkpoints {} and {}\ncontent hash {}\n", sft_path.display(), rl_path.display(), manifest.content_hash);
    Ok(CommandOutput::new(summary))
}

/// Checkpoints named on the command line, or the trained SFT and RL ones.
pub fn resolve_checkpoints(config: &ExperimentConfig, given: &[PathBuf]) -> CliResult<Vec<LearnedPolicy>> {
    let paths: Vec<PathBuf> = if given.is_empty() {
        ["sft", "rl"]
            .iter()
            .map(|s| config.checkpoints_dir().join(format!("{s}.ckpt")))
            .filter(|p| p.exists())
            .collect()
    } else {
        given.to_vec()
    };
    paths
        .iter()
        .map(|p| {
            let params = load_checkpoint(p)?;
            if params.input_dim != config.suite.feature_dim {
                return Err(CliError::Config(format!(
                    "{} expects {} feature channels, suite has {}",
                    p.display(),
                    params.input_dim,
                    config.suite.feature_dim
                )));
            }
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "learned".into());
            Ok(LearnedPolicy::new(name, params))
        })
        .collect()
}

fn emit_report(out: &mut Emitter, stem: &str, report: &EvaluationReport) -> CliResult<()> {
    let results = out.config.results_dir();
    out.json(results.join(format!("{stem}.json")), report)?;
    out.text(results.join(format!("{stem}.csv")), &report.to_csv())?;
    out.text(results.join(format!("{stem}.txt")), &report.to_text())
}

fn eval_tasks(config: &ExperimentConfig) -> CliResult<Vec<SyntheticTask>> {
    let (_, tasks) = load_suite(&split_dir(&config.tasks_dir(), Split::Eval))?;
    if tasks.is_empty() {
        return Err(CliError::Config("evaluation suite is empty".into()));
    }
    Ok(tasks)
}

pub fn evaluate_cmd(config: &ExperimentConfig, checkpoints: &[PathBuf], budgets: Option<Vec<f64>>) -> CliResult<CommandOutput> {
    let tasks = eval_tasks(config)?;
    let learned = resolve_checkpoints(config, checkpoints)?;
    let ratios = budgets.unwrap_or_else(|| config.evaluation.keep_ratios.clone());
    let report = evaluate_methods(config, &learned, &tasks, &ratios)?;
    let mut out = Emitter::new(config);
    emit_report(&mut out, "evaluation", &report)?;
    out.finish("evaluate", Default::default())?;
    Ok(CommandOutput::new(report.to_text()))
}

pub fn sweep_budget_cmd(config: &ExperimentConfig, checkpoints: &[PathBuf], ratios: Option<Vec<f64>>) -> CliResult<CommandOutput> {
    let tasks = eval_tasks(config)?;
    let learned = resolve_checkpoints(config, checkpoints)?;
    let ratios = ratios.unwrap_or_else(|| CURVE_RATIOS.to_vec());
    let report = evaluate_methods(config, &learned, &tasks, &ratios)?;
    let mut out = Emitter::new(config);
    emit_report(&mut out, "sweep", &report)?;
    out.finish("sweep-budget", Default::default())?;
    Ok(CommandOutput::new(report.to_text()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub task: usize,
    pub seed: u64,
    pub generated_level: Difficulty,
    pub profile: DifficultyProfile,
}

pub fn classify_difficulty_cmd(config: &ExperimentConfig, split: Split, checkpoint: Option<&Path>) -> CliResult<CommandOutput> {
    let (_, tasks) = load_suite(&split_dir(&config.tasks_dir(), split))?;
    let learned = match checkpoint {
        Some(p) => resolve_checkpoints(config, &[p.to_path_buf()])?.pop(),
        None => None,
    };
    let policy: &dyn SelectionPolicy = match &learned {
        Some(l) => l,
        None => &HeuristicPolicy,
    };
    let records = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(ProfileRecord {
                task: i,
                seed: t.seed,
                generated_level: t.difficulty,
                profile: correctness_curve(policy, t, &CURVE_RATIOS)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut out = Emitter::new(config);
    out.text(
        config.results_dir().join(format!("difficulty_{}_{}.jsonl", split.name(), policy.name())),
        &to_jsonl(&records)?,
    )?;
    out.finish("classify-difficulty", Default::default())?;
    let rows: Vec<Vec<String>> = Difficulty::ALL
        .iter()
        .map(|&l| {
            let here: Vec<&ProfileRecord> = records.iter().filter(|r| r.profile.level == l).collect();
            let agree = here.iter().filter(|r| r.generated_level == l).count();
            vec![l.name().to_string(), here.len().to_string(), agree.to_string()]
        })
        .collect();
    Ok(CommandOutput::new(format!(
        "policy {} on the {} split\n{}",
        policy.name(),
        split.name(),
        aligned_table(&["level", "tasks", "matching_generated"], &rows)
    )))
}

pub fn granularity_cmd(config: &ExperimentConfig, checkpoints: &[PathBuf], budgets: Option<Vec<f64>>) -> CliResult<CommandOutput> {
    let tasks = eval_tasks(config)?;
    let learned = resolve_checkpoints(config, checkpoints)?;
    let ratios = budgets.unwrap_or_else(|| config.evaluation.keep_ratios.clone());
    let report = evaluate_methods(config, &learned, &tasks, &ratios)?;
    let header = ["method", "keep_ratio", "max_component_ratio", "spatial_entropy"];
    let rows: Vec<Vec<String>> = report
        .budgets
        .iter()
        .flat_map(|b| {
            b.methods.iter().map(move |m| {
                vec![
                    m.method.clone(),
                    fmt4(b.keep_ratio),
                    fmt4(m.mean_max_component_ratio),
                    fmt4(m.mean_spatial_entropy),
                ]
            })
        })
        .collect();
    let mut out = Emitter::new(config);
    out.text(config.results_dir().join("granularity.csv"), &csv(&header, &rows))?;
    out.finish("granularity", Default::default())?;
    Ok(CommandOutput::new(aligned_table(&header, &rows)))
}

pub fn credit_demo_cmd(env: &CulpritEnvironment, rollouts: usize, seed: u64, output: Option<&Path>) -> CliResult<CommandOutput> {
    let report: CreditReport = credit_assignment_demo(env, rollouts, &SeededRng::new(seed))?;
    if let Some(path) = output {
        write_json(path, &report)?;
    }
    let mut summary = format!(
        "{} rollouts, keep probability {}, mean reward {:.4}\n",
        report.num_rollouts, env.keep_prob, report.mean_reward
    );
    summary += "set-level and failure-penalty columns: loss gradients on the failing all-kept mask\n";
    summary += "estimate: group-relative reward gradient with its standard error\n\n";
    summary += &report.to_table();
    Ok(CommandOutput::new(summary))
}
