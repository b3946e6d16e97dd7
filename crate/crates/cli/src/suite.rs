//! Task-suite generation and persistence.
//!
//! Layout: `tasks/<split>/index.json` plus one `lvN_IIII.json` per task. Each
//! task seed is derived from the master seed, the split and the level, so a
//! suite is fully determined by its spec.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tokprune_core::env::{generate_task_with, load_task, save_task, Difficulty, GeneratorConfig, SyntheticTask, TaskMode};
use tokprune_core::numeric::SeededRng;

use crate::config::{Split, SuiteSpec};
use crate::error::{CliError, CliResult};
use crate::report::{read_json, write_json};

pub const SUITE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub seed: u64,
    pub level: Difficulty,
    pub task_mode: TaskMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteIndex {
    pub format_version: u32,
    pub split: Split,
    pub master_seed: u64,
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    pub entries: Vec<IndexEntry>,
}

impl SuiteIndex {
    pub fn count(&self, level: Difficulty) -> usize {
        self.entries.iter().filter(|e| e.level == level).count()
    }
}

pub fn task_seed(master_seed: u64, split: Split, level: Difficulty, index: usize) -> u64 {
    SeededRng::new(master_seed)
        .derive(split.name())
        .derive_index(level.name(), index as u64)
        .seed()
}

fn task_mode_for(seed: u64, open_ended_fraction: f64) -> TaskMode {
    if SeededRng::new(seed).derive("task-mode").uniform() < open_ended_fraction {
        TaskMode::OpenEnded
    } else {
        TaskMode::Verifiable
    }
}

/// Tasks ordered by level, then index.
pub fn generate_suite(spec: &SuiteSpec, split: Split) -> CliResult<Vec<SyntheticTask>> {
    let jobs: Vec<(Difficulty, usize)> = Difficulty::ALL
        .iter()
        .flat_map(|&l| (0..spec.count(split, l)).map(move |i| (l, i)))
        .collect();
    let tasks = jobs
        .par_iter()
        .map(|&(level, i)| {
            let seed = task_seed(spec.master_seed, split, level, i);
            let cfg = GeneratorConfig {
                task_mode: task_mode_for(seed, spec.open_ended_fraction),
                ..GeneratorConfig::default()
            };
            generate_task_with(&cfg, level, spec.height, spec.width, spec.feature_dim, seed)
        })
        .collect::<tokprune_core::Result<Vec<_>>>()?;
    Ok(tasks)
}

pub fn split_dir(tasks_dir: &Path, split: Split) -> PathBuf {
    tasks_dir.join(split.name())
}

fn task_file_name(task: &SyntheticTask, index_in_level: usize) -> String {
    format!("{}_{index_in_level:04}.json", task.difficulty.name().to_lowercase())
}

/// Write every task and the index; returns the index.
pub fn write_suite(dir: &Path, spec: &SuiteSpec, split: Split, tasks: &[SyntheticTask]) -> CliResult<SuiteIndex> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut per_level = [0usize; 3];
    let mut entries = Vec::with_capacity(tasks.len());
    for task in tasks {
        let slot = &mut per_level[task.difficulty as usize];
        let file = task_file_name(task, *slot);
        *slot += 1;
        save_task(task, &dir.join(&file))?;
        entries.push(IndexEntry {
            file,
            seed: task.seed,
            level: task.difficulty,
            task_mode: task.oracle.task_mode,
        });
    }
    let index = SuiteIndex {
        format_version: SUITE_FORMAT_VERSION,
        split,
        master_seed: spec.master_seed,
        height: spec.height,
        width: spec.width,
        feature_dim: spec.feature_dim,
        entries,
    };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}

pub fn load_suite(dir: &Path) -> CliResult<(SuiteIndex, Vec<SyntheticTask>)> {
    let index_path = dir.join("index.json");
    if !index_path.exists() {
        return Err(CliError::Config(format!(
            "no suite at {} (run generate-suite first)",
            dir.display()
        )));
    }
    let index: SuiteIndex = read_json(&index_path)?;
    if index.format_version != SUITE_FORMAT_VERSION {
        return Err(CliError::Core(tokprune_core::Error::VersionMismatch {
            found: index.format_version,
            expected: SUITE_FORMAT_VERSION,
        }));
    }
    let tasks = index
        .entries
        .iter()
        .map(|e| {
            let task = load_task(&dir.join(&e.file))?;
            if task.seed != e.seed || task.difficulty != e.level {
                return Err(CliError::Config(format!("{} does not match its index entry", e.file)));
            }
            Ok(task)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((index, tasks))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SuiteSpec {
        SuiteSpec {
            counts: [2, 2, 2],
            train_counts: [1, 1, 1],
            height: 6,
            width: 6,
            ..SuiteSpec::default()
        }
    }

    #[test]
    fn levels_and_counts_follow_the_spec() {
        let tasks = generate_suite(&small(), Split::Eval).unwrap();
        assert_eq!(tasks.len(), 6);
        let levels: Vec<_> = tasks.iter().map(|t| t.difficulty).collect();
        assert_eq!(levels, [Difficulty::Lv1, Difficulty::Lv1, Difficulty::Lv2, Difficulty::Lv2, Difficulty::Lv3, Difficulty::Lv3]);
    }

    #[test]
    fn splits_use_disjoint_seeds() {
        let a = generate_suite(&small(), Split::Eval).unwrap();
        let b = generate_suite(&small(), Split::Train).unwrap();
        assert!(b.iter().all(|t| a.iter().all(|u| u.seed != t.seed)));
    }

    #[test]
    fn zero_counts_give_an_empty_suite() {
        let spec = SuiteSpec {
            counts: [0, 0, 0],
            ..small()
        };
        assert!(generate_suite(&spec, Split::Eval).unwrap().is_empty());
    }

    #[test]
    fn open_ended_fraction_marks_tasks() {
        let spec = SuiteSpec {
            open_ended_fraction: 1.0,
            ..small()
        };
        let tasks = generate_suite(&spec, Split::Eval).unwrap();
        assert!(tasks.iter().all(|t| t.oracle.task_mode == TaskMode::OpenEnded));
        let tasks = generate_suite(&small(), Split::Eval).unwrap();
        assert!(tasks.iter().all(|t| t.oracle.task_mode == TaskMode::Verifiable));
    }
}
