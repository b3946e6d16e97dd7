use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SyntheticTask;
use crate::error::{Error, Result};

pub const TASK_FORMAT_VERSION: u32 = 1;

/// On-disk JSON document for one task.
///
/// Top-level keys: `format_version`, `task`. The task object carries `grid`
/// (`height`, `width`, `feature_dim`, `features`, `heuristic_scores`),
/// `oracle` (`importance_weights`, `critical_set`, `misleading_pairs`,
/// `threshold`, `num_classes`, `task_mode`), `label`, `difficulty` and `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFile {
    pub format_version: u32,
    pub task: SyntheticTask,
}

pub fn task_to_json(task: &SyntheticTask) -> Result<String> {
    let file = TaskFile {
        format_version: TASK_FORMAT_VERSION,
        task: task.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))
}

pub fn task_from_json(text: &str) -> Result<SyntheticTask> {
    #[derive(Deserialize)]
    struct Header {
        format_version: u32,
    }
    let header: Header = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    if header.format_version != TASK_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.format_version,
            expected: TASK_FORMAT_VERSION,
        });
    }
    let file: TaskFile = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    file.task.validate()?;
    Ok(file.task)
}

pub fn save_task(task: &SyntheticTask, path: &Path) -> Result<()> {
    let text = task_to_json(task)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_task(path: &Path) -> Result<SyntheticTask> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    task_from_json(&text)
}
