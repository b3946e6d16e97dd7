use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::mask::RetentionMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GranularityReport {
    pub max_component_ratio: f64,
    pub spatial_entropy: f64,
    /// Cells per side of the spatial partition.
    pub partition: usize,
    pub kept: usize,
}

fn check(mask: &RetentionMask, height: usize, width: usize, context: &'static str) -> Result<()> {
    ensure_len(context, height * width, mask.len())?;
    if mask.kept() == 0 {
        return Err(Error::EmptyMask(context));
    }
    Ok(())
}

/// Size of the largest 4-connected group of kept tokens over the kept count.
pub fn max_component_ratio(mask: &RetentionMask, height: usize, width: usize) -> Result<f64> {
    check(mask, height, width, "max_component_ratio")?;
    let mut seen = vec![false; mask.len()];
    let mut largest = 0usize;
    let mut stack = Vec::new();
    for start in mask.kept_indices() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = (i / width, i % width);
            let mut visit = |j: usize| {
                if mask.is_kept(j) && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - width);
            }
            if r + 1 < height {
                visit(i + width);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < width {
                visit(i + 1);
            }
        }
        largest = largest.max(size);
    }
    Ok(largest as f64 / mask.kept() as f64)
}

/// Natural-log Shannon entropy of kept tokens over an `m × m` partition.
/// Row `r` falls in cell row `floor(r * m / height)`, likewise for columns.
pub fn spatial_entropy(mask: &RetentionMask, height: usize, width: usize, m: usize) -> Result<f64> {
    check(mask, height, width, "spatial_entropy")?;
    if m == 0 || m > height.min(width) {
        return Err(Error::InvalidArgument(format!(
            "partition {m} must lie in 1..={}",
            height.min(width)
        )));
    }
    let mut counts = vec![0usize; m * m];
    for i in mask.kept_indices() {
        let (r, c) = (i / width, i % width);
        counts[(r * m / height) * m + c * m / width] += 1;
    }
    let kept = mask.kept() as f64;
    let plogp: f64 = counts
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let q = k as f64 / kept;
            q * q.ln()
        })
        .sum();
    Ok(0.0 - plogp)
}

pub fn granularity_report(mask: &RetentionMask, height: usize, width: usize, m: usize) -> Result<GranularityReport> {
    Ok(GranularityReport {
        max_component_ratio: max_component_ratio(mask, height, width)?,
        spatial_entropy: spatial_entropy(mask, height, width, m)?,
        partition: m,
        kept: mask.kept(),
    })
}
