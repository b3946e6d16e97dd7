use serde::{Deserialize, Serialize};

use super::{evaluate, misleading_pair_is_xor, Difficulty, OracleSpec, SyntheticTask, TaskMode, TokenGrid};
use crate::analysis::count_transitions;
use crate::error::{Error, Result};
use crate::mask::{keep_count, rank_descending, RetentionMask};
use crate::numeric::SeededRng;

/// Keep ratios at which difficulty curves are sampled.
pub const CURVE_RATIOS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

const SMOOTHING_PASSES: usize = 3;
const HEURISTIC_NOISE: f64 = 0.05;

/// Knobs of the task generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub task_mode: TaskMode,
    /// Std of the Gaussian noise on every feature channel.
    pub feature_noise: f64,
    /// Peak of the decoy blob added to the heuristic field.
    pub decoy_amplitude: f64,
    /// Blob radius as a fraction of the longer grid side.
    pub decoy_radius: f64,
    /// Offset on the marker channels of misleading and critical tokens.
    pub marker_strength: f64,
    /// Fraction of tokens that carry importance on LV2/LV3 tasks.
    pub important_fraction: (f64, f64),
    /// LV2 threshold as a fraction of the important mass.
    pub lv2_threshold_fraction: (f64, f64),
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            task_mode: TaskMode::Verifiable,
            feature_noise: 0.25,
            decoy_amplitude: 1.5,
            decoy_radius: 0.2,
            marker_strength: 0.75,
            important_fraction: (0.25, 0.35),
            lv2_threshold_fraction: (0.55, 0.95),
            max_attempts: 2000,
        }
    }
}

/// Generate a task with the default generator settings.
pub fn generate_task(level: Difficulty, height: usize, width: usize, feature_dim: usize, seed: u64) -> Result<SyntheticTask> {
    generate_task_with(&GeneratorConfig::default(), level, height, width, feature_dim, seed)
}

/// Generate a task whose heuristic correctness curve has the transition count
/// of `level`. Candidates are drawn from sub-streams of `seed` until one
/// satisfies every structural check.
pub fn generate_task_with(
    cfg: &GeneratorConfig,
    level: Difficulty,
    height: usize,
    width: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<SyntheticTask> {
    if height * width < 4 || feature_dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "need H*W >= 4 and d >= 2, got {height}x{width} with d={feature_dim}"
        )));
    }
    if cfg.num_classes < 2 {
        return Err(Error::InvalidArgument("num_classes must be at least 2".into()));
    }
    let root = SeededRng::new(seed);
    for attempt in 0..cfg.max_attempts {
        let mut rng = root.derive_index("attempt", attempt as u64);
        let draft = Draft::sample(cfg, level, height, width, &mut rng);
        if let Some(task) = draft.finish(cfg, level, feature_dim, seed, &mut rng)? {
            return Ok(task);
        }
    }
    Err(Error::InvalidArgument(format!(
        "could not construct a {level} task on a {height}x{width} grid in {} attempts",
        cfg.max_attempts
    )))
}

/// Heuristic correctness flags along [`CURVE_RATIOS`].
pub(crate) fn heuristic_flags(task: &SyntheticTask) -> Result<Vec<bool>> {
    let n = task.num_tokens();
    CURVE_RATIOS
        .iter()
        .map(|&r| {
            let mask = RetentionMask::top_k(&task.grid.heuristic_scores, keep_count(r, n))?;
            Ok(evaluate(task, &mask)?.correct)
        })
        .collect()
}

struct Draft {
    height: usize,
    width: usize,
    weights: Vec<f64>,
    important: Vec<bool>,
    blob: Vec<f64>,
    noise: Vec<f64>,
    heuristic: Vec<f64>,
    label: usize,
}

impl Draft {
    fn sample(cfg: &GeneratorConfig, level: Difficulty, height: usize, width: usize, rng: &mut SeededRng) -> Self {
        let n = height * width;
        let label = rng.below(cfg.num_classes);
        let mut weights = vec![0.0; n];
        let mut important = vec![false; n];
        let dist2 = |a: usize, b: usize| {
            let (ra, ca) = ((a / width) as f64, (a % width) as f64);
            let (rb, cb) = ((b / width) as f64, (b % width) as f64);
            (ra - rb).powi(2) + (ca - cb).powi(2)
        };

        let cluster_center = rng.below(n);
        match level {
            Difficulty::Lv1 => {
                important.iter_mut().for_each(|x| *x = true);
            }
            Difficulty::Lv2 | Difficulty::Lv3 => {
                let (lo, hi) = cfg.important_fraction;
                let n_imp = ((rng.uniform_range(lo, hi) * n as f64).round() as usize).clamp(2, n - 2);
                let n_cluster = n_imp.div_ceil(2);
                let mut by_dist: Vec<(f64, usize)> = (0..n)
                    .map(|i| (dist2(i, cluster_center) + rng.uniform_range(0.0, 0.5), i))
                    .collect();
                by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, i) in &by_dist[..n_cluster] {
                    important[i] = true;
                }
                let mut rest: Vec<usize> = (0..n).filter(|&i| !important[i]).collect();
                rng.shuffle(&mut rest);
                for &i in &rest[..n_imp - n_cluster] {
                    important[i] = true;
                }
            }
        }
        for i in 0..n {
            weights[i] = if important[i] {
                rng.uniform_range(0.5, 1.5)
            } else {
                rng.uniform_range(0.01, 0.05)
            };
        }

        // Decoy blob: the farthest of a few random centres from the cluster.
        let mut blob_center = rng.below(n);
        for _ in 0..4 {
            let c = rng.below(n);
            if dist2(c, cluster_center) > dist2(blob_center, cluster_center) {
                blob_center = c;
            }
        }
        let radius = (cfg.decoy_radius * height.max(width) as f64).max(1.0);
        let blob: Vec<f64> = (0..n)
            .map(|i| cfg.decoy_amplitude * (-dist2(i, blob_center) / (2.0 * radius * radius)).exp())
            .collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.normal()).collect();

        let mut draft = Self {
            height,
            width,
            weights,
            important,
            blob,
            noise,
            heuristic: Vec::new(),
            label,
        };
        draft.refresh_heuristic();
        draft
    }

    fn refresh_heuristic(&mut self) {
        let raw: Vec<f64> = self.weights.iter().zip(&self.blob).map(|(w, b)| w + b).collect();
        let smooth = smooth_field(&raw, self.height, self.width, SMOOTHING_PASSES);
        let mean = smooth.iter().map(|v| v.abs()).sum::<f64>() / smooth.len() as f64;
        let sigma = HEURISTIC_NOISE * mean;
        self.heuristic = smooth.iter().zip(&self.noise).map(|(s, e)| s + sigma * e).collect();
    }

    fn prefix_mass(&self, order: &[usize], k: usize) -> f64 {
        order[..k].iter().map(|&i| self.weights[i]).sum()
    }

    fn finish(
        mut self,
        cfg: &GeneratorConfig,
        level: Difficulty,
        feature_dim: usize,
        seed: u64,
        rng: &mut SeededRng,
    ) -> Result<Option<SyntheticTask>> {
        let n = self.weights.len();
        let ks: Vec<usize> = CURVE_RATIOS.iter().map(|&r| keep_count(r, n)).collect();
        let mut critical = Vec::new();
        let mut pairs: Vec<[usize; 2]> = Vec::new();

        let threshold = match level {
            Difficulty::Lv1 => {
                let mut sorted = self.weights.clone();
                sorted.sort_by(f64::total_cmp);
                0.9 * sorted[..ks[0]].iter().sum::<f64>()
            }
            Difficulty::Lv2 => {
                let imp_mass: f64 = (0..n).filter(|&i| self.important[i]).map(|i| self.weights[i]).sum();
                let (lo, hi) = cfg.lv2_threshold_fraction;
                rng.uniform_range(lo, hi) * imp_mass
            }
            Difficulty::Lv3 => {
                let k_half = keep_count(0.5, n);
                let choices: Vec<usize> = (1..ks.len()).filter(|&g| ks[g] < k_half && ks[g - 1] < ks[g]).collect();
                if choices.is_empty() {
                    return Ok(None);
                }
                let g = choices[rng.below(choices.len())];
                let kg = ks[g];
                let order = rank_descending(&self.heuristic);
                let candidates: Vec<usize> = order[kg..].iter().copied().filter(|&i| !self.important[i]).collect();
                if candidates.len() < 2 {
                    return Ok(None);
                }
                let first_rank = order.iter().position(|&i| i == candidates[0]).unwrap();
                if first_rank >= k_half {
                    return Ok(None);
                }
                let num_pairs = (1 + rng.below(3)).min(candidates.len() / 2);
                let pool_len = candidates.len().min(2 * num_pairs + 2);
                let mut pool: Vec<usize> = candidates[1..pool_len].to_vec();
                rng.shuffle(&mut pool);
                let mut members = vec![candidates[0]];
                members.extend_from_slice(&pool[..2 * num_pairs - 1]);
                rng.shuffle(&mut members);
                for chunk in members.chunks(2) {
                    pairs.push([chunk[0].min(chunk[1]), chunk[0].max(chunk[1])]);
                }
                for &i in &members {
                    self.weights[i] = 0.0;
                }
                self.refresh_heuristic();
                let order = rank_descending(&self.heuristic);
                let is_member = |i: usize| members.contains(&i);
                if order[..kg].iter().any(|&i| is_member(i)) || !order[kg..k_half].iter().any(|&i| is_member(i)) {
                    return Ok(None);
                }
                let lo = self.prefix_mass(&order, ks[g - 1]);
                let hi = self.prefix_mass(&order, kg);
                if hi <= lo * (1.0 + 1e-9) {
                    return Ok(None);
                }
                let tau = lo + rng.uniform_range(0.2, 0.9) * (hi - lo);

                let total: f64 = self.weights.iter().sum();
                let n_critical = rng.below(3);
                let mut eligible: Vec<usize> = order[..kg]
                    .iter()
                    .copied()
                    .filter(|&i| self.important[i] && total - self.weights[i] - 4.0 * tau < tau)
                    .collect();
                rng.shuffle(&mut eligible);
                critical = eligible.into_iter().take(n_critical).collect();
                critical.sort_unstable();
                tau
            }
        };

        let total: f64 = self.weights.iter().sum();
        if !(threshold > 0.0 && threshold < total) {
            return Ok(None);
        }

        let misleading: Vec<bool> = (0..n).map(|i| pairs.iter().any(|p| p.contains(&i))).collect();
        let features: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut f: Vec<f64> = (0..feature_dim).map(|_| cfg.feature_noise * rng.normal()).collect();
                f[0] += if misleading[i] { rng.uniform_range(0.5, 1.5) } else { self.weights[i] };
                if cfg.decoy_amplitude > 0.0 {
                    f[1] += self.blob[i] / cfg.decoy_amplitude;
                }
                if feature_dim > 2 && misleading[i] {
                    f[2] += cfg.marker_strength;
                }
                if feature_dim > 3 && critical.contains(&i) {
                    f[3] += cfg.marker_strength;
                }
                f
            })
            .collect();

        let task = SyntheticTask {
            grid: TokenGrid::new(self.height, self.width, features, self.heuristic)?,
            oracle: OracleSpec {
                importance_weights: self.weights,
                critical_set: critical,
                misleading_pairs: pairs,
                threshold,
                num_classes: cfg.num_classes,
                task_mode: cfg.task_mode,
            },
            label: self.label,
            difficulty: level,
            seed,
        };
        task.validate()?;
        Ok(accept(&task, level)?.then_some(task))
    }
}

fn accept(task: &SyntheticTask, level: Difficulty) -> Result<bool> {
    let flags = heuristic_flags(task)?;
    let t = count_transitions(&flags);
    let ok = match level {
        Difficulty::Lv1 => t == 0 && flags[0],
        Difficulty::Lv2 => t == 1 && !flags[0],
        Difficulty::Lv3 => {
            if t < 2 {
                return Ok(false);
            }
            for p in 0..task.oracle.misleading_pairs.len() {
                if !misleading_pair_is_xor(task, p)? {
                    return Ok(false);
                }
            }
            let n = task.num_tokens();
            let repaired = RetentionMask::all(n).without(
                &task.oracle.misleading_pairs.iter().flatten().copied().collect::<Vec<_>>(),
            );
            for &c in &task.oracle.critical_set {
                if evaluate(task, &repaired.without(&[c]))?.correct {
                    return Ok(false);
                }
            }
            true
        }
    };
    Ok(ok)
}

/// Repeated 3x3 box averaging, clipped at the grid border.
pub(crate) fn smooth_field(field: &[f64], height: usize, width: usize, passes: usize) -> Vec<f64> {
    let mut cur = field.to_vec();
    for _ in 0..passes {
        let mut next = vec![0.0; cur.len()];
        for r in 0..height {
            for c in 0..width {
                let mut sum = 0.0;
                let mut count = 0.0;
                for rr in r.saturating_sub(1)..=(r + 1).min(height - 1) {
                    for cc in c.saturating_sub(1)..=(c + 1).min(width - 1) {
                        sum += cur[rr * width + cc];
                        count += 1.0;
                    }
                }
                next[r * width + c] = sum / count;
            }
        }
        cur = next;
    }
    cur
}
