//! Synthetic pruning environments with exactly computable outcomes.
//!
//! A task is a grid of token features, a heuristic prior per token and an
//! oracle that maps any retention mask to class logits. The oracle is a
//! piecewise-linear function of the retained importance mass with two kinds of
//! discontinuity: critical tokens whose removal subtracts a large cliff, and
//! misleading pairs that suppress the signal unless both members are removed.

mod brute;
mod generate;
mod io;

pub use brute::brute_force_optimal;
pub use generate::{generate_task, generate_task_with, GeneratorConfig, CURVE_RATIOS};
pub use io::{load_task, save_task, task_from_json, task_to_json, TaskFile, TASK_FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::mask::RetentionMask;
use crate::numeric::{all_finite, argmax, log_softmax};

/// Logit units per unit of normalized margin `(signal - tau) / total_mass`.
pub const LOGIT_SCALE: f64 = 4.0;
/// Signal subtracted for each dropped critical token, in units of tau.
pub const CLIFF_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    #[serde(rename = "LV1")]
    Lv1,
    #[serde(rename = "LV2")]
    Lv2,
    #[serde(rename = "LV3")]
    Lv3,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Lv1, Difficulty::Lv2, Difficulty::Lv3];

    pub fn from_transitions(transitions: usize) -> Self {
        match transitions {
            0 => Difficulty::Lv1,
            1 => Difficulty::Lv2,
            _ => Difficulty::Lv3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Lv1 => "LV1",
            Difficulty::Lv2 => "LV2",
            Difficulty::Lv3 => "LV3",
        }
    }
}

impl std::fmt::Display for Difficulty {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LV1" => Ok(Difficulty::Lv1),
            "LV2" => Ok(Difficulty::Lv2),
            "LV3" => Ok(Difficulty::Lv3),
            _ => Err(Error::InvalidArgument(format!("unknown difficulty level {s:?}"))),
        }
    }
}

/// How reward consumers score a rollout on this task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskMode {
    /// Exact-match answer; reward is correctness.
    Verifiable,
    /// Free-form answer; reward is derived from the loss.
    OpenEnded,
}

/// The simulated visual tokens of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrid {
    pub height: usize,
    pub width: usize,
    pub feature_dim: usize,
    /// One feature vector per token, row-major over the grid.
    pub features: Vec<Vec<f64>>,
    /// Heuristic prior per token (attention-like, blob-biased).
    pub heuristic_scores: Vec<f64>,
}

impl TokenGrid {
    pub fn new(
        height: usize,
        width: usize,
        features: Vec<Vec<f64>>,
        heuristic_scores: Vec<f64>,
    ) -> Result<Self> {
        let feature_dim = features.first().map_or(0, Vec::len);
        let grid = Self {
            height,
            width,
            feature_dim,
            features,
            heuristic_scores,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if n == 0 || self.feature_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate grid {}x{} with feature_dim {}",
                self.height, self.width, self.feature_dim
            )));
        }
        ensure_len("grid features", n, self.features.len())?;
        ensure_len("grid heuristic scores", n, self.heuristic_scores.len())?;
        for f in &self.features {
            ensure_len("token feature", self.feature_dim, f.len())?;
            if !all_finite(f) {
                return Err(Error::NonFinite("token features".into()));
            }
        }
        if !all_finite(&self.heuristic_scores) {
            return Err(Error::NonFinite("heuristic scores".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn num_tokens(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i / self.width, i % self.width)
    }

    /// Mean of token features weighted by `weights` (a hard or relaxed mask).
    pub fn pooled_feature(&self, weights: &[f64]) -> Result<Vec<f64>> {
        ensure_len("pooling weights", self.num_tokens(), weights.len())?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::EmptyMask("pooled_feature"));
        }
        let mut pooled = vec![0.0; self.feature_dim];
        for (f, &w) in self.features.iter().zip(weights) {
            if w != 0.0 {
                for (p, &v) in pooled.iter_mut().zip(f) {
                    *p += w * v;
                }
            }
        }
        pooled.iter_mut().for_each(|p| *p /= total);
        Ok(pooled)
    }
}

/// Ground-truth structure that decides the outcome of every mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub importance_weights: Vec<f64>,
    pub critical_set: Vec<usize>,
    pub misleading_pairs: Vec<[usize; 2]>,
    /// Decision threshold tau on the retained signal.
    pub threshold: f64,
    pub num_classes: usize,
    pub task_mode: TaskMode,
}

impl OracleSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        ensure_len("importance weights", n, self.importance_weights.len())?;
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("num_classes must be at least 2".into()));
        }
        if !self.importance_weights.iter().all(|w| w.is_finite() && *w >= 0.0) {
            return Err(Error::InvalidArgument("importance weights must be finite and non-negative".into()));
        }
        let total = self.total_mass();
        if !(self.threshold > 0.0 && self.threshold < total) {
            return Err(Error::InvalidArgument(format!(
                "threshold {} must lie strictly inside (0, {total})",
                self.threshold
            )));
        }
        let mut seen = vec![false; n];
        let special = self
            .critical_set
            .iter()
            .chain(self.misleading_pairs.iter().flat_map(|p| p.iter()));
        for &i in special {
            if i >= n {
                return Err(Error::InvalidArgument(format!("oracle index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::InvalidArgument(format!("oracle index {i} used twice")));
            }
            seen[i] = true;
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.importance_weights.iter().sum()
    }

    /// Signal removed while any member of a misleading pair is retained.
    /// Large enough that no retained mass can reach the threshold.
    pub fn misleading_penalty(&self) -> f64 {
        self.total_mass() + self.threshold
    }

    /// Retained signal for a hard mask.
    pub fn signal(&self, keep: &[bool]) -> f64 {
        let mut s: f64 = self
            .importance_weights
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(w, _)| w)
            .sum();
        let cliff = CLIFF_FACTOR * self.threshold;
        for &c in &self.critical_set {
            if !keep[c] {
                s -= cliff;
            }
        }
        let penalty = self.misleading_penalty();
        for &[a, b] in &self.misleading_pairs {
            if keep[a] || keep[b] {
                s -= penalty;
            }
        }
        s
    }

    /// Multilinear extension of [`signal`](Self::signal) to masks in [0,1]^N
    /// and its gradient. Agrees with the hard signal on binary masks.
    pub fn relaxed_signal(&self, m: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = self.importance_weights.clone();
        let mut s: f64 = self.importance_weights.iter().zip(m).map(|(w, v)| w * v).sum();
        let cliff = CLIFF_FACTOR * self.threshold;
        for &c in &self.critical_set {
            s -= cliff * (1.0 - m[c]);
            grad[c] += cliff;
        }
        let penalty = self.misleading_penalty();
        for &[a, b] in &self.misleading_pairs {
            let both_dropped = (1.0 - m[a]) * (1.0 - m[b]);
            s -= penalty * (1.0 - both_dropped);
            grad[a] -= penalty * (1.0 - m[b]);
            grad[b] -= penalty * (1.0 - m[a]);
        }
        (s, grad)
    }

    /// Class logits for a given signal, and their derivative with respect to it.
    pub fn logits_from_signal(&self, signal: f64, label: usize) -> (Vec<f64>, Vec<f64>) {
        let scale = LOGIT_SCALE / self.total_mass();
        let z = scale * (signal - self.threshold);
        let foil = foil_class(label, self.num_classes);
        let mut logits = vec![-0.5 * LOGIT_SCALE; self.num_classes];
        let mut dlogits = vec![0.0; self.num_classes];
        logits[label] = z;
        logits[foil] = -z;
        dlogits[label] = scale;
        dlogits[foil] = -scale;
        (logits, dlogits)
    }
}

/// The class the oracle predicts when the signal falls short of the threshold.
#[inline]
pub fn foil_class(label: usize, num_classes: usize) -> usize {
    (label + 1) % num_classes
}

/// One generated sample with its oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub grid: TokenGrid,
    pub oracle: OracleSpec,
    pub label: usize,
    pub difficulty: Difficulty,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.oracle.validate(self.grid.num_tokens())?;
        if self.label >= self.oracle.num_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                self.label, self.oracle.num_classes
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn num_tokens(&self) -> usize {
        self.grid.num_tokens()
    }
}

/// Result of running the oracle on one mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub logits: Vec<f64>,
    pub predicted: usize,
    pub correct: bool,
    /// Cross-entropy of the label under softmax(logits).
    pub loss: f64,
}

impl TaskOutcome {
    fn from_logits(logits: Vec<f64>, label: usize) -> Self {
        let predicted = argmax(&logits);
        let loss = -log_softmax(&logits)[label];
        Self {
            logits,
            predicted,
            correct: predicted == label,
            loss,
        }
    }

    /// Softmax probability of `class`.
    pub fn class_probability(&self, class: usize) -> f64 {
        log_softmax(&self.logits)[class].exp()
    }
}

/// Full-token reference used for distillation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherOutput {
    pub logits: Vec<f64>,
    pub pooled_feature: Vec<f64>,
}

/// Run the oracle on a hard mask.
pub fn evaluate(task: &SyntheticTask, mask: &RetentionMask) -> Result<TaskOutcome> {
    evaluate_bits(task, mask.bits())
}

pub fn evaluate_bits(task: &SyntheticTask, keep: &[bool]) -> Result<TaskOutcome> {
    ensure_len("retention mask", task.num_tokens(), keep.len())?;
    let signal = task.oracle.signal(keep);
    let (logits, _) = task.oracle.logits_from_signal(signal, task.label);
    Ok(TaskOutcome::from_logits(logits, task.label))
}

/// Oracle output on a relaxed mask together with first derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedOutcome {
    pub logits: Vec<f64>,
    /// d logits[c] / d signal.
    pub dlogits_dsignal: Vec<f64>,
    /// d signal / d m_i.
    pub dsignal_dmask: Vec<f64>,
}

/// Evaluate the multilinear extension of the oracle at `m` in [0,1]^N.
pub fn evaluate_relaxed(task: &SyntheticTask, m: &[f64]) -> Result<RelaxedOutcome> {
    ensure_len("relaxed mask", task.num_tokens(), m.len())?;
    let (signal, dsignal_dmask) = task.oracle.relaxed_signal(m);
    let (logits, dlogits_dsignal) = task.oracle.logits_from_signal(signal, task.label);
    Ok(RelaxedOutcome {
        logits,
        dlogits_dsignal,
        dsignal_dmask,
    })
}

pub fn teacher_evaluate(task: &SyntheticTask) -> TeacherOutput {
    let n = task.num_tokens();
    let logits = task
        .oracle
        .logits_from_signal(task.oracle.signal(&vec![true; n]), task.label)
        .0;
    let pooled_feature = task
        .grid
        .pooled_feature(&vec![1.0; n])
        .expect("grid has at least one token");
    TeacherOutput {
        logits,
        pooled_feature,
    }
}

/// Correctness of the four states of misleading pair `pair_index`, taken
/// relative to the full mask with every other pair removed:
/// `[both kept, first dropped, second dropped, both dropped]`.
pub fn misleading_pair_states(task: &SyntheticTask, pair_index: usize) -> Result<[bool; 4]> {
    let pairs = &task.oracle.misleading_pairs;
    let [a, b] = *pairs
        .get(pair_index)
        .ok_or_else(|| Error::InvalidArgument(format!("no misleading pair {pair_index}")))?;
    let mut context = RetentionMask::all(task.num_tokens());
    for (j, p) in pairs.iter().enumerate() {
        if j != pair_index {
            context.set(p[0], false);
            context.set(p[1], false);
        }
    }
    let states = [
        context.clone(),
        context.without(&[a]),
        context.without(&[b]),
        context.without(&[a, b]),
    ];
    let mut out = [false; 4];
    for (o, m) in out.iter_mut().zip(&states) {
        *o = evaluate(task, m)?.correct;
    }
    Ok(out)
}

/// True when the pair behaves as an XOR: only the joint removal is correct.
pub fn misleading_pair_is_xor(task: &SyntheticTask, pair_index: usize) -> Result<bool> {
    Ok(misleading_pair_states(task, pair_index)? == [false, false, false, true])
}
