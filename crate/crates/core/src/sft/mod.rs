//! Stage I: supervised distillation of the scorer towards the full-token
//! teacher under a shrinking token budget.
//!
//! Selection is hard top-K in the forward pass. Gradients reach the scores
//! through a straight-through estimator: the derivative of the loss with
//! respect to each mask entry, evaluated at the hard mask on the oracle's
//! multilinear extension, is used as the derivative with respect to `p_i`.

mod curriculum;
mod losses;

pub use crate::budget::equivalent_tokens;
pub use curriculum::{curriculum_target, linear_curriculum, CurriculumStep};
pub use losses::{
    distill_losses, feature_mse, kl_divergence, kl_grad_student, sft_failure_penalty_loss, sft_set_level_loss,
    SftLossBreakdown,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{evaluate, evaluate_relaxed, teacher_evaluate, SyntheticTask, TeacherOutput};
use crate::error::{Error, Result};
use crate::mask::{keep_count, RetentionMask};
use crate::numeric::{all_finite, clip_global_norm, AdamState, SeededRng};
use crate::scorer::{score_traced, select_topk, Conditioning, ScorerParams};

/// Stage I hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    /// Weight on the logit KL term.
    pub alpha_kl: f64,
    /// Weight on the keep-ratio term.
    pub beta_ratio: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// `(first epoch, target T_eq)` rows, epochs ascending, targets non-increasing.
    pub curriculum: Vec<(usize, f64)>,
    pub batch_size: usize,
    pub seed: u64,
    /// Token capacity N0 the curriculum targets refer to.
    pub n0: usize,
    pub stage_layers: Vec<usize>,
    /// Stage keep ratios before uniform rescaling to the target.
    pub stage_base_ratios: Vec<f64>,
    /// Global-norm gradient clip applied before each Adam step.
    pub grad_clip: f64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            alpha_kl: 1.0,
            beta_ratio: 10.0,
            epochs: 20,
            learning_rate: 1e-2,
            curriculum: vec![(0, 32.0)],
            batch_size: 16,
            seed: 0,
            n0: 64,
            stage_layers: vec![1],
            stage_base_ratios: vec![1.0],
            grad_clip: 5.0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.curriculum.is_empty() {
            return Err(Error::InvalidArgument("empty curriculum".into()));
        }
        for w in self.curriculum.windows(2) {
            if w[1].0 < w[0].0 || w[1].1 > w[0].1 {
                return Err(Error::InvalidArgument(
                    "curriculum epochs must ascend and targets must not increase".into(),
                ));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.stage_layers.len() != self.stage_base_ratios.len() || self.stage_layers.is_empty() {
            return Err(Error::InvalidArgument("stage tables must be non-empty and equal length".into()));
        }
        Ok(())
    }
}

/// One line of the Stage I log (means over the epoch's samples).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftEpochLog {
    pub epoch: usize,
    pub t_eq_target: f64,
    pub keep_ratio: f64,
    pub l_distill: f64,
    pub l_kl: f64,
    pub l_ratio: f64,
    pub total: f64,
    pub accuracy: f64,
}

/// Loss, straight-through gradient and top-K correctness for one task.
#[derive(Debug, Clone)]
pub struct SftSample {
    pub breakdown: SftLossBreakdown,
    pub correct: bool,
    pub mask: RetentionMask,
    pub grad: Vec<f64>,
}

struct RelaxedTerms {
    l_distill: f64,
    l_kl: f64,
    /// d(l_distill + alpha * l_kl) / d m_i.
    d_mask: Vec<f64>,
}

fn relaxed_terms(task: &SyntheticTask, teacher: &TeacherOutput, m: &[f64], alpha_kl: f64) -> Result<RelaxedTerms> {
    let grid = &task.grid;
    let pooled = grid.pooled_feature(m)?;
    let mass: f64 = m.iter().sum();
    let d = grid.feature_dim as f64;
    let l_distill = feature_mse(&pooled, &teacher.pooled_feature);
    let diff: Vec<f64> = pooled.iter().zip(&teacher.pooled_feature).map(|(a, b)| a - b).collect();

    let relaxed = evaluate_relaxed(task, m)?;
    let l_kl = kl_divergence(&teacher.logits, &relaxed.logits);
    let d_kl_d_signal: f64 = kl_grad_student(&teacher.logits, &relaxed.logits)
        .iter()
        .zip(&relaxed.dlogits_dsignal)
        .map(|(a, b)| a * b)
        .sum();

    let d_mask = (0..m.len())
        .map(|i| {
            let d_pool: f64 = grid.features[i]
                .iter()
                .zip(&pooled)
                .zip(&diff)
                .map(|((f, p), e)| e * (f - p))
                .sum();
            2.0 / d * d_pool / mass + alpha_kl * d_kl_d_signal * relaxed.dsignal_dmask[i]
        })
        .collect();
    Ok(RelaxedTerms {
        l_distill,
        l_kl,
        d_mask,
    })
}

/// Per-task distillation loss at keep ratio `keep_ratio` with its
/// straight-through parameter gradient.
pub fn sft_task_loss_and_grad(
    params: &ScorerParams,
    task: &SyntheticTask,
    teacher: &TeacherOutput,
    keep_ratio: f64,
    cond: Conditioning,
    alpha_kl: f64,
    beta_ratio: f64,
) -> Result<SftSample> {
    let n = task.num_tokens();
    let trace = score_traced(params, &task.grid, &RetentionMask::all(n), cond)?;
    let probs = &trace.output.probs;
    let mask = select_topk(&trace.output, keep_count(keep_ratio, n))?;
    let outcome = evaluate(task, &mask)?;
    let terms = relaxed_terms(task, teacher, &mask.as_f64(), alpha_kl)?;
    let mean_p = probs.iter().sum::<f64>() / n as f64;
    let l_ratio = (mean_p - keep_ratio).powi(2);
    let breakdown = SftLossBreakdown::new(terms.l_distill, terms.l_kl, l_ratio, alpha_kl, beta_ratio);

    let d_ratio = beta_ratio * 2.0 * (mean_p - keep_ratio) / n as f64;
    let d_s: Vec<f64> = (0..n)
        .map(|i| (terms.d_mask[i] + d_ratio) * probs[i] * (1.0 - probs[i]))
        .collect();
    let grad = params.backward(&task.grid, &trace, &d_s)?;
    Ok(SftSample {
        breakdown,
        correct: outcome.correct,
        mask,
        grad,
    })
}

/// The function whose exact gradient the straight-through estimator returns:
/// the loss evaluated at mask `hard + p(params) - p_frozen`.
#[allow(clippy::too_many_arguments)]
pub fn sft_surrogate_loss(
    params: &ScorerParams,
    task: &SyntheticTask,
    teacher: &TeacherOutput,
    hard: &RetentionMask,
    p_frozen: &[f64],
    keep_ratio: f64,
    cond: Conditioning,
    alpha_kl: f64,
    beta_ratio: f64,
) -> Result<f64> {
    let n = task.num_tokens();
    let out = score_traced(params, &task.grid, &RetentionMask::all(n), cond)?.output;
    let m: Vec<f64> = (0..n)
        .map(|i| if hard.is_kept(i) { 1.0 } else { 0.0 } + out.probs[i] - p_frozen[i])
        .collect();
    let terms = relaxed_terms(task, teacher, &m, alpha_kl)?;
    let mean_p = out.probs.iter().sum::<f64>() / n as f64;
    Ok(terms.l_distill + alpha_kl * terms.l_kl + beta_ratio * (mean_p - keep_ratio).powi(2))
}

/// Stage I training loop. Returns the trained parameters and one log row per
/// epoch. Zero epochs returns the initial parameters unchanged.
pub fn train_sft(
    tasks: &[SyntheticTask],
    config: &SftConfig,
    initial: &ScorerParams,
    rng: &SeededRng,
) -> Result<(ScorerParams, Vec<SftEpochLog>)> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("train_sft needs at least one task".into()));
    }
    let teachers: Vec<TeacherOutput> = tasks.iter().map(teacher_evaluate).collect();
    let mut params = initial.clone();
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len(), config.learning_rate);
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let step = curriculum_target(config, epoch)?;
        let keep_ratio = step.effective_keep_ratio();
        let cond = Conditioning::keep(keep_ratio);
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        rng.derive_index("sft-epoch", epoch as u64).shuffle(&mut order);

        let mut sums = [0.0; 4];
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let samples = batch
                .par_iter()
                .map(|&t| {
                    sft_task_loss_and_grad(
                        &params,
                        &tasks[t],
                        &teachers[t],
                        keep_ratio,
                        cond,
                        config.alpha_kl,
                        config.beta_ratio,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grad = vec![0.0; flat.len()];
            for (s, &t) in samples.iter().zip(batch) {
                let b = &s.breakdown;
                if !b.total.is_finite() || !all_finite(&s.grad) {
                    return Err(Error::NonFinite(format!(
                        "SFT loss at epoch {epoch}, task seed {}: {b:?}",
                        tasks[t].seed
                    )));
                }
                sums[0] += b.l_distill;
                sums[1] += b.l_kl;
                sums[2] += b.l_ratio;
                sums[3] += b.total;
                correct += s.correct as usize;
                for (g, v) in grad.iter_mut().zip(&s.grad) {
                    *g += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            clip_global_norm(&mut grad, config.grad_clip);
            adam.step(&mut flat, &grad)?;
            params.set_flat(&flat)?;
        }
        let m = tasks.len() as f64;
        log.push(SftEpochLog {
            epoch,
            t_eq_target: step.t_eq_target,
            keep_ratio,
            l_distill: sums[0] / m,
            l_kl: sums[1] / m,
            l_ratio: sums[2] / m,
            total: sums[3] / m,
            accuracy: correct as f64 / m,
        });
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests;
