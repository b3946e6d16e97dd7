use serde::{Deserialize, Serialize};

use crate::env::{TaskOutcome, TeacherOutput};
use crate::error::{ensure_len, Result};
use crate::mask::RetentionMask;
use crate::numeric::{log_softmax, softmax};

/// Components of the distillation objective for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SftLossBreakdown {
    pub l_distill: f64,
    pub l_kl: f64,
    pub l_ratio: f64,
    pub total: f64,
}

impl SftLossBreakdown {
    pub fn new(l_distill: f64, l_kl: f64, l_ratio: f64, alpha_kl: f64, beta_ratio: f64) -> Self {
        Self {
            l_distill,
            l_kl,
            l_ratio,
            total: l_distill + alpha_kl * l_kl + beta_ratio * l_ratio,
        }
    }
}

/// Mean squared error between two feature vectors.
pub fn feature_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// KL(softmax(teacher) || softmax(student)).
pub fn kl_divergence(teacher_logits: &[f64], student_logits: &[f64]) -> f64 {
    let lt = log_softmax(teacher_logits);
    let ls = log_softmax(student_logits);
    lt.iter().zip(&ls).map(|(a, b)| a.exp() * (a - b)).sum::<f64>().max(0.0)
}

/// Gradient of [`kl_divergence`] with respect to the student logits.
pub fn kl_grad_student(teacher_logits: &[f64], student_logits: &[f64]) -> Vec<f64> {
    let qt = softmax(teacher_logits);
    let qs = softmax(student_logits);
    qs.iter().zip(&qt).map(|(s, t)| s - t).collect()
}

/// The three distillation terms: pooled-feature MSE, logit KL and the keep
/// ratio penalty `(mean(p) - target)^2`.
pub fn distill_losses(
    student: &TaskOutcome,
    student_pooled: &[f64],
    teacher: &TeacherOutput,
    probs: &[f64],
    target_keep_ratio: f64,
    alpha_kl: f64,
    beta_ratio: f64,
) -> Result<SftLossBreakdown> {
    ensure_len("student pooled feature", teacher.pooled_feature.len(), student_pooled.len())?;
    ensure_len("student logits", teacher.logits.len(), student.logits.len())?;
    let l_distill = feature_mse(student_pooled, &teacher.pooled_feature);
    let l_kl = kl_divergence(&teacher.logits, &student.logits);
    let mean_p = probs.iter().sum::<f64>() / probs.len() as f64;
    let l_ratio = (mean_p - target_keep_ratio).powi(2);
    Ok(SftLossBreakdown::new(l_distill, l_kl, l_ratio, alpha_kl, beta_ratio))
}

/// Set-level supervised loss exactly as the credit-assignment comparison
/// states it: `-R sum_{t in pi} ln p_t - (1 - R) sum_{t not in pi} ln(1 - p_t)`.
/// Returns the loss and its gradient with respect to the log-odds.
pub fn sft_set_level_loss(mask: &RetentionMask, probs: &[f64], reward: u8) -> Result<(f64, Vec<f64>)> {
    ensure_len("set-level loss probs", mask.len(), probs.len())?;
    let r = f64::from(reward.min(1));
    let mut loss = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for (t, &p) in probs.iter().enumerate() {
        if mask.is_kept(t) {
            loss -= r * p.ln();
            grad[t] = -r * (1.0 - p);
        } else {
            loss -= (1.0 - r) * (1.0 - p).ln();
            grad[t] = (1.0 - r) * p;
        }
    }
    Ok((loss, grad))
}

/// Set-level loss in which a failed mask pushes every token it retained
/// towards removal: `-R sum_{t in pi} ln p_t - (1 - R) sum_{t in pi} ln(1 - p_t)`.
/// This is the uniform penalty on a failing selection that the literal form
/// above cannot express when the mask keeps every token.
pub fn sft_failure_penalty_loss(mask: &RetentionMask, probs: &[f64], reward: u8) -> Result<(f64, Vec<f64>)> {
    ensure_len("failure-penalty loss probs", mask.len(), probs.len())?;
    let r = f64::from(reward.min(1));
    let mut loss = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for t in mask.kept_indices() {
        let p = probs[t];
        loss -= r * p.ln() + (1.0 - r) * (1.0 - p).ln();
        grad[t] = -r * (1.0 - p) + (1.0 - r) * p;
    }
    Ok((loss, grad))
}
