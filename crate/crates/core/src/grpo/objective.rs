use serde::{Deserialize, Serialize};

use super::{GrpoConfig, RatioMode, Rollout, RolloutGroup};
use crate::env::SyntheticTask;
use crate::error::{ensure_len, Error, Result};
use crate::mask::RetentionMask;
use crate::numeric::{log_sigmoid, sigmoid};
use crate::scorer::{log_prob_of, score_traced, ScorerParams};

/// Scalars reported alongside the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectiveStats {
    /// Clipped surrogate minus the KL penalty (maximized).
    pub objective: f64,
    pub surrogate: f64,
    /// Mean per-token KL to the reference policy.
    pub kl: f64,
    /// Share of ratio terms on the clipped branch.
    pub clip_fraction: f64,
}

/// KL(Bernoulli(sigmoid(s)) || Bernoulli(sigmoid(s_ref))) and its derivative
/// with respect to `s`, which is `p (1 - p) (s - s_ref)`.
pub fn bernoulli_kl(s: f64, s_ref: f64) -> (f64, f64) {
    let p = sigmoid(s);
    let kl = p * (log_sigmoid(s) - log_sigmoid(s_ref)) + (1.0 - p) * (log_sigmoid(-s) - log_sigmoid(-s_ref));
    (kl.max(0.0), p * (1.0 - p) * (s - s_ref))
}

/// `min(rho A, clip(rho, 1-eps, 1+eps) A)` and whether the unclipped branch
/// is the one selected (only then does the term depend on rho).
fn clipped_term(rho: f64, advantage: f64, eps: f64) -> (f64, bool) {
    let unclipped = rho * advantage;
    let clipped = rho.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

fn action_log_prob(s: f64, kept: bool) -> f64 {
    if kept {
        log_sigmoid(s)
    } else {
        log_sigmoid(-s)
    }
}

/// Objective and its gradient (for ascent) over a batch of rollout groups.
///
/// The old-policy log-probabilities come from the rollouts themselves for
/// trajectory ratios; per-token ratios rescore with `old`. The KL anchor is
/// evaluated analytically per token against `reference`, averaged over
/// tokens and groups. `clip_eps` may be infinite to disable clipping.
pub fn grpo_loss_and_grad(
    params: &ScorerParams,
    old: &ScorerParams,
    reference: &ScorerParams,
    groups: &[RolloutGroup],
    tasks: &[SyntheticTask],
    config: &GrpoConfig,
) -> Result<(ObjectiveStats, Vec<f64>)> {
    let total_rollouts: usize = groups.iter().map(|g| g.rollouts.len()).sum();
    if total_rollouts == 0 {
        return Err(Error::InvalidArgument("no rollouts".into()));
    }
    let m = total_rollouts as f64;
    let t = groups.len() as f64;
    let mut stats = ObjectiveStats::default();
    let mut clipped = 0usize;
    let mut terms = 0usize;
    let mut grad = vec![0.0; params.param_count()];

    for group in groups {
        let task = &tasks[group.task_index];
        let n = task.num_tokens();
        let all = RetentionMask::all(n);
        let trace = score_traced(params, &task.grid, &all, group.cond())?;
        let s = &trace.output.s_final;
        let p = &trace.output.probs;
        let s_ref = score_traced(reference, &task.grid, &all, group.cond())?.output.s_final;
        let s_old = match config.ratio_mode {
            RatioMode::Trajectory => None,
            RatioMode::PerToken => Some(score_traced(old, &task.grid, &all, group.cond())?.output.s_final),
        };
        let part = group_score_gradient(s, p, s_old.as_deref(), &s_ref, group, config, m, t)?;
        stats.surrogate += part.surrogate;
        stats.kl += part.kl;
        clipped += part.clipped;
        terms += part.terms;
        let g = params.backward(&task.grid, &trace, &part.d_s)?;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    stats.objective = stats.surrogate - config.kl_coeff * stats.kl;
    stats.clip_fraction = clipped as f64 / terms as f64;
    if !stats.objective.is_finite() {
        return Err(Error::NonFinite(format!("GRPO objective: {stats:?}")));
    }
    Ok((stats, grad))
}

/// One group's share of the objective and its gradient with respect to the
/// current log-odds `s`. `m` is the rollout count and `t` the group count of
/// the whole batch. `s_old` is needed only for per-token ratios.
pub(super) struct GroupPart {
    pub surrogate: f64,
    pub kl: f64,
    pub clipped: usize,
    pub terms: usize,
    pub d_s: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(super) fn group_score_gradient(
    s: &[f64],
    p: &[f64],
    s_old: Option<&[f64]>,
    s_ref: &[f64],
    group: &RolloutGroup,
    config: &GrpoConfig,
    m: f64,
    t: f64,
) -> Result<GroupPart> {
    let n = s.len();
    let eps = config.clip_eps;
    let mut part = GroupPart {
        surrogate: 0.0,
        kl: 0.0,
        clipped: 0,
        terms: 0,
        d_s: vec![0.0; n],
    };
    let d_s = &mut part.d_s;
    match (config.ratio_mode, s_old) {
        (RatioMode::Trajectory, _) => {
            for r in &group.rollouts {
                let lp = log_prob_of(s, &r.mask);
                let rho = (lp - r.log_prob_old).exp();
                if !rho.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "trajectory ratio: log p = {lp}, log p_old = {}",
                        r.log_prob_old
                    )));
                }
                let (term, active) = clipped_term(rho, r.advantage, eps);
                part.surrogate += term / m;
                part.terms += 1;
                if active {
                    let coef = rho * r.advantage / m;
                    for i in 0..n {
                        let a = if r.mask.is_kept(i) { 1.0 } else { 0.0 };
                        d_s[i] += coef * (a - p[i]);
                    }
                } else {
                    part.clipped += 1;
                }
            }
        }
        (RatioMode::PerToken, Some(s_old)) => {
            let w = 1.0 / (m * n as f64);
            for r in &group.rollouts {
                for i in 0..n {
                    let kept = r.mask.is_kept(i);
                    let rho = (action_log_prob(s[i], kept) - action_log_prob(s_old[i], kept)).exp();
                    if !rho.is_finite() {
                        return Err(Error::NonFinite(format!("per-token ratio at token {i}")));
                    }
                    let (term, active) = clipped_term(rho, r.advantage, eps);
                    part.surrogate += term * w;
                    part.terms += 1;
                    if active {
                        let a = if kept { 1.0 } else { 0.0 };
                        d_s[i] += w * rho * r.advantage * (a - p[i]);
                    } else {
                        part.clipped += 1;
                    }
                }
            }
        }
        (RatioMode::PerToken, None) => {
            return Err(Error::InvalidArgument("per-token ratios need the old scores".into()));
        }
    }
    let kw = 1.0 / (t * n as f64);
    for i in 0..n {
        let (kl, dkl) = bernoulli_kl(s[i], s_ref[i]);
        part.kl += kl * kw;
        d_s[i] -= config.kl_coeff * dkl * kw;
    }
    Ok(part)
}

/// Per-token score-function estimate `(1/G) sum_j (R_j - mean R)(a_tj - p_t)`
/// from raw rewards, with Monte Carlo standard errors.
pub fn token_gradient_estimate_with_se(actions: &[Vec<bool>], rewards: &[f64], probs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure_len("estimator rewards", actions.len(), rewards.len())?;
    let g = actions.len();
    if g < 2 {
        return Err(Error::InvalidArgument("estimator needs at least two rollouts".into()));
    }
    let n = probs.len();
    let gf = g as f64;
    let mean_r = rewards.iter().sum::<f64>() / gf;
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for (a, &r) in actions.iter().zip(rewards) {
        ensure_len("estimator actions", n, a.len())?;
        for t in 0..n {
            let x = (r - mean_r) * (if a[t] { 1.0 } else { 0.0 } - probs[t]);
            sum[t] += x;
            sum_sq[t] += x * x;
        }
    }
    let est: Vec<f64> = sum.iter().map(|s| s / gf).collect();
    let se = (0..n)
        .map(|t| {
            let var = ((sum_sq[t] - gf * est[t] * est[t]) / (gf - 1.0)).max(0.0);
            (var / gf).sqrt()
        })
        .collect();
    Ok((est, se))
}

/// Estimator over a rollout group using each rollout's trajectory reward.
pub fn token_gradient_estimate(rollouts: &[Rollout], probs: &[f64]) -> Result<Vec<f64>> {
    let actions: Vec<Vec<bool>> = rollouts.iter().map(|r| r.mask.bits().to_vec()).collect();
    let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
    Ok(token_gradient_estimate_with_se(&actions, &rewards, probs)?.0)
}
