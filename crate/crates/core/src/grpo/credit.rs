use serde::{Deserialize, Serialize};

use super::token_gradient_estimate_with_se;
use crate::error::{Error, Result};
use crate::mask::RetentionMask;
use crate::numeric::SeededRng;
use crate::sft::{sft_failure_penalty_loss, sft_set_level_loss};

/// Toy environment with one harmful token: the reward is 1 unless the culprit
/// is kept. Every token is drawn independently with the same keep probability
/// and an empty draw is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CulpritEnvironment {
    pub num_tokens: usize,
    pub culprit: usize,
    pub keep_prob: f64,
}

impl Default for CulpritEnvironment {
    fn default() -> Self {
        Self {
            num_tokens: 3,
            culprit: 2,
            keep_prob: 0.5,
        }
    }
}

impl CulpritEnvironment {
    pub fn reward(&self, keep: &[bool]) -> f64 {
        if keep[self.culprit] {
            0.0
        } else {
            1.0
        }
    }

    /// Exact `d E[R] / d s_t` at the sampling point: `-p (1 - p)` for the
    /// culprit and zero elsewhere.
    pub fn exact_gradient(&self) -> Vec<f64> {
        let p = self.keep_prob;
        (0..self.num_tokens)
            .map(|t| if t == self.culprit { -p * (1.0 - p) } else { 0.0 })
            .collect()
    }

    pub fn token_label(&self, t: usize) -> String {
        let name = if t < 26 { ((b'A' + t as u8) as char).to_string() } else { format!("t{t}") };
        if t == self.culprit {
            format!("{name} (culprit)")
        } else {
            name
        }
    }
}

/// One row of the credit-assignment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEstimate {
    pub token: usize,
    pub label: String,
    /// Gradient of the literal set-level loss on the failing all-kept mask.
    pub set_level_grad: f64,
    /// Gradient of the failure-penalty variant on the same mask.
    pub failure_penalty_grad: f64,
    /// Group-relative score-function estimate of `d E[R] / d s_t`.
    pub estimate: f64,
    pub std_error: f64,
    pub exact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditReport {
    pub environment: CulpritEnvironment,
    pub num_rollouts: usize,
    pub mean_reward: f64,
    pub tokens: Vec<TokenEstimate>,
}

impl CreditReport {
    /// Fixed-width table, one line per token. Adding 0.0 prints -0 as 0.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>14} {:>16} {:>12} {:>10} {:>10}\n",
            "token", "set-level", "failure-penalty", "estimate", "std-err", "exact"
        );
        for t in &self.tokens {
            out.push_str(&format!(
                "{:<14} {:>14.6} {:>16.6} {:>12.6} {:>10.6} {:>10.6}\n",
                t.label,
                t.set_level_grad + 0.0,
                t.failure_penalty_grad + 0.0,
                t.estimate,
                t.std_error,
                t.exact + 0.0
            ));
        }
        out
    }
}

/// Compare the two supervised set-level gradients against the group-relative
/// estimator on a [`CulpritEnvironment`].
///
/// The supervised gradients are taken on the all-kept mask, which fails.
/// They are gradients of a loss, so descending them moves `s_t` opposite
/// their sign. The estimator is of the reward gradient (ascent).
pub fn credit_assignment_demo(env: &CulpritEnvironment, num_rollouts: usize, rng: &SeededRng) -> Result<CreditReport> {
    if env.culprit >= env.num_tokens || !(env.keep_prob > 0.0 && env.keep_prob < 1.0) {
        return Err(Error::InvalidArgument(format!("bad culprit environment {env:?}")));
    }
    let n = env.num_tokens;
    let probs = vec![env.keep_prob; n];
    let all = RetentionMask::all(n);
    let reward_all = env.reward(all.bits()) as u8;
    let (_, literal) = sft_set_level_loss(&all, &probs, reward_all)?;
    let (_, penalty) = sft_failure_penalty_loss(&all, &probs, reward_all)?;

    let mut draw = rng.derive("culprit-rollouts");
    let actions: Vec<Vec<bool>> = (0..num_rollouts)
        .map(|_| (0..n).map(|_| draw.bernoulli(env.keep_prob)).collect())
        .collect();
    let rewards: Vec<f64> = actions.iter().map(|a| env.reward(a)).collect();
    let (est, se) = token_gradient_estimate_with_se(&actions, &rewards, &probs)?;
    let exact = env.exact_gradient();

    Ok(CreditReport {
        environment: *env,
        num_rollouts,
        mean_reward: rewards.iter().sum::<f64>() / num_rollouts as f64,
        tokens: (0..n)
            .map(|t| TokenEstimate {
                token: t,
                label: env.token_label(t),
                set_level_grad: literal[t],
                failure_penalty_grad: penalty[t],
                estimate: est[t],
                std_error: se[t],
                exact: exact[t],
            })
            .collect(),
    })
}
