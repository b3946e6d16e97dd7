use crate::env::{TaskMode, TaskOutcome};
use crate::numeric::sigmoid;

/// Task reward: correctness for verifiable tasks, and for open-ended tasks
/// `1 - sigmoid(alpha * (L - L_ref))`, which is 0.5 at the reference loss.
pub fn task_reward(outcome: &TaskOutcome, mode: TaskMode, l_ref: f64, alpha_rew: f64) -> f64 {
    match mode {
        TaskMode::Verifiable => {
            if outcome.correct {
                1.0
            } else {
                0.0
            }
        }
        TaskMode::OpenEnded => open_ended_reward(outcome.loss, l_ref, alpha_rew),
    }
}

pub fn open_ended_reward(loss: f64, l_ref: f64, alpha_rew: f64) -> f64 {
    1.0 - sigmoid(alpha_rew * (loss - l_ref))
}

/// `r_task - gamma * max(0, T_eq - T_target)`.
pub fn trajectory_reward(r_task: f64, t_eq_realized: f64, t_target: f64, budget_penalty: f64) -> f64 {
    let excess = (t_eq_realized - t_target).max(0.0);
    if excess == 0.0 || budget_penalty == 0.0 {
        r_task
    } else {
        r_task - budget_penalty * excess
    }
}

/// Group-relative advantages `(r - mean) / std` with the population std.
/// A degenerate group (std < 1e-12) gets all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}
