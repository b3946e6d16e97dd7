use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    group_advantages, grpo_loss_and_grad, task_reward, trajectory_reward, GrpoConfig, ObjectiveStats, Rollout,
};
use crate::env::{evaluate, SyntheticTask};
use crate::error::{Error, Result};
use crate::mask::{keep_count, RetentionMask};
use crate::numeric::{all_finite, clip_global_norm, AdamState, SeededRng};
use crate::scorer::{sample_bernoulli, score_traced, select_topk, Conditioning, ScorerParams};

/// G rollouts on one task under one budget, sampled from the old policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub task_index: usize,
    pub keep_ratio: f64,
    pub t_target: f64,
    /// Loss of the reference policy's top-K mask at this budget.
    pub l_ref: f64,
    pub rollouts: Vec<Rollout>,
    /// Keep probabilities the rollouts were drawn from.
    pub sampling_probs: Vec<f64>,
}

impl RolloutGroup {
    pub fn cond(&self) -> Conditioning {
        Conditioning::keep(self.keep_ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoIterationLog {
    pub iteration: usize,
    pub mean_reward: f64,
    pub min_reward: f64,
    pub max_reward: f64,
    /// Share of rollouts whose mask was correct.
    pub accuracy: f64,
    pub mean_t_eq: f64,
    pub mean_t_target: f64,
    pub objective: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

/// Oracle loss of the reference policy's deterministic top-K mask.
pub fn reference_loss(reference: &ScorerParams, task: &SyntheticTask, keep_ratio: f64) -> Result<f64> {
    let n = task.num_tokens();
    let out = score_traced(reference, &task.grid, &RetentionMask::all(n), Conditioning::keep(keep_ratio))?.output;
    let mask = select_topk(&out, keep_count(keep_ratio, n))?;
    Ok(evaluate(task, &mask)?.loss)
}

/// Sample `config.group_size` masks from `params` and score them.
pub fn rollout_group(
    params: &ScorerParams,
    tasks: &[SyntheticTask],
    task_index: usize,
    keep_ratio: f64,
    l_ref: f64,
    config: &GrpoConfig,
    rng: &mut SeededRng,
) -> Result<RolloutGroup> {
    let task = &tasks[task_index];
    let n = task.num_tokens();
    let out = score_traced(params, &task.grid, &RetentionMask::all(n), Conditioning::keep(keep_ratio))?.output;
    let layers: usize = config.stage_layers.iter().sum();
    let t_target = config.t_target(keep_ratio, n);
    let mode = config.reward_mode.for_task(task.oracle.task_mode);

    let mut rollouts = Vec::with_capacity(config.group_size);
    for _ in 0..config.group_size {
        let sample = sample_bernoulli(&out, rng);
        let outcome = evaluate(task, &sample.mask)?;
        let r_task = task_reward(&outcome, mode, l_ref, config.reward_scale);
        // One mask applied from the first stage onwards.
        let t_eq = (sample.mask.kept() * layers) as f64;
        let reward = trajectory_reward(r_task, t_eq, t_target, config.budget_penalty);
        rollouts.push(Rollout {
            mask: sample.mask,
            log_prob_current: sample.log_prob,
            log_prob_old: sample.log_prob,
            outcome,
            r_task,
            t_eq,
            reward,
            advantage: 0.0,
            forced_keep: sample.forced_keep,
        });
    }
    let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
    for (r, a) in rollouts.iter_mut().zip(group_advantages(&rewards)) {
        r.advantage = a;
    }
    Ok(RolloutGroup {
        task_index,
        keep_ratio,
        t_target,
        l_ref,
        rollouts,
        sampling_probs: out.probs,
    })
}

/// Stage II. The reference (KL anchor and `L_ref`) is `initial`.
pub fn train_grpo(
    tasks: &[SyntheticTask],
    config: &GrpoConfig,
    initial: &ScorerParams,
    rng: &SeededRng,
) -> Result<(ScorerParams, Vec<GrpoIterationLog>)> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("train_grpo needs at least one task".into()));
    }
    let reference = initial.clone();
    let mut params = initial.clone();
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len(), config.learning_rate);
    let ratios = config.training_keep_ratios();
    let mut l_ref_cache: HashMap<(usize, u64), f64> = HashMap::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0usize;
    let mut epoch = 0u64;
    let mut log = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let mut it_rng = rng.derive_index("grpo-iteration", iteration as u64);
        let mut batch = Vec::with_capacity(config.tasks_per_iteration);
        for _ in 0..config.tasks_per_iteration {
            if cursor == order.len() {
                order = (0..tasks.len()).collect();
                rng.derive_index("grpo-epoch", epoch).shuffle(&mut order);
                epoch += 1;
                cursor = 0;
            }
            let ratio = ratios[it_rng.below(ratios.len())];
            batch.push((order[cursor], ratio));
            cursor += 1;
        }
        for &(t, ratio) in &batch {
            if let std::collections::hash_map::Entry::Vacant(e) = l_ref_cache.entry((t, ratio.to_bits())) {
                e.insert(reference_loss(&reference, &tasks[t], ratio)?);
            }
        }

        let old = params.clone();
        let groups = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &(t, ratio))| {
                let mut g_rng = it_rng.derive_index("group", slot as u64);
                rollout_group(&old, tasks, t, ratio, l_ref_cache[&(t, ratio.to_bits())], config, &mut g_rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut stats = ObjectiveStats::default();
        let mut grad_norm = 0.0;
        for _ in 0..config.inner_steps {
            let (s, grad) = grpo_loss_and_grad(&params, &old, &reference, &groups, tasks, config)?;
            if !all_finite(&grad) {
                return Err(Error::NonFinite(format!("GRPO gradient at iteration {iteration}: {s:?}")));
            }
            stats = s;
            // Ascent on the objective.
            let mut descent: Vec<f64> = grad.iter().map(|g| -g).collect();
            grad_norm = clip_global_norm(&mut descent, config.grad_clip);
            adam.step(&mut flat, &descent)?;
            params.set_flat(&flat)?;
        }

        let all: Vec<&Rollout> = groups.iter().flat_map(|g| &g.rollouts).collect();
        let m = all.len() as f64;
        log.push(GrpoIterationLog {
            iteration,
            mean_reward: all.iter().map(|r| r.reward).sum::<f64>() / m,
            min_reward: all.iter().map(|r| r.reward).fold(f64::INFINITY, f64::min),
            max_reward: all.iter().map(|r| r.reward).fold(f64::NEG_INFINITY, f64::max),
            accuracy: all.iter().filter(|r| r.outcome.correct).count() as f64 / m,
            mean_t_eq: all.iter().map(|r| r.t_eq).sum::<f64>() / m,
            mean_t_target: groups.iter().map(|g| g.t_target).sum::<f64>() / groups.len() as f64,
            objective: stats.objective,
            kl: stats.kl,
            clip_fraction: stats.clip_fraction,
            grad_norm,
        });
    }
    Ok((params, log))
}
