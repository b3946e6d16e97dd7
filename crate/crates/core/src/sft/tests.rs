use super::*;
use crate::budget::BudgetSpec;
use crate::env::{brute_force_optimal, generate_task, Difficulty};
use crate::numeric::{finite_diff_check, sigmoid};
use crate::scorer::ScorerFlags;

fn fresh_params(d: usize, seed: u64) -> ScorerParams {
    ScorerParams::new(d, 8, ScorerFlags::default(), &mut SeededRng::new(seed)).unwrap()
}

#[test]
fn equivalent_token_examples() {
    let b = BudgetSpec::from_stages(100, vec![4, 4, 4], vec![1.0; 3]).unwrap();
    assert_eq!(equivalent_tokens(&b), 1200.0);
    let b = BudgetSpec::from_stages(64, vec![3, 5], vec![0.5, 0.25]).unwrap();
    assert_eq!(equivalent_tokens(&b), 176.0);
}

#[test]
fn distill_losses_vanish_for_the_full_mask() {
    let task = generate_task(Difficulty::Lv2, 4, 4, 5, 1).unwrap();
    let teacher = teacher_evaluate(&task);
    let full = RetentionMask::all(16);
    let outcome = evaluate(&task, &full).unwrap();
    let pooled = task.grid.pooled_feature(&full.as_f64()).unwrap();
    let probs = vec![0.25; 16];
    let b = distill_losses(&outcome, &pooled, &teacher, &probs, 0.25, 1.0, 10.0).unwrap();
    assert_eq!((b.l_distill, b.l_kl, b.l_ratio, b.total), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn kl_two_class_fixture() {
    // softmax(1,0) = (s, 1-s) with s = sigmoid(1); KL = (2s - 1) * ln(s / (1 - s)) = 2s - 1.
    let kl = kl_divergence(&[1.0, 0.0], &[0.0, 1.0]);
    let s = sigmoid(1.0);
    let independent = s * (s / (1.0 - s)).ln() + (1.0 - s) * ((1.0 - s) / s).ln();
    assert!((kl - independent).abs() < 1e-15);
    assert!((kl - 0.462_117_157_260_009_7).abs() < 1e-15);
    assert!((kl - (0.5f64).tanh()).abs() < 1e-15);
}

#[test]
fn breakdown_total_is_the_weighted_sum() {
    let b = SftLossBreakdown::new(0.3, 0.7, 0.01, 1.5, 10.0);
    assert_eq!(b.total, 0.3 + 1.5 * 0.7 + 10.0 * 0.01);
}

#[test]
fn set_level_loss_examples() {
    let all = RetentionMask::all(3);
    let p = [0.2, 0.6, 0.9];
    let (l, _) = sft_set_level_loss(&all, &p, 1).unwrap();
    assert!((l + p.iter().map(|v: &f64| v.ln()).sum::<f64>()).abs() < 1e-15);
    let (l, g) = sft_set_level_loss(&all, &p, 0).unwrap();
    assert_eq!(l, 0.0);
    assert_eq!(g, vec![0.0; 3]);
    let (l, _) = sft_set_level_loss(&RetentionMask::from_indices(2, &[0]).unwrap(), &[0.5, 0.5], 1).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn failure_penalty_hits_every_retained_token_with_one_sign() {
    let all = RetentionMask::all(3);
    let (_, g) = sft_failure_penalty_loss(&all, &[0.5, 0.5, 0.5], 0).unwrap();
    assert!(g.iter().all(|&v| v > 0.0));
    assert_eq!(g[0], g[2]);
    let (_, g) = sft_failure_penalty_loss(&all, &[0.5, 0.5, 0.5], 1).unwrap();
    assert!(g.iter().all(|&v| v < 0.0));
}

#[test]
fn curriculum_examples() {
    let mut cfg = SftConfig {
        curriculum: vec![(0, 50.0)],
        ..SftConfig::default()
    };
    for e in [0, 3, 100] {
        assert_eq!(curriculum_target(&cfg, e).unwrap().t_eq_target, 50.0);
    }
    cfg.curriculum = vec![(0, 1200.0), (5, 600.0)];
    cfg.n0 = 100;
    cfg.stage_layers = vec![4, 4, 4];
    cfg.stage_base_ratios = vec![1.0, 1.0, 1.0];
    assert_eq!(curriculum_target(&cfg, 4).unwrap().t_eq_target, 1200.0);
    let step = curriculum_target(&cfg, 5).unwrap();
    assert_eq!(step.t_eq_target, 600.0);
    assert_eq!(step.stage_keep_ratios, vec![0.5, 0.5, 0.5]);
    assert_eq!(step.effective_keep_ratio(), 0.5);
    cfg.curriculum.clear();
    assert!(curriculum_target(&cfg, 0).is_err());
}

#[test]
fn curriculum_targets_never_increase() {
    let table = linear_curriculum(64, 1, 1.0, 0.25, 12, 5);
    let cfg = SftConfig {
        curriculum: table,
        ..SftConfig::default()
    };
    cfg.validate().unwrap();
    let targets: Vec<f64> = (0..30).map(|e| curriculum_target(&cfg, e).unwrap().t_eq_target).collect();
    assert!(targets.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(targets[0], 64.0);
    assert_eq!(*targets.last().unwrap(), 16.0);
    let bad = SftConfig {
        curriculum: vec![(0, 10.0), (3, 20.0)],
        ..SftConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn straight_through_gradient_matches_its_surrogate() {
    for seed in 0..20 {
        let level = Difficulty::ALL[seed as usize % 3];
        let task = generate_task(level, 2, 3, 4, seed).unwrap();
        let teacher = teacher_evaluate(&task);
        let params = fresh_params(4, seed + 50);
        let keep = 0.5;
        let cond = Conditioning::new(keep, 1.0);
        let s = sft_task_loss_and_grad(&params, &task, &teacher, keep, cond, 1.0, 10.0).unwrap();
        let p0 = score_traced(&params, &task.grid, &RetentionMask::all(6), cond).unwrap().output.probs;
        let at = sft_surrogate_loss(&params, &task, &teacher, &s.mask, &p0, keep, cond, 1.0, 10.0).unwrap();
        assert!((at - s.breakdown.total).abs() < 1e-12);
        let loss = |flat: &[f64]| {
            sft_surrogate_loss(&params.with_flat(flat)?, &task, &teacher, &s.mask, &p0, keep, cond, 1.0, 10.0)
        };
        let err = finite_diff_check(loss, &s.grad, &params.to_flat(), 1e-5).unwrap();
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn zero_epochs_leave_params_unchanged() {
    let task = generate_task(Difficulty::Lv1, 4, 4, 4, 0).unwrap();
    let params = fresh_params(4, 1);
    let cfg = SftConfig {
        epochs: 0,
        ..SftConfig::default()
    };
    let (out, log) = train_sft(&[task], &cfg, &params, &SeededRng::new(0)).unwrap();
    assert_eq!(out, params);
    assert!(log.is_empty());
}

#[test]
fn single_task_training_approaches_brute_force() {
    let task = generate_task(Difficulty::Lv2, 4, 4, 6, 21).unwrap();
    let cfg = SftConfig {
        epochs: 50,
        batch_size: 1,
        n0: 16,
        curriculum: vec![(0, 8.0)],
        ..SftConfig::default()
    };
    let params = fresh_params(6, 3);
    let (trained, log) = train_sft(std::slice::from_ref(&task), &cfg, &params, &SeededRng::new(4)).unwrap();
    assert_eq!(log.len(), 50);
    let out = score_traced(&trained, &task.grid, &RetentionMask::all(16), Conditioning::keep(0.5)).unwrap().output;
    let mask = select_topk(&out, 8).unwrap();
    let outcome = evaluate(&task, &mask).unwrap();
    let (_, best) = brute_force_optimal(&task, 8).unwrap();
    assert!(outcome.correct);
    assert!(outcome.loss <= 1.1 * best, "loss {} vs optimum {best}", outcome.loss);
}

#[test]
fn training_is_deterministic() {
    let tasks: Vec<_> = (0..6).map(|s| generate_task(Difficulty::Lv2, 4, 4, 4, s).unwrap()).collect();
    let cfg = SftConfig {
        epochs: 3,
        batch_size: 4,
        n0: 16,
        curriculum: vec![(0, 12.0), (1, 8.0)],
        ..SftConfig::default()
    };
    let params = fresh_params(4, 9);
    let (a, la) = train_sft(&tasks, &cfg, &params, &SeededRng::new(5)).unwrap();
    let (b, lb) = train_sft(&tasks, &cfg, &params, &SeededRng::new(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la[0].keep_ratio, 0.75);
    assert_eq!(la[1].keep_ratio, 0.5);
}
