use tokprune_core::analysis::{compare_methods, HeuristicPolicy, LearnedPolicy};
use tokprune_core::env::{generate_task, load_task, save_task, Difficulty, SyntheticTask};
use tokprune_core::grpo::{train_grpo, GrpoConfig};
use tokprune_core::numeric::SeededRng;
use tokprune_core::scorer::{load_checkpoint, save_checkpoint, ScorerFlags, ScorerParams};
use tokprune_core::sft::{train_sft, SftConfig};

fn suite(per_level: u64, seed0: u64) -> Vec<SyntheticTask> {
    Difficulty::ALL
        .iter()
        .flat_map(|&l| (0..per_level).map(move |i| generate_task(l, 4, 4, 4, seed0 + 31 * i + l as u64).unwrap()))
        .collect()
}

fn configs() -> (SftConfig, GrpoConfig) {
    let sft = SftConfig {
        epochs: 3,
        n0: 16,
        curriculum: vec![(0, 8.0)],
        ..SftConfig::default()
    };
    let grpo = GrpoConfig {
        iterations: 4,
        tasks_per_iteration: 4,
        group_size: 8,
        ..GrpoConfig::default()
    };
    (sft, grpo)
}

fn train(seed: u64) -> (ScorerParams, ScorerParams) {
    let tasks = suite(4, 1);
    let (sft_cfg, grpo_cfg) = configs();
    let rng = SeededRng::new(seed);
    let init = ScorerParams::new(4, 8, ScorerFlags::default(), &mut rng.derive("init")).unwrap();
    let (sl, sft_log) = train_sft(&tasks, &sft_cfg, &init, &rng.derive("sft")).unwrap();
    assert_eq!(sft_log.len(), 3);
    let (rl, grpo_log) = train_grpo(&tasks, &grpo_cfg, &sl, &rng.derive("grpo")).unwrap();
    assert_eq!(grpo_log.len(), 4);
    assert!(grpo_log.iter().all(|l| l.mean_reward.is_finite() && l.kl >= 0.0));
    (sl, rl)
}

#[test]
fn two_stage_training_is_reproducible() {
    let (sl_a, rl_a) = train(5);
    let (sl_b, rl_b) = train(5);
    assert_eq!(sl_a, sl_b);
    assert_eq!(rl_a, rl_b);
    assert_ne!(sl_a, rl_a);
    let (_, rl_c) = train(6);
    assert_ne!(rl_a, rl_c);
}

#[test]
fn trained_policy_survives_disk_and_evaluates_identically() {
    let (_, rl) = train(9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rl.ckpt");
    save_checkpoint(&rl, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert!(rl.to_flat().iter().zip(loaded.to_flat()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let eval = suite(3, 10_000);
    let a = LearnedPolicy::new("rl", rl);
    let b = LearnedPolicy::new("rl", loaded);
    let ta = compare_methods(&[&HeuristicPolicy, &a], &eval, 0.5).unwrap();
    let tb = compare_methods(&[&HeuristicPolicy, &b], &eval, 0.5).unwrap();
    assert_eq!(ta.to_csv(), tb.to_csv());
}

#[test]
fn task_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    for (i, task) in suite(2, 77).into_iter().enumerate() {
        let path = dir.path().join(format!("t{i}.json"));
        save_task(&task, &path).unwrap();
        assert_eq!(load_task(&path).unwrap(), task);
    }
}
