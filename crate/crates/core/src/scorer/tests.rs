use super::*;
use crate::env::{generate_task, Difficulty};
use crate::numeric::{finite_diff_check, Matrix};
use proptest::prelude::*;

fn random_grid(seed: u64, h: usize, w: usize, d: usize) -> TokenGrid {
    let mut rng = SeededRng::new(seed);
    let n = h * w;
    let features = (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
    let heur = (0..n).map(|_| rng.normal()).collect();
    TokenGrid::new(h, w, features, heur).unwrap()
}

fn random_params(seed: u64, d: usize, hidden: usize, flags: ScorerFlags) -> ScorerParams {
    let mut rng = SeededRng::new(seed);
    let mut p = ScorerParams::zeros(d, hidden, flags);
    let flat: Vec<f64> = (0..p.param_count()).map(|_| 0.6 * rng.normal()).collect();
    p.set_flat(&flat).unwrap();
    p
}

fn random_retained(seed: u64, n: usize) -> RetentionMask {
    let mut rng = SeededRng::new(seed);
    let mut m: RetentionMask = (0..n).map(|_| rng.bernoulli(0.6)).collect::<Vec<_>>().into();
    m.set(rng.below(n), true);
    m
}

#[test]
fn param_count_is_exact() {
    let (d, h) = (5, 7);
    let p = ScorerParams::new(d, h, ScorerFlags::default(), &mut SeededRng::new(0)).unwrap();
    let expected = (d * h + h) + (h * h + h) + ((2 + h) * h + h) + (h * 2 * h + 2 * h) + (2 * h * h + h) + (h * 2 + 2);
    assert_eq!(p.param_count(), expected);
    assert_eq!(p.to_flat().len(), expected);
}

#[test]
fn local_extractor_examples() {
    let p = random_params(1, 3, 4, ScorerFlags::default());
    let mut grid = random_grid(2, 2, 2, 3);
    grid.features[3] = grid.features[1].clone();
    let f = extract_local(&p, &grid).unwrap();
    assert_eq!(f[1], f[3]);

    let mut z = ScorerParams::zeros(3, 4, ScorerFlags::default());
    z.local[1].bias = vec![0.5, -1.0, 0.0, 2.0];
    for v in extract_local(&z, &grid).unwrap() {
        assert_eq!(v, vec![0.5f64.tanh(), (-1.0f64).tanh(), 0.0, 2.0f64.tanh()]);
    }
    let bad = random_grid(2, 2, 2, 5);
    assert!(extract_local(&p, &bad).is_err());
}

#[test]
fn global_context_examples() {
    let v = vec![vec![0.3, -0.2]; 4];
    assert_eq!(global_context(&v, &RetentionMask::all(4)).unwrap(), vec![0.3, -0.2]);
    let f = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![7.0, 7.0]];
    let one = RetentionMask::from_indices(3, &[2]).unwrap();
    assert_eq!(global_context(&f, &one).unwrap(), vec![7.0, 7.0]);
    let two = RetentionMask::from_indices(3, &[0, 1]).unwrap();
    assert_eq!(global_context(&f, &two).unwrap(), vec![0.5, 0.5]);
    assert!(matches!(global_context(&f, &RetentionMask::none(3)), Err(Error::EmptyMask(_))));
}

#[test]
fn film_identity_and_collapse() {
    let mut p = random_params(3, 3, 4, ScorerFlags::default());
    let grid = random_grid(4, 2, 3, 3);
    let f = extract_local(&p, &grid).unwrap();
    let c = global_context(&f, &RetentionMask::all(6)).unwrap();

    p.zero_film_output();
    let (out, g, b) = film_modulate(&p, &f, Conditioning::keep(0.3), &c).unwrap();
    assert_eq!(out, f);
    assert!(g.iter().chain(&b).all(|&v| v == 0.0));

    p.film[1].weights = Matrix::zeros(8, 4);
    p.film[1].bias = [vec![-1.0; 4], vec![0.25, 0.5, 0.75, 1.0]].concat();
    let (out, _, _) = film_modulate(&p, &f, Conditioning::keep(0.3), &c).unwrap();
    for row in out {
        assert_eq!(row, vec![0.25, 0.5, 0.75, 1.0]);
    }
}

#[test]
fn film_depends_on_budget_pressure() {
    let p = random_params(5, 3, 4, ScorerFlags::default());
    let grid = random_grid(6, 2, 3, 3);
    let f = extract_local(&p, &grid).unwrap();
    let c = global_context(&f, &RetentionMask::all(6)).unwrap();
    let (_, g1, b1) = film_modulate(&p, &f, Conditioning::new(0.8, 0.8), &c).unwrap();
    let (_, g2, b2) = film_modulate(&p, &f, Conditioning::new(0.1, 0.8), &c).unwrap();
    assert_ne!(g1, g2);
    assert_ne!(b1, b2);
}

#[test]
fn fusion_examples() {
    let h = 3;
    let mut p = ScorerParams::zeros(2, h, ScorerFlags::default());
    let feats = vec![vec![0.1, 0.2, 0.3]; 2];
    p.fusion[1].bias = vec![2.0, 0.0];
    let out = fuse_scores(&p, &feats, &feats, &[0.0, 0.0]).unwrap();
    assert_eq!(out.s_final, vec![1.0, 1.0]);
    assert!((out.probs[0] - 0.731_058_578_630_004_9).abs() < 1e-12);

    p.fusion[1].bias = vec![2.0, -800.0];
    let out = fuse_scores(&p, &feats, &feats, &[0.4, -1.3]).unwrap();
    assert!((out.s_final[0] - 0.4).abs() < 1e-12 && (out.s_final[1] + 1.3).abs() < 1e-12);

    for gate in [-3.0, 0.0, 5.0] {
        p.fusion[1].bias = vec![0.7, gate];
        let out = fuse_scores(&p, &feats, &feats, &[0.7, 0.7]).unwrap();
        assert!(out.s_final.iter().all(|&s| (s - 0.7).abs() < 1e-15));
    }
}

#[test]
fn heuristic_normalization() {
    let z = normalize_heuristic(&[1.0, 2.0, 3.0, 4.0]);
    let mean: f64 = z.iter().sum::<f64>() / 4.0;
    let var: f64 = z.iter().map(|v| v * v).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-12);
    assert_eq!(normalize_heuristic(&[2.0; 5]), vec![0.0; 5]);
}

#[test]
fn identical_tokens_score_identically_and_permutation_equivariance() {
    let p = random_params(7, 3, 5, ScorerFlags::default());
    let mut grid = random_grid(8, 3, 3, 3);
    grid.features[4] = grid.features[0].clone();
    grid.heuristic_scores[4] = grid.heuristic_scores[0];
    let budget = BudgetSpec::single_stage(9, 1, 0.5).unwrap();
    let all = RetentionMask::all(9);
    let out = score(&p, &grid, &all, &budget).unwrap();
    assert_eq!(out.probs[0], out.probs[4]);

    let mut rng = SeededRng::new(9);
    for _ in 0..10 {
        let mut perm: Vec<usize> = (0..9).collect();
        rng.shuffle(&mut perm);
        let mut g2 = grid.clone();
        g2.features = perm.iter().map(|&i| grid.features[i].clone()).collect();
        g2.heuristic_scores = perm.iter().map(|&i| grid.heuristic_scores[i]).collect();
        let out2 = score(&p, &g2, &all, &budget).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((out2.probs[j] - out.probs[i]).abs() < 1e-12);
        }
    }
}

fn check_pipeline_gradient(seed: u64, flags: ScorerFlags) -> f64 {
    let (d, h) = (3, 4);
    let p = random_params(seed, d, h, flags);
    let grid = random_grid(seed + 1000, 2, 3, d);
    let retained = random_retained(seed + 2000, 6);
    let cond = Conditioning::new(0.35, 0.8);
    let mut rng = SeededRng::new(seed + 3000);
    let coef: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    // Nonlinear in the scores so every path is exercised.
    let loss_of = |out: &ScoreOutput| -> f64 {
        out.probs.iter().zip(&out.s_final).zip(&coef).map(|((p, s), c)| c * p * p + 0.1 * s * s).sum()
    };
    let trace = score_traced(&p, &grid, &retained, cond).unwrap();
    let d_s: Vec<f64> = trace
        .output
        .probs
        .iter()
        .zip(&trace.output.s_final)
        .zip(&coef)
        .map(|((p, s), c)| c * 2.0 * p * p * (1.0 - p) + 0.2 * s)
        .collect();
    let analytic = p.backward(&grid, &trace, &d_s).unwrap();
    let loss = |flat: &[f64]| {
        let q = p.with_flat(flat)?;
        Ok(loss_of(&score_traced(&q, &grid, &retained, cond)?.output))
    };
    finite_diff_check(loss, &analytic, &p.to_flat(), 1e-5).unwrap()
}

#[test]
fn full_pipeline_gradient_matches_finite_differences() {
    for seed in 0..20 {
        let err = check_pipeline_gradient(seed, ScorerFlags::default());
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn ablated_pipelines_gradient_matches_finite_differences() {
    for (a, b) in [(true, false), (false, true), (true, true)] {
        let flags = ScorerFlags {
            disable_film_modulator: a,
            disable_heuristic_fusion: b,
        };
        for seed in 0..5 {
            let err = check_pipeline_gradient(seed, flags);
            assert!(err < 1e-4, "{flags:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn topk_examples() {
    let out = |s: Vec<f64>| ScoreOutput {
        probs: s.iter().map(|&v| sigmoid(v)).collect(),
        s_ours: s.clone(),
        alpha_gate: vec![0.5; s.len()],
        s_final: s,
        film_gamma: vec![],
        film_beta: vec![],
    };
    assert_eq!(select_topk(&out(vec![0.3, -1.0, 2.0]), 3).unwrap(), RetentionMask::all(3));
    assert_eq!(
        select_topk(&out(vec![0.9, 0.1, 0.9]), 2).unwrap(),
        RetentionMask::from_indices(3, &[0, 2]).unwrap()
    );
    assert_eq!(
        select_topk(&out(vec![0.4; 4]), 2).unwrap(),
        RetentionMask::from_indices(4, &[0, 1]).unwrap()
    );
    assert!(select_topk(&out(vec![0.4; 4]), 0).is_err());
    assert!(select_topk(&out(vec![0.4; 4]), 5).is_err());
    let within = select_topk_within(
        &out(vec![5.0, 1.0, 3.0, 2.0]),
        &RetentionMask::from_indices(4, &[1, 2, 3]).unwrap(),
        2,
    )
    .unwrap();
    assert_eq!(within, RetentionMask::from_indices(4, &[2, 3]).unwrap());
}

fn output_from_probs(probs: Vec<f64>) -> ScoreOutput {
    let s: Vec<f64> = probs.iter().map(|&p| (p / (1.0 - p)).ln()).collect();
    ScoreOutput {
        probs,
        s_ours: s.clone(),
        alpha_gate: vec![0.5; s.len()],
        s_final: s,
        film_gamma: vec![],
        film_beta: vec![],
    }
}

#[test]
fn bernoulli_mean_kept_fraction() {
    let out = output_from_probs(vec![0.5; 20]);
    let mut rng = SeededRng::new(42);
    let total: usize = (0..100_000).map(|_| sample_bernoulli(&out, &mut rng).mask.kept()).sum();
    let frac = total as f64 / 2e6;
    assert!((frac - 0.5).abs() < 0.01, "{frac}");
}

#[test]
fn bernoulli_limits_and_exact_log_prob() {
    let eps = 1e-9;
    let out = output_from_probs(vec![1.0 - eps, eps]);
    let s = sample_bernoulli(&out, &mut SeededRng::new(1));
    assert_eq!(s.mask.bits(), &[true, false]);
    assert!(s.log_prob.abs() < 1e-8);

    let probs = vec![0.2, 0.7, 0.55, 0.9];
    let out = output_from_probs(probs.clone());
    let all = RetentionMask::all(4);
    let expect: f64 = probs.iter().map(|p| p.ln()).sum();
    assert!((log_prob_of(&out.s_final, &all) - expect).abs() < 1e-12);
    for word in 0..16u64 {
        let m = RetentionMask::from_word(4, word);
        let product: f64 = probs
            .iter()
            .zip(m.bits())
            .map(|(&p, &a)| if a { p } else { 1.0 - p })
            .product();
        assert!((log_prob_of(&out.s_final, &m).exp() - product).abs() < 1e-12);
    }
}

#[test]
fn empty_draws_force_the_most_probable_token() {
    let out = output_from_probs(vec![1e-12, 3e-12, 2e-12]);
    let s = sample_bernoulli(&out, &mut SeededRng::new(3));
    assert!(s.forced_keep);
    assert_eq!(s.mask, RetentionMask::from_indices(3, &[1]).unwrap());
    assert!((s.log_prob - log_prob_of(&out.s_final, &s.mask)).abs() == 0.0);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let task = generate_task(Difficulty::Lv2, 4, 4, 5, 3).unwrap();
    let flags = ScorerFlags {
        disable_film_modulator: true,
        disable_heuristic_fusion: false,
    };
    let p = random_params(11, task.grid.feature_dim, 6, flags);
    let bytes = write_checkpoint(&p);
    assert_eq!(&bytes[..4], b"GRIP");
    let back = read_checkpoint(&bytes).unwrap();
    assert_eq!(back, p);
    assert_eq!(write_checkpoint(&back), bytes);
    let a: Vec<u64> = p.to_flat().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = back.to_flat().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);

    let mut wrong = bytes.clone();
    wrong[4..8].copy_from_slice(&9u32.to_le_bytes());
    assert!(matches!(read_checkpoint(&wrong), Err(Error::VersionMismatch { found: 9, expected: 1 })));
    assert!(read_checkpoint(&bytes[..bytes.len() - 3]).is_err());
    let mut magic = bytes;
    magic[0] = b'X';
    assert!(matches!(read_checkpoint(&magic), Err(Error::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn final_score_is_a_convex_combination(seed in any::<u64>()) {
        let p = random_params(seed, 3, 4, ScorerFlags::default());
        let grid = random_grid(seed ^ 1, 2, 3, 3);
        let tr = score_traced(&p, &grid, &RetentionMask::all(6), Conditioning::keep(0.5)).unwrap();
        let hn = normalize_heuristic(&grid.heuristic_scores);
        for i in 0..6 {
            let (a, b) = (tr.output.s_ours[i], hn[i]);
            let s = tr.output.s_final[i];
            prop_assert!(a.min(b) - 1e-12 <= s && s <= a.max(b) + 1e-12);
            prop_assert!(tr.output.alpha_gate[i] > 0.0 && tr.output.alpha_gate[i] < 1.0);
            prop_assert_eq!(tr.output.probs[i], sigmoid(s));
        }
    }

    #[test]
    fn topk_is_invariant_to_positive_scaling(scores in prop::collection::vec(-5.0f64..5.0, 2..30), c in 0.01f64..100.0, k in 1usize..30) {
        let k = k.min(scores.len());
        let a = output_from_probs(scores.iter().map(|&s| sigmoid(s)).collect());
        let mut b = a.clone();
        b.s_final = a.s_final.iter().map(|s| s * c).collect();
        prop_assert_eq!(select_topk(&a, k).unwrap(), select_topk(&b, k).unwrap());
    }

    #[test]
    fn scoring_is_deterministic(seed in any::<u64>()) {
        let p = random_params(seed, 3, 4, ScorerFlags::default());
        let grid = random_grid(seed ^ 7, 2, 3, 3);
        let m = random_retained(seed, 6);
        let a = score_traced(&p, &grid, &m, Conditioning::keep(0.4)).unwrap().output;
        let b = score_traced(&p, &grid, &m, Conditioning::keep(0.4)).unwrap().output;
        prop_assert_eq!(a, b);
    }
}
