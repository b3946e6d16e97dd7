//! Adaptive token scorer.
//!
//! Per token: a two-layer extractor gives `F_local`. The masked mean of
//! `F_local` over retained tokens is the global context `C`. A small network
//! maps `(rho_target - rho_now, rho_target, C)` to per-sample FiLM parameters
//! `(gamma, beta)`, and `F~ = F * (1 + gamma) + beta`. The fusion head reads
//! `(F~, F - C)` and emits a learned score and a gate logit; the final log-odds
//! mix the learned score with the z-scored heuristic prior through the gate.

mod checkpoint;
mod select;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use select::{log_prob_of, sample_bernoulli, select_topk, select_topk_within, BernoulliSample};

pub use crate::mask::RetentionMask;

use serde::{Deserialize, Serialize};

use crate::budget::BudgetSpec;
use crate::env::TokenGrid;
use crate::error::{ensure_len, Error, Result};
use crate::numeric::{sigmoid, Activation, DenseGrad, DenseLayer, SeededRng};

pub const DEFAULT_HIDDEN: usize = 16;

/// Ablation switches. Both off is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScorerFlags {
    /// Replace FiLM with the identity map.
    pub disable_film_modulator: bool,
    /// Use the learned score alone (gate pinned to 1).
    pub disable_heuristic_fusion: bool,
}

impl ScorerFlags {
    pub(crate) fn to_bits(self) -> u32 {
        self.disable_film_modulator as u32 | (self.disable_heuristic_fusion as u32) << 1
    }

    pub(crate) fn from_bits(bits: u32) -> Result<Self> {
        if bits > 3 {
            return Err(Error::Format(format!("unknown scorer flag bits {bits:#x}")));
        }
        Ok(Self {
            disable_film_modulator: bits & 1 != 0,
            disable_heuristic_fusion: bits & 2 != 0,
        })
    }
}

/// Sample-level budget signal fed to the modulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditioning {
    pub rho_target: f64,
    pub rho_now: f64,
}

impl Conditioning {
    pub fn new(rho_target: f64, rho_now: f64) -> Self {
        Self { rho_target, rho_now }
    }

    /// Conditioning for a single stage that prunes the full set to `keep_ratio`.
    pub fn keep(keep_ratio: f64) -> Self {
        Self::new(keep_ratio, 1.0)
    }
}

impl From<&BudgetSpec> for Conditioning {
    fn from(b: &BudgetSpec) -> Self {
        Self::new(b.rho_target, b.rho_now)
    }
}

/// All learnable weights of the scorer.
///
/// Flat layout (used by the optimizer and the checkpoint): `local[0]`,
/// `local[1]`, `film[0]`, `film[1]`, `fusion[0]`, `fusion[1]`, each as
/// row-major weights followed by bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub flags: ScorerFlags,
    /// d -> h -> h, tanh.
    pub local: [DenseLayer; 2],
    /// (2 + h) -> h (tanh) -> 2h (identity): gamma then beta.
    pub film: [DenseLayer; 2],
    /// 2h -> h (tanh) -> 2 (identity): learned score then gate logit.
    pub fusion: [DenseLayer; 2],
}

impl ScorerParams {
    /// Glorot-initialized scorer. The FiLM output layer starts at zero so the
    /// modulator begins as the identity.
    pub fn new(input_dim: usize, hidden: usize, flags: ScorerFlags, rng: &mut SeededRng) -> Result<Self> {
        if input_dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("scorer dims must be positive".into()));
        }
        let h = hidden;
        Ok(Self {
            input_dim,
            hidden,
            flags,
            local: [
                DenseLayer::glorot(input_dim, h, Activation::Tanh, rng),
                DenseLayer::glorot(h, h, Activation::Tanh, rng),
            ],
            film: [
                DenseLayer::glorot(2 + h, h, Activation::Tanh, rng),
                DenseLayer::zeros(h, 2 * h, Activation::Identity),
            ],
            fusion: [
                DenseLayer::glorot(2 * h, h, Activation::Tanh, rng),
                DenseLayer::glorot(h, 2, Activation::Identity, rng),
            ],
        })
    }

    /// Every weight and bias zero.
    pub fn zeros(input_dim: usize, hidden: usize, flags: ScorerFlags) -> Self {
        let h = hidden;
        Self {
            input_dim,
            hidden,
            flags,
            local: [
                DenseLayer::zeros(input_dim, h, Activation::Tanh),
                DenseLayer::zeros(h, h, Activation::Tanh),
            ],
            film: [
                DenseLayer::zeros(2 + h, h, Activation::Tanh),
                DenseLayer::zeros(h, 2 * h, Activation::Identity),
            ],
            fusion: [
                DenseLayer::zeros(2 * h, h, Activation::Tanh),
                DenseLayer::zeros(h, 2, Activation::Identity),
            ],
        }
    }

    pub fn layers(&self) -> [&DenseLayer; 6] {
        [
            &self.local[0],
            &self.local[1],
            &self.film[0],
            &self.film[1],
            &self.fusion[0],
            &self.fusion[1],
        ]
    }

    fn layers_mut(&mut self) -> [&mut DenseLayer; 6] {
        let [l0, l1] = &mut self.local;
        let [f0, f1] = &mut self.film;
        let [u0, u1] = &mut self.fusion;
        [l0, l1, f0, f1, u0, u1]
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            l.write_flat(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        ensure_len("scorer flat parameters", self.param_count(), flat.len())?;
        let mut offset = 0;
        for l in self.layers_mut() {
            offset += l.read_flat(&flat[offset..]);
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    /// Zero the FiLM output layer, making the modulator an exact identity.
    pub fn zero_film_output(&mut self) {
        let h = self.hidden;
        self.film[1] = DenseLayer::zeros(h, 2 * h, Activation::Identity);
    }
}

/// Per-token scores for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutput {
    /// Retention probabilities `sigmoid(s_final)`.
    pub probs: Vec<f64>,
    pub s_final: Vec<f64>,
    pub s_ours: Vec<f64>,
    pub alpha_gate: Vec<f64>,
    pub film_gamma: Vec<f64>,
    pub film_beta: Vec<f64>,
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ScoreTrace {
    pub output: ScoreOutput,
    retained: Vec<bool>,
    kept: usize,
    local_hidden: Vec<Vec<f64>>,
    f_local: Vec<Vec<f64>>,
    film_input: Vec<f64>,
    film_hidden: Vec<f64>,
    fusion_input: Vec<Vec<f64>>,
    fusion_hidden: Vec<Vec<f64>>,
    fusion_out: Vec<[f64; 2]>,
    heuristic_norm: Vec<f64>,
}

/// Per-token application of the local extractor.
pub fn extract_local(params: &ScorerParams, grid: &TokenGrid) -> Result<Vec<Vec<f64>>> {
    ensure_len("scorer input dimension", params.input_dim, grid.feature_dim)?;
    grid.features
        .iter()
        .map(|x| params.local[1].forward(&params.local[0].forward(x)?))
        .collect()
}

/// Mean of `f_local` over retained tokens.
pub fn global_context(f_local: &[Vec<f64>], retained: &RetentionMask) -> Result<Vec<f64>> {
    ensure_len("global_context mask", f_local.len(), retained.len())?;
    if retained.kept() == 0 {
        return Err(Error::EmptyMask("global_context"));
    }
    let h = f_local[0].len();
    let mut c = vec![0.0; h];
    for i in retained.kept_indices() {
        for (ck, fk) in c.iter_mut().zip(&f_local[i]) {
            *ck += fk;
        }
    }
    let k = retained.kept() as f64;
    c.iter_mut().for_each(|v| *v /= k);
    Ok(c)
}

fn film_params(params: &ScorerParams, cond: Conditioning, context: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut input = Vec::with_capacity(2 + context.len());
    input.push(cond.rho_target - cond.rho_now);
    input.push(cond.rho_target);
    input.extend_from_slice(context);
    let hidden = params.film[0].forward(&input)?;
    let out = params.film[1].forward(&hidden)?;
    let h = params.hidden;
    Ok((input, hidden, out[..h].to_vec(), out[h..].to_vec()))
}

fn modulate(f: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    f.iter()
        .zip(gamma)
        .zip(beta)
        .map(|((x, g), b)| x * (1.0 + g) + b)
        .collect()
}

/// Budget-conditioned feature-wise affine modulation. Returns the modulated
/// features and the shared `(gamma, beta)`.
pub fn film_modulate(
    params: &ScorerParams,
    f_local: &[Vec<f64>],
    cond: Conditioning,
    context: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    ensure_len("film context", params.hidden, context.len())?;
    if params.flags.disable_film_modulator {
        let h = params.hidden;
        return Ok((f_local.to_vec(), vec![0.0; h], vec![0.0; h]));
    }
    let (_, _, gamma, beta) = film_params(params, cond, context)?;
    let out = f_local.iter().map(|f| modulate(f, &gamma, &beta)).collect();
    Ok((out, gamma, beta))
}

/// Z-score per sample. A constant prior maps to all zeros.
pub fn normalize_heuristic(scores: &[f64]) -> Vec<f64> {
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - mean) / std).collect()
}

fn fuse_token(params: &ScorerParams, out: [f64; 2], h_norm: f64) -> (f64, f64) {
    if params.flags.disable_heuristic_fusion {
        (1.0, out[0])
    } else {
        let alpha = sigmoid(out[1]);
        (alpha, alpha * out[0] + (1.0 - alpha) * h_norm)
    }
}

/// Gated fusion of the learned score with a normalized heuristic prior. The
/// FiLM fields of the result are left at zero.
pub fn fuse_scores(
    params: &ScorerParams,
    f_mod: &[Vec<f64>],
    f_unique: &[Vec<f64>],
    heuristic_norm: &[f64],
) -> Result<ScoreOutput> {
    let n = f_mod.len();
    ensure_len("fuse_scores unique features", n, f_unique.len())?;
    ensure_len("fuse_scores heuristic", n, heuristic_norm.len())?;
    let h = params.hidden;
    let mut out = ScoreOutput {
        probs: Vec::with_capacity(n),
        s_final: Vec::with_capacity(n),
        s_ours: Vec::with_capacity(n),
        alpha_gate: Vec::with_capacity(n),
        film_gamma: vec![0.0; h],
        film_beta: vec![0.0; h],
    };
    for i in 0..n {
        let input = [f_mod[i].as_slice(), f_unique[i].as_slice()].concat();
        let raw = params.fusion[1].forward(&params.fusion[0].forward(&input)?)?;
        let (alpha, s) = fuse_token(params, [raw[0], raw[1]], heuristic_norm[i]);
        out.s_ours.push(raw[0]);
        out.alpha_gate.push(alpha);
        out.s_final.push(s);
        out.probs.push(sigmoid(s));
    }
    Ok(out)
}

/// Full scorer forward pass.
pub fn score(params: &ScorerParams, grid: &TokenGrid, retained: &RetentionMask, budget: &BudgetSpec) -> Result<ScoreOutput> {
    Ok(score_traced(params, grid, retained, budget.into())?.output)
}

/// Forward pass with explicit conditioning, keeping what backward needs.
pub fn score_traced(params: &ScorerParams, grid: &TokenGrid, retained: &RetentionMask, cond: Conditioning) -> Result<ScoreTrace> {
    let n = grid.num_tokens();
    ensure_len("scorer input dimension", params.input_dim, grid.feature_dim)?;
    ensure_len("retained mask", n, retained.len())?;
    let h = params.hidden;

    let mut local_hidden = Vec::with_capacity(n);
    let mut f_local = Vec::with_capacity(n);
    for x in &grid.features {
        let a = params.local[0].forward(x)?;
        f_local.push(params.local[1].forward(&a)?);
        local_hidden.push(a);
    }
    let context = global_context(&f_local, retained)?;

    let (film_input, film_hidden, gamma, beta) = if params.flags.disable_film_modulator {
        (Vec::new(), Vec::new(), vec![0.0; h], vec![0.0; h])
    } else {
        film_params(params, cond, &context)?
    };

    let heuristic_norm = normalize_heuristic(&grid.heuristic_scores);
    let mut output = ScoreOutput {
        probs: Vec::with_capacity(n),
        s_final: Vec::with_capacity(n),
        s_ours: Vec::with_capacity(n),
        alpha_gate: Vec::with_capacity(n),
        film_gamma: gamma,
        film_beta: beta,
    };
    let mut fusion_input = Vec::with_capacity(n);
    let mut fusion_hidden = Vec::with_capacity(n);
    let mut fusion_out = Vec::with_capacity(n);
    for i in 0..n {
        let f = &f_local[i];
        let mut input = if params.flags.disable_film_modulator {
            f.clone()
        } else {
            modulate(f, &output.film_gamma, &output.film_beta)
        };
        input.extend(f.iter().zip(&context).map(|(a, c)| a - c));
        let hid = params.fusion[0].forward(&input)?;
        let raw = params.fusion[1].forward(&hid)?;
        let raw = [raw[0], raw[1]];
        let (alpha, s) = fuse_token(params, raw, heuristic_norm[i]);
        output.s_ours.push(raw[0]);
        output.alpha_gate.push(alpha);
        output.s_final.push(s);
        output.probs.push(sigmoid(s));
        fusion_input.push(input);
        fusion_hidden.push(hid);
        fusion_out.push(raw);
    }

    Ok(ScoreTrace {
        output,
        retained: retained.bits().to_vec(),
        kept: retained.kept(),
        local_hidden,
        f_local,
        film_input,
        film_hidden,
        fusion_input,
        fusion_hidden,
        fusion_out,
        heuristic_norm,
    })
}

impl ScorerParams {
    /// Gradient of a loss with respect to the flat parameters, given the
    /// loss gradient with respect to `s_final`.
    pub fn backward(&self, grid: &TokenGrid, trace: &ScoreTrace, d_s_final: &[f64]) -> Result<Vec<f64>> {
        let n = grid.num_tokens();
        ensure_len("d_s_final", n, d_s_final.len())?;
        let h = self.hidden;
        let mut g_local = [DenseGrad::zeros_like(&self.local[0]), DenseGrad::zeros_like(&self.local[1])];
        let mut g_film = [DenseGrad::zeros_like(&self.film[0]), DenseGrad::zeros_like(&self.film[1])];
        let mut g_fusion = [DenseGrad::zeros_like(&self.fusion[0]), DenseGrad::zeros_like(&self.fusion[1])];
        let film_on = !self.flags.disable_film_modulator;
        let gamma = &trace.output.film_gamma;

        let mut d_f = vec![vec![0.0; h]; n];
        let mut d_context = vec![0.0; h];
        let mut d_gamma = vec![0.0; h];
        let mut d_beta = vec![0.0; h];
        for i in 0..n {
            let ds = d_s_final[i];
            if ds == 0.0 {
                continue;
            }
            let [s_ours, gate] = trace.fusion_out[i];
            let d_raw = if self.flags.disable_heuristic_fusion {
                [ds, 0.0]
            } else {
                let alpha = trace.output.alpha_gate[i];
                let d_alpha = ds * (s_ours - trace.heuristic_norm[i]);
                [ds * alpha, d_alpha * alpha * (1.0 - alpha)]
            };
            let hid = &trace.fusion_hidden[i];
            let d_hid = self.fusion[1].backward_accumulate(hid, &[s_ours, gate], &d_raw, &mut g_fusion[1])?;
            let d_in = self.fusion[0].backward_accumulate(&trace.fusion_input[i], hid, &d_hid, &mut g_fusion[0])?;
            let (d_mod, d_unique) = d_in.split_at(h);
            let f = &trace.f_local[i];
            for k in 0..h {
                if film_on {
                    d_f[i][k] += d_mod[k] * (1.0 + gamma[k]);
                    d_gamma[k] += d_mod[k] * f[k];
                    d_beta[k] += d_mod[k];
                } else {
                    d_f[i][k] += d_mod[k];
                }
                d_f[i][k] += d_unique[k];
                d_context[k] -= d_unique[k];
            }
        }

        if film_on {
            let film_out = [gamma.as_slice(), trace.output.film_beta.as_slice()].concat();
            let d_out = [d_gamma, d_beta].concat();
            let d_hid = self.film[1].backward_accumulate(&trace.film_hidden, &film_out, &d_out, &mut g_film[1])?;
            let d_in = self.film[0].backward_accumulate(&trace.film_input, &trace.film_hidden, &d_hid, &mut g_film[0])?;
            for k in 0..h {
                d_context[k] += d_in[2 + k];
            }
        }

        let inv_kept = 1.0 / trace.kept as f64;
        for i in 0..n {
            if trace.retained[i] {
                for k in 0..h {
                    d_f[i][k] += d_context[k] * inv_kept;
                }
            }
            if d_f[i].iter().all(|&v| v == 0.0) {
                continue;
            }
            let a = &trace.local_hidden[i];
            let d_a = self.local[1].backward_accumulate(a, &trace.f_local[i], &d_f[i], &mut g_local[1])?;
            self.local[0].backward_accumulate(&grid.features[i], a, &d_a, &mut g_local[0])?;
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for g in g_local.iter().chain(&g_film).chain(&g_fusion) {
            g.write_flat(&mut flat);
        }
        Ok(flat)
    }
}

#[cfg(test)]
mod tests;
