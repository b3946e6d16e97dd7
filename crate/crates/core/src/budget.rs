//! Token budgets over a multi-stage pruning schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Budget conditioning and stage schedule for one pruning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Target keep ratio fed to the modulator.
    pub rho_target: f64,
    /// Keep ratio of the incoming token set.
    pub rho_now: f64,
    /// Target equivalent token count.
    pub t_target: f64,
    /// Initial token capacity.
    pub n0: usize,
    pub stage_layers: Vec<usize>,
    pub stage_keep_ratios: Vec<f64>,
}

impl BudgetSpec {
    pub fn new(
        rho_target: f64,
        rho_now: f64,
        t_target: f64,
        n0: usize,
        stage_layers: Vec<usize>,
        stage_keep_ratios: Vec<f64>,
    ) -> Result<Self> {
        let b = Self {
            rho_target,
            rho_now,
            t_target,
            n0,
            stage_layers,
            stage_keep_ratios,
        };
        b.validate()?;
        Ok(b)
    }

    /// Schedule whose final stage keeps `stage_keep_ratios.last()`, conditioned
    /// on the full token set and targeting its own equivalent token count.
    pub fn from_stages(n0: usize, stage_layers: Vec<usize>, stage_keep_ratios: Vec<f64>) -> Result<Self> {
        let rho_target = stage_keep_ratios.last().copied().unwrap_or(1.0);
        let t_target = equivalent_tokens_raw(n0, &stage_layers, &stage_keep_ratios);
        Self::new(rho_target, 1.0, t_target, n0, stage_layers, stage_keep_ratios)
    }

    /// One stage spanning `layers` layers at `keep_ratio`.
    pub fn single_stage(n0: usize, layers: usize, keep_ratio: f64) -> Result<Self> {
        Self::from_stages(n0, vec![layers], vec![keep_ratio])
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho_now) || !(0.0..=self.rho_now).contains(&self.rho_target) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= rho_target ({}) <= rho_now ({}) <= 1",
                self.rho_target, self.rho_now
            )));
        }
        if self.stage_layers.is_empty() || self.stage_layers.len() != self.stage_keep_ratios.len() {
            return Err(Error::InvalidArgument(format!(
                "stage tables must be non-empty and equal length ({} layers, {} ratios)",
                self.stage_layers.len(),
                self.stage_keep_ratios.len()
            )));
        }
        if !self.stage_keep_ratios.iter().all(|r| (0.0..=1.0).contains(r)) {
            return Err(Error::InvalidArgument("stage keep ratios must lie in [0, 1]".into()));
        }
        if !(self.t_target.is_finite() && self.t_target >= 0.0) {
            return Err(Error::InvalidArgument("t_target must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        self.stage_layers.len()
    }

    pub fn total_layers(&self) -> usize {
        self.stage_layers.iter().sum()
    }

    /// Equivalent token count of the planned schedule.
    pub fn equivalent_tokens(&self) -> f64 {
        equivalent_tokens_raw(self.n0, &self.stage_layers, &self.stage_keep_ratios)
    }

    /// Equivalent token count realized by concrete per-stage kept counts.
    pub fn realized_equivalent_tokens(&self, kept_per_stage: &[usize]) -> Result<f64> {
        crate::error::ensure_len("kept-per-stage", self.num_stages(), kept_per_stage.len())?;
        Ok(kept_per_stage
            .iter()
            .zip(&self.stage_layers)
            .map(|(&k, &l)| k as f64 * l as f64)
            .sum())
    }

    /// Same schedule with every stage keep ratio rescaled so the equivalent
    /// token count hits `target` (see [`scale_ratios_to_target`]).
    pub fn rescaled_to(&self, target: f64) -> Result<Self> {
        let ratios = scale_ratios_to_target(self.n0, &self.stage_layers, &self.stage_keep_ratios, target)?;
        let mut b = Self::from_stages(self.n0, self.stage_layers.clone(), ratios)?;
        b.t_target = target;
        Ok(b)
    }
}

/// T_eq = sum_i r_i * N0 * L_i.
pub fn equivalent_tokens(budget: &BudgetSpec) -> f64 {
    budget.equivalent_tokens()
}

fn equivalent_tokens_raw(n0: usize, layers: &[usize], ratios: &[f64]) -> f64 {
    ratios
        .iter()
        .zip(layers)
        .map(|(&r, &l)| r * n0 as f64 * l as f64)
        .sum()
}

/// Scale `base` uniformly by c so that sum_i min(1, c r_i) N0 L_i = target.
/// When no ratio saturates the answer is closed form; otherwise c is found by
/// bisection. The result matches the target to well within one token.
pub fn scale_ratios_to_target(n0: usize, layers: &[usize], base: &[f64], target: f64) -> Result<Vec<f64>> {
    if layers.len() != base.len() || layers.is_empty() {
        return Err(Error::InvalidArgument("stage tables must be non-empty and equal length".into()));
    }
    if base.iter().any(|&r| r <= 0.0 || r > 1.0) {
        return Err(Error::InvalidArgument("base ratios must lie in (0, 1]".into()));
    }
    let full = (n0 * layers.iter().sum::<usize>()) as f64;
    if !(0.0..=full).contains(&target) {
        return Err(Error::InvalidArgument(format!("target {target} outside [0, {full}]")));
    }
    let at = |c: f64| -> Vec<f64> { base.iter().map(|&r| (c * r).min(1.0)).collect() };
    let teq = |c: f64| equivalent_tokens_raw(n0, layers, &at(c));

    let c0 = target / equivalent_tokens_raw(n0, layers, base);
    if base.iter().all(|&r| c0 * r <= 1.0) {
        return Ok(at(c0));
    }
    let (mut lo, mut hi) = (0.0, 1.0 / base.iter().cloned().fold(f64::INFINITY, f64::min));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if teq(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(hi))
}
