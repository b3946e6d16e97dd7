use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Result};

/// Adam optimizer state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state with the usual defaults (β1 = 0.9, β2 = 0.999, ε = 1e-8).
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        ensure_len("AdamState::step params", self.first_moment.len(), params.len())?;
        ensure_len("AdamState::step grads", self.first_moment.len(), grads.len())?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Rescale `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![0.3, -1.2, 4.0];
        let before = params.clone();
        let mut adam = AdamState::new(3, 0.1);
        for _ in 0..10 {
            adam.step(&mut params, &[0.0; 3]).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(adam.step, 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t = 1: m̂ = g, v̂ = g², update = lr · g / (|g| + ε)
        let mut p = vec![2.0];
        let mut adam = AdamState::new(1, 0.1);
        adam.step(&mut p, &[1.0]).unwrap();
        let expected = 2.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((2.0 - p[0] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn identical_parameters_stay_identical() {
        let mut p = vec![0.7, 0.7];
        let mut adam = AdamState::new(2, 0.05);
        for k in 0..50 {
            let g = (k as f64 * 0.37).sin();
            adam.step(&mut p, &[g, g]).unwrap();
            assert_eq!(p[0], p[1]);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut adam = AdamState::new(2, 0.1);
        assert!(adam.step(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(adam.step(&mut [0.0; 2], &[0.0; 1]).is_err());
        assert_eq!(adam.step, 0);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![3.0, 4.0];
        let norm = clip_global_norm(&mut g, 1.0);
        assert_eq!(norm, 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = vec![0.1, 0.1];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }
}
