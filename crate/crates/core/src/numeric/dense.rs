use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::{sigmoid, SeededRng};
use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Tanh => 3,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Tanh,
            other => return Err(Error::Format(format!("unknown activation code {other}"))),
        })
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Parameter gradients of one [`DenseLayer`], same shapes as the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weights: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        ensure_len("DenseLayer bias", weights.rows(), bias.len())?;
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            weights: Matrix::from_vec(out_dim, in_dim, data).expect("shape by construction"),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.data().len() + self.bias.len()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(input)?;
        for (zi, bi) in z.iter_mut().zip(&self.bias) {
            *zi = self.activation.apply(*zi + bi);
        }
        Ok(z)
    }

    /// Gradients of the forward map at `input`, given `upstream = ∂L/∂output`.
    ///
    /// Returns `(∂L/∂W, ∂L/∂b, ∂L/∂input)`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
        let output = self.forward(input)?;
        let mut grad = DenseGrad::zeros_like(self);
        let dx = self.backward_accumulate(input, &output, upstream, &mut grad)?;
        Ok((grad.weights, grad.bias, dx))
    }

    /// Backward pass reusing a cached forward output; parameter gradients are
    /// added into `grad` and the input gradient is returned.
    pub fn backward_accumulate(
        &self,
        input: &[f64],
        output: &[f64],
        upstream: &[f64],
        grad: &mut DenseGrad,
    ) -> Result<Vec<f64>> {
        ensure_len("DenseLayer::backward input", self.in_dim(), input.len())?;
        ensure_len("DenseLayer::backward output", self.out_dim(), output.len())?;
        ensure_len("DenseLayer::backward upstream", self.out_dim(), upstream.len())?;
        let delta: Vec<f64> = output
            .iter()
            .zip(upstream)
            .map(|(&y, &g)| g * self.activation.derivative_from_output(y))
            .collect();
        grad.weights.add_outer(&delta, input)?;
        for (b, d) in grad.bias.iter_mut().zip(&delta) {
            *b += d;
        }
        self.weights.matvec_transposed(&delta)
    }

    pub(crate) fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.data());
        out.extend_from_slice(&self.bias);
    }

    pub(crate) fn read_flat(&mut self, flat: &[f64]) -> usize {
        let nw = self.weights.data().len();
        self.weights.data_mut().copy_from_slice(&flat[..nw]);
        let nb = self.bias.len();
        self.bias.copy_from_slice(&flat[nw..nw + nb]);
        nw + nb
    }
}

impl DenseGrad {
    pub(crate) fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.data());
        out.extend_from_slice(&self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::finite_diff_check;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer::new(Matrix::identity(2), vec![0.0, 0.0], Activation::Identity).unwrap();
        assert_eq!(layer.forward(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn zero_weights_sigmoid_yields_sigmoid_of_bias() {
        let layer = DenseLayer::new(Matrix::zeros(2, 3), vec![1.0, -1.0], Activation::Sigmoid).unwrap();
        let y = layer.forward(&[5.0, -2.0, 0.3]).unwrap();
        // σ(1) = 1 / (1 + e^-1)
        assert!((y[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((y[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_identity_yields_bias_exactly() {
        let layer = DenseLayer::new(Matrix::zeros(2, 2), vec![0.25, -7.0], Activation::Identity).unwrap();
        assert_eq!(layer.forward(&[0.0, 0.0]).unwrap(), vec![0.25, -7.0]);
    }

    #[test]
    fn hand_multiplied_forward() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let layer = DenseLayer::new(w, vec![0.0, 0.0], Activation::Identity).unwrap();
        assert_eq!(layer.forward(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let layer = DenseLayer::zeros(3, 2, Activation::Tanh);
        assert!(layer.forward(&[1.0, 2.0]).is_err());
        assert!(layer.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(DenseLayer::new(Matrix::zeros(2, 2), vec![0.0], Activation::Relu).is_err());
    }

    #[test]
    fn linear_backward_rows() {
        let w = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.1]]).unwrap();
        let layer = DenseLayer::new(w, vec![0.1, 0.2], Activation::Identity).unwrap();
        let x = [3.0, -4.0];
        let (dw, db, _) = layer.backward(&x, &[1.0, 0.0]).unwrap();
        assert_eq!(dw.row(0), &x);
        assert_eq!(dw.row(1), &[0.0, 0.0]);
        assert_eq!(db, vec![1.0, 0.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = SeededRng::new(3);
        let layer = DenseLayer::glorot(4, 3, Activation::Tanh, &mut rng);
        let (dw, db, dx) = layer.backward(&[0.1, 0.2, -0.3, 0.4], &[0.0; 3]).unwrap();
        assert!(dw.data().iter().all(|&v| v == 0.0));
        assert!(db.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, act) in [
            (1, Activation::Tanh),
            (2, Activation::Sigmoid),
            (3, Activation::Identity),
            (4, Activation::Relu),
        ] {
            let mut rng = SeededRng::new(seed);
            let layer = DenseLayer::glorot(3, 4, act, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let target: Vec<f64> = (0..4).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            // L = Σ t_k y_k
            let (dw, db, _) = layer.backward(&x, &target).unwrap();
            let mut analytic = dw.data().to_vec();
            analytic.extend_from_slice(&db);
            let mut flat = Vec::new();
            layer.write_flat(&mut flat);
            let err = finite_diff_check(
                |p| {
                    let mut l = layer.clone();
                    l.read_flat(p);
                    let y = l.forward(&x)?;
                    Ok(y.iter().zip(&target).map(|(a, b)| a * b).sum())
                },
                &analytic,
                &flat,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{act:?}: rel err {err}");
        }
    }
}
