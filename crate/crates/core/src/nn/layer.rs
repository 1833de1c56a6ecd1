//! Dense layers over row-major batches.
//!
//! A layer maps a `batch × cols` input to a `batch × rows` output with
//! `z = x Wᵀ + b`, `y = activation(z)`. Weights are row-major `rows × cols`.

use rand::Rng;

use super::numerics::sigmoid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    /// Checkpoint code.
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Identity),
            2 => Ok(Activation::Sigmoid),
            other => Err(Error::format(format!("unknown activation code {other}"))),
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z`. ReLU uses 0 at exactly 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

/// `C = A·B + beta·C` for row-major `C` of shape `m × n`. Strides describe `A` (`m × k`) and `B` (`k × n`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every index dgemm touches in a, b and c.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

/// Parameter gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
        }
    }
}

impl Layer {
    pub fn new(
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("layer dimensions must be positive"));
        }
        if weights.len() != rows * cols || biases.len() != rows {
            return Err(Error::shape(format!(
                "layer {rows}x{cols} given {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::domain("layer parameters must be finite"));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            biases,
            activation,
        })
    }

    pub fn zeros(rows: usize, cols: usize, activation: Activation) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
            activation,
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        Self {
            rows,
            cols,
            weights,
            biases: vec![0.0; rows],
            activation,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.biases)
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Pre-activations `x Wᵀ + b` for a `batch × cols` input.
    pub fn pre_activation(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        if x.len() != batch * self.cols {
            return Err(Error::shape(format!(
                "layer expects {} inputs per row, got {} values for batch {batch}",
                self.cols,
                x.len()
            )));
        }
        let mut z = Vec::with_capacity(batch * self.rows);
        for _ in 0..batch {
            z.extend_from_slice(&self.biases);
        }
        gemm(
            batch,
            self.cols,
            self.rows,
            x,
            self.cols,
            1,
            &self.weights,
            1,
            self.cols,
            1.0,
            &mut z,
        );
        Ok(z)
    }

    pub fn activate(&self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.activation.apply(v)).collect()
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut z = self.pre_activation(x, batch)?;
        z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        Ok(z)
    }

    /// Turns an output gradient into a pre-activation gradient in place.
    pub fn grad_pre_activation(&self, z: &[f64], grad_out: &mut [f64]) {
        for (g, &zv) in grad_out.iter_mut().zip(z) {
            *g *= self.activation.derivative(zv);
        }
    }

    /// Gradient w.r.t. the layer input from the pre-activation gradient: `gz · W`.
    pub fn grad_input(&self, grad_z: &[f64], batch: usize) -> Vec<f64> {
        let mut gx = vec![0.0; batch * self.cols];
        gemm(
            batch,
            self.rows,
            self.cols,
            grad_z,
            self.rows,
            1,
            &self.weights,
            self.cols,
            1,
            0.0,
            &mut gx,
        );
        gx
    }

    /// Parameter gradients `gzᵀ · x` and column sums of `gz`.
    pub fn grad_params(&self, x: &[f64], grad_z: &[f64], batch: usize) -> LayerGrad {
        let mut grad = LayerGrad::zeros(self.rows, self.cols);
        gemm(
            self.rows,
            batch,
            self.cols,
            grad_z,
            1,
            self.rows,
            x,
            self.cols,
            1,
            0.0,
            &mut grad.weights,
        );
        for row in grad_z.chunks_exact(self.rows) {
            for (b, g) in grad.biases.iter_mut().zip(row) {
                *b += g;
            }
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_forward(layer: &Layer, x: &[f64]) -> Vec<f64> {
        (0..layer.rows())
            .map(|r| {
                let mut acc = layer.biases()[r];
                for c in 0..layer.cols() {
                    acc += layer.weights()[r * layer.cols() + c] * x[c];
                }
                layer.activation().apply(acc)
            })
            .collect()
    }

    #[test]
    fn activation_codes_round_trip() {
        for act in [Activation::Relu, Activation::Identity, Activation::Sigmoid] {
            assert_eq!(Activation::from_code(act.code()).unwrap(), act);
        }
        assert!(Activation::from_code(7).is_err());
    }

    #[test]
    fn relu_derivative_is_zero_at_kink() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::Relu.derivative(-1e-300), 0.0);
        assert_eq!(Activation::Relu.derivative(1e-300), 1.0);
    }

    #[test]
    fn batched_forward_matches_row_by_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = Layer::glorot(5, 7, Activation::Sigmoid, &mut rng);
        layer.biases_mut().iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        let x: Vec<f64> = (0..4 * 7).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y = layer.forward(&x, 4).unwrap();
        for (row, out) in x.chunks(7).zip(y.chunks(5)) {
            for (a, b) in naive_forward(&layer, row).iter().zip(out) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Layer::new(2, 2, vec![0.0; 3], vec![0.0; 2], Activation::Relu).is_err());
        assert!(Layer::new(2, 2, vec![f64::NAN; 4], vec![0.0; 2], Activation::Relu).is_err());
        let layer = Layer::zeros(2, 3, Activation::Relu);
        assert!(matches!(layer.forward(&[1.0; 4], 1), Err(Error::Shape(_))));
    }
}
