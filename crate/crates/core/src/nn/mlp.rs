//! Fixed-architecture multilayer perceptron with a one-shot reverse-mode tape.

use super::layer::{Layer, LayerGrad};
use crate::error::{Error, Result};

/// A stack of dense layers.
///
/// When `skip_at` is set, layer `skip_at` receives the previous activation
/// concatenated with the original network input (previous activation first).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    layers: Vec<Layer>,
    skip_at: Option<usize>,
}

/// Gradients of `seedᵀ · output` w.r.t. the network input and every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input: Vec<f64>,
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    /// Flat views in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weights.as_slice(), g.biases.as_slice()])
            .collect()
    }
}

impl Mlp {
    pub fn new(input_dim: usize, layers: Vec<Layer>, skip_at: Option<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        if let Some(s) = skip_at {
            if s == 0 || s >= layers.len() {
                return Err(Error::shape(format!(
                    "skip connection index {s} must be in 1..{}",
                    layers.len()
                )));
            }
        }
        let mut expected = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            let want = if skip_at == Some(i) {
                expected + input_dim
            } else {
                expected
            };
            if layer.cols() != want {
                return Err(Error::shape(format!(
                    "layer {i} has {} inputs, expected {want}",
                    layer.cols()
                )));
            }
            expected = layer.rows();
        }
        Ok(Self {
            input_dim,
            layers,
            skip_at,
        })
    }

    /// Rebuilds a network from a bare layer list, detecting a skip connection from the shapes.
    pub fn from_layers(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        let skip_at = (1..layers.len())
            .find(|&i| layers[i].cols() == layers[i - 1].rows() + input_dim);
        Self::new(input_dim, layers, skip_at)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::rows)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn skip_at(&self) -> Option<usize> {
        self.skip_at
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Weights then biases for each layer in order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for layer in &mut self.layers {
            let (w, b) = layer.params_mut();
            out.push(w);
            out.push(b);
        }
        out
    }

    fn check_input(&self, input: &[f64], batch: usize, depth: usize) -> Result<()> {
        if depth == 0 || depth > self.layers.len() {
            return Err(Error::domain(format!(
                "depth {depth} outside 1..={}",
                self.layers.len()
            )));
        }
        if batch == 0 || input.len() != batch * self.input_dim {
            return Err(Error::shape(format!(
                "network expects {} inputs per row, got {} values for batch {batch}",
                self.input_dim,
                input.len()
            )));
        }
        Ok(())
    }

    fn layer_input(&self, i: usize, prev: Vec<f64>, input: &[f64], batch: usize) -> Vec<f64> {
        if self.skip_at != Some(i) {
            return prev;
        }
        let pw = prev.len() / batch;
        let mut x = Vec::with_capacity(batch * (pw + self.input_dim));
        for (p, raw) in prev.chunks_exact(pw).zip(input.chunks_exact(self.input_dim)) {
            x.extend_from_slice(p);
            x.extend_from_slice(raw);
        }
        x
    }

    /// Single-sample forward pass through the whole network.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape<'_>)> {
        self.forward_batch(input, 1)
    }

    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, Tape<'_>)> {
        self.forward_prefix(input, batch, self.layers.len())
    }

    /// Forward through the first `depth` layers, recording a tape.
    pub fn forward_prefix(
        &self,
        input: &[f64],
        batch: usize,
        depth: usize,
    ) -> Result<(Vec<f64>, Tape<'_>)> {
        self.check_input(input, batch, depth)?;
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut x = input.to_vec();
        for (i, layer) in self.layers[..depth].iter().enumerate() {
            x = self.layer_input(i, x, input, batch);
            let z = layer.pre_activation(&x, batch)?;
            let a = layer.activate(&z);
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        let tape = Tape {
            net: self,
            batch,
            inputs,
            pre,
            consumed: false,
        };
        Ok((x, tape))
    }

    /// Forward through the first `depth` layers without recording anything.
    pub fn infer_prefix(&self, input: &[f64], batch: usize, depth: usize) -> Result<Vec<f64>> {
        self.check_input(input, batch, depth)?;
        let mut x = input.to_vec();
        for (i, layer) in self.layers[..depth].iter().enumerate() {
            x = self.layer_input(i, x, input, batch);
            x = layer.forward(&x, batch)?;
        }
        Ok(x)
    }

    pub fn infer(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.infer_prefix(input, batch, self.layers.len())
    }
}

/// Activations recorded by one forward pass; supports exactly one backward pass.
#[derive(Debug)]
pub struct Tape<'a> {
    net: &'a Mlp,
    batch: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    consumed: bool,
}

impl Tape<'_> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn output_dim(&self) -> usize {
        self.net.layers[self.pre.len() - 1].rows()
    }

    /// Gradients of `seedᵀ · output` w.r.t. inputs and all recorded layers' parameters.
    pub fn backward(&mut self, seed: &[f64]) -> Result<Gradients> {
        let (input, layers) = self.run(seed, true)?;
        Ok(Gradients {
            input,
            layers: layers.into_iter().rev().collect(),
        })
    }

    /// Input gradient only; parameter gradients are never formed.
    pub fn backward_input(&mut self, seed: &[f64]) -> Result<Vec<f64>> {
        self.run(seed, false).map(|(input, _)| input)
    }

    fn run(&mut self, seed: &[f64], with_params: bool) -> Result<(Vec<f64>, Vec<LayerGrad>)> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if seed.len() != self.batch * self.output_dim() {
            return Err(Error::shape(format!(
                "seed has {} values, expected {}",
                seed.len(),
                self.batch * self.output_dim()
            )));
        }
        self.consumed = true;
        let net = self.net;
        let in_dim = net.input_dim;
        let mut grads = Vec::new();
        let mut skip_grad: Option<Vec<f64>> = None;
        let mut g = seed.to_vec();
        for i in (0..self.pre.len()).rev() {
            let layer = &net.layers[i];
            layer.grad_pre_activation(&self.pre[i], &mut g);
            if with_params {
                grads.push(layer.grad_params(&self.inputs[i], &g, self.batch));
            }
            let gx = layer.grad_input(&g, self.batch);
            if net.skip_at == Some(i) {
                let pw = layer.cols() - in_dim;
                let mut prev = Vec::with_capacity(self.batch * pw);
                let mut raw = Vec::with_capacity(self.batch * in_dim);
                for row in gx.chunks_exact(layer.cols()) {
                    prev.extend_from_slice(&row[..pw]);
                    raw.extend_from_slice(&row[pw..]);
                }
                skip_grad = Some(raw);
                g = prev;
            } else {
                g = gx;
            }
        }
        if let Some(extra) = skip_grad {
            g.iter_mut().zip(extra).for_each(|(a, b)| *a += b);
        }
        // Release recorded activations; the tape is spent.
        self.inputs.clear();
        Ok((g, grads))
    }
}
