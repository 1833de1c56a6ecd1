//! Fourier positional encoding for coordinate networks.
//!
//! For an input `p` with `d` components and `L` frequency bands the encoding is
//!
//! ```text
//! [p_0 .. p_{d-1},
//!  sin(2^0 π p_0), cos(2^0 π p_0), .., sin(2^0 π p_{d-1}), cos(2^0 π p_{d-1}),
//!  ..
//!  sin(2^{L-1} π p_0), cos(2^{L-1} π p_0), ..]
//! ```
//!
//! where the raw block is present only when `include_input` is set.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionalEncoding {
    pub num_frequencies: usize,
    pub include_input: bool,
}

impl Default for PositionalEncoding {
    fn default() -> Self {
        Self {
            num_frequencies: 10,
            include_input: true,
        }
    }
}

impl PositionalEncoding {
    pub fn new(num_frequencies: usize, include_input: bool) -> Self {
        Self {
            num_frequencies,
            include_input,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (2 * self.num_frequencies + usize::from(self.include_input))
    }

    fn check(p: &[f64]) -> Result<()> {
        if let Some(bad) = p.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "positional encoding input must be finite, got {bad}"
            )));
        }
        Ok(())
    }

    pub fn encode(&self, p: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim(p.len())];
        self.encode_into(p, &mut out)?;
        Ok(out)
    }

    /// Writes the encoding of `p` into `out`, which must hold `output_dim(p.len())` values.
    pub fn encode_into(&self, p: &[f64], out: &mut [f64]) -> Result<()> {
        Self::check(p)?;
        if out.len() != self.output_dim(p.len()) {
            return Err(Error::shape(format!(
                "encoding buffer holds {} values, expected {}",
                out.len(),
                self.output_dim(p.len())
            )));
        }
        let mut o = 0;
        if self.include_input {
            out[..p.len()].copy_from_slice(p);
            o = p.len();
        }
        for k in 0..self.num_frequencies {
            let freq = (1u64 << k) as f64 * PI;
            for &x in p {
                let (s, c) = (freq * x).sin_cos();
                out[o] = s;
                out[o + 1] = c;
                o += 2;
            }
        }
        Ok(())
    }

    /// Encodes a batch of row-major points (`batch × input_dim`).
    pub fn encode_batch(&self, points: &[f64], input_dim: usize) -> Result<Vec<f64>> {
        if input_dim == 0 || points.len() % input_dim != 0 {
            return Err(Error::shape(format!(
                "{} values do not form rows of width {input_dim}",
                points.len()
            )));
        }
        let width = self.output_dim(input_dim);
        let mut out = vec![0.0; points.len() / input_dim * width];
        for (p, row) in points.chunks_exact(input_dim).zip(out.chunks_exact_mut(width)) {
            self.encode_into(p, row)?;
        }
        Ok(out)
    }

    /// Jacobian of the encoding at `p`, row-major `output_dim × p.len()`.
    pub fn jacobian(&self, p: &[f64]) -> Result<Vec<f64>> {
        Self::check(p)?;
        let d = p.len();
        let mut jac = vec![0.0; self.output_dim(d) * d];
        let mut row = 0;
        if self.include_input {
            for i in 0..d {
                jac[i * d + i] = 1.0;
            }
            row = d;
        }
        for k in 0..self.num_frequencies {
            let freq = (1u64 << k) as f64 * PI;
            for (i, &x) in p.iter().enumerate() {
                let (s, c) = (freq * x).sin_cos();
                jac[row * d + i] = freq * c;
                jac[(row + 1) * d + i] = -freq * s;
                row += 2;
            }
        }
        Ok(jac)
    }

    /// Pulls a gradient on the encoded vector back to the raw input: `Jᵀ · grad`.
    pub fn pullback(&self, p: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        Self::check(p)?;
        let d = p.len();
        if grad.len() != self.output_dim(d) {
            return Err(Error::shape(format!(
                "encoded gradient has {} values, expected {}",
                grad.len(),
                self.output_dim(d)
            )));
        }
        let mut out = vec![0.0; d];
        let mut o = 0;
        if self.include_input {
            out.copy_from_slice(&grad[..d]);
            o = d;
        }
        for k in 0..self.num_frequencies {
            let freq = (1u64 << k) as f64 * PI;
            for (i, &x) in p.iter().enumerate() {
                let (s, c) = (freq * x).sin_cos();
                out[i] += freq * (c * grad[o] - s * grad[o + 1]);
                o += 2;
            }
        }
        Ok(out)
    }
}
