//! Adam with bias correction over a list of parameter tensors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Result<Self> {
        let c = &config;
        if !(c.learning_rate > 0.0 && c.epsilon > 0.0)
            || !(0.0..1.0).contains(&c.beta1)
            || !(0.0..1.0).contains(&c.beta2)
        {
            return Err(Error::domain(format!("invalid Adam hyperparameters {c:?}")));
        }
        Ok(Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// One update. `params` and `grads` are matched tensor by tensor and must
    /// together cover exactly the parameter count this state was built for.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors but {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        let mut total = 0;
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!(
                    "tensor {i}: {} parameters vs {} gradients",
                    p.len(),
                    g.len()
                )));
            }
            total += p.len();
        }
        if total != self.first_moment.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, got {total}",
                self.first_moment.len()
            )));
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        let mut offset = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let m = &mut self.first_moment[offset..offset + p.len()];
            let v = &mut self.second_moment[offset..offset + p.len()];
            for (((w, &gi), mi), vi) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            offset += p.len();
        }
        Ok(())
    }
}
