//! BCE training of the head against oracle labels.

use crate::error::{Error, Result};
use crate::nn::numerics::{log_sigmoid, sigmoid};
use crate::nn::{AdamConfig, AdamState};
use crate::scene::{OccupancyOracle, Point3, SampleStream, TrainingSample};
use crate::seed::derive_seed;

use super::model::HeadModel;

/// Per-sample BCE from a logit: `-[y log σ(z) + (1-y) log(1-σ(z))]`.
pub fn bce_with_logits(logit: f64, label: bool) -> f64 {
    if label {
        -log_sigmoid(logit)
    } else {
        -log_sigmoid(-logit)
    }
}

/// `∂bce/∂logit = λ - y`.
pub fn bce_grad(logit: f64, label: bool) -> f64 {
    sigmoid(logit) - if label { 1.0 } else { 0.0 }
}

/// Summed BCE over probabilities, evaluated through their logits for stability.
pub fn bce_loss(lambdas: &[f64], labels: &[bool]) -> Result<f64> {
    if lambdas.is_empty() {
        return Err(Error::domain("BCE over an empty batch"));
    }
    if lambdas.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            lambdas.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&lam, &y) in lambdas.iter().zip(labels) {
        if !(lam > 0.0 && lam < 1.0) {
            return Err(Error::domain(format!("prediction {lam} outside (0, 1)")));
        }
        total += bce_with_logits(crate::nn::numerics::logit(lam), y);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Held-out samples as a fraction of the total training samples drawn.
    pub validation_fraction: f64,
    pub max_validation: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 1000,
            learning_rate: 1e-2,
            seed: 0,
            validation_fraction: 0.1,
            max_validation: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validation_size(&self) -> usize {
        let n = (self.validation_fraction * (self.epochs * self.batch_size) as f64).round() as usize;
        n.clamp(1, self.max_validation.max(1))
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::domain("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::domain("validation fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample BCE of each epoch's batch, measured before its update.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        *self.val_accuracy.last().unwrap_or(&0.0)
    }

    /// Mean validation accuracy over the last `n` epochs.
    pub fn tail_accuracy(&self, n: usize) -> f64 {
        let k = n.clamp(1, self.val_accuracy.len().max(1));
        let tail = &self.val_accuracy[self.val_accuracy.len().saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for i in 0..self.train_loss.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                self.train_loss[i],
                self.val_loss[i],
                self.val_accuracy[i]
            ));
        }
        s
    }
}

/// Held-out set with trunk features computed once.
pub struct ValidationSet {
    features: Vec<f64>,
    radii: Vec<f64>,
    labels: Vec<bool>,
}

impl ValidationSet {
    pub fn new(head: &HeadModel, samples: &[TrainingSample]) -> Result<Self> {
        let points: Vec<Point3> = samples.iter().map(|s| s.position).collect();
        Ok(Self {
            features: head.trunk().features_batch(&points)?,
            radii: samples.iter().map(|s| s.radius).collect(),
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Mean BCE and accuracy (λ > 0.5 counts as occupied).
    pub fn evaluate(&self, head: &HeadModel) -> Result<(f64, f64)> {
        let logits = head.logits_from_features(&self.features, &self.radii)?;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (&z, &y) in logits.iter().zip(&self.labels) {
            loss += bce_with_logits(z, y);
            if (z > 0.0) == y {
                correct += 1;
            }
        }
        let n = self.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

/// Trains the radius embedding and output layer; the backbone is never written.
///
/// Each epoch draws one batch of fresh samples. Validation samples come from a
/// separate seed stream so they never coincide with training draws.
pub fn train_head(head: &mut HeadModel, oracle: &OccupancyOracle, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let mut train_stream = SampleStream::new(derive_seed(cfg.seed, "head-train"));
    let mut val_stream = SampleStream::new(derive_seed(cfg.seed, "head-validation"));
    let validation = ValidationSet::new(head, &val_stream.batch(oracle, cfg.validation_size()))?;

    let adam_cfg = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_cfg, head.trainable_count())?;
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        val_accuracy: Vec::with_capacity(cfg.epochs),
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
    };
    let n = cfg.batch_size;
    for epoch in 0..cfg.epochs {
        let batch = train_stream.batch(oracle, n);
        let points: Vec<Point3> = batch.iter().map(|s| s.position).collect();
        let radii: Vec<f64> = batch.iter().map(|s| s.radius).collect();
        let features = head.trunk().features_batch(&points)?;
        let logits = head.logits_from_features(&features, &radii)?;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(n);
        for (&z, s) in logits.iter().zip(&batch) {
            loss += bce_with_logits(z, s.label);
            grad.push(bce_grad(z, s.label) / n as f64);
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step: epoch + 1, loss });
        }
        let [g_ir, g_out] = head.param_grads(&features, &radii, &grad)?;
        let grads = [&g_ir.weights[..], &g_ir.biases, &g_out.weights, &g_out.biases];
        adam.step(&mut head.trainable_mut(), &grads)?;

        let (val_loss, val_acc) = validation.evaluate(head)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { step: epoch + 1, loss: val_loss });
        }
        report.train_loss.push(loss);
        report.val_loss.push(val_loss);
        report.val_accuracy.push(val_acc);
    }
    Ok(report)
}
