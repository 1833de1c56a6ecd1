//! ESDF evaluation: affine calibration, normalized MAE, the naive regression
//! baseline, attachment-depth sweeps and export helpers.

use std::sync::Arc;

use crate::backbone::{DensityBackbone, TruncatedBackbone};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, Layer};
use crate::scene::{AnalyticScene, OccupancyOracle, Point3, SampleStream, SlicePlane, TrainingSample};
use crate::seed::derive_seed;

use super::model::{HeadConfig, HeadModel};
use super::train::{train_head, TrainConfig, TrainReport};

/// Unconstrained least-squares fit `y ≈ a·x + b`. Constant `x` gives `(0, mean y)`.
pub fn affine_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::shape(format!("affine fit over {} and {} values", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
    }
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok((a, my - a * mx))
}

/// Maps a pseudo-distance onto metric distance: `d ≈ scale·s + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsdfCalibration {
    pub scale: f64,
    pub offset: f64,
}

impl EsdfCalibration {
    /// Fails unless the fitted scale is positive.
    pub fn fit(pseudo: &[f64], truth: &[f64]) -> Result<Self> {
        let (scale, offset) = affine_fit(pseudo, truth)?;
        if !(scale > 0.0 && scale.is_finite() && offset.is_finite()) {
            return Err(Error::Calibration(format!(
                "fitted scale {scale} is not positive; the field does not grow away from obstacles"
            )));
        }
        Ok(Self { scale, offset })
    }

    pub fn apply(&self, s: f64) -> f64 {
        self.scale * s + self.offset
    }
}

/// Free-space probe points with their true distances.
#[derive(Debug, Clone, PartialEq)]
pub struct EsdfProbes {
    pub points: Vec<Point3>,
    pub truth: Vec<f64>,
}

impl EsdfProbes {
    /// Cell-centered `n × n` lattice on a plane, keeping points outside all geometry.
    pub fn slice(scene: &AnalyticScene, plane: SlicePlane, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("probe resolution must be positive"));
        }
        Ok(Self::keep_free(scene, plane.points(n)))
    }

    /// `count` uniform draws in the cube, of which the free ones are kept.
    pub fn random(scene: &AnalyticScene, count: usize, seed: u64) -> Self {
        let mut stream = SampleStream::new(seed);
        Self::keep_free(scene, (0..count).map(|_| stream.next_position()).collect())
    }

    fn keep_free(scene: &AnalyticScene, candidates: Vec<Point3>) -> Self {
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for p in candidates {
            let d = scene.distance(p);
            if d > 0.0 {
                points.push(p);
                truth.push(d);
            }
        }
        Self { points, truth }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsdfMetrics {
    pub scale: f64,
    pub offset: f64,
    /// Mean absolute error after calibration, with both fields divided by the
    /// ground-truth range so the truth spans `[0, 1]`.
    pub mae: f64,
}

/// Calibrates `pseudo` against `truth` (scale unconstrained) and reports normalized MAE.
pub fn normalized_mae(pseudo: &[f64], truth: &[f64]) -> Result<EsdfMetrics> {
    let (scale, offset) = affine_fit(pseudo, truth)?;
    let (lo, hi) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Calibration("ground truth is constant over the probes".into()));
    }
    let mae = pseudo
        .iter()
        .zip(truth)
        .map(|(&s, &t)| ((scale * s + offset) - t).abs() / range)
        .sum::<f64>()
        / truth.len() as f64;
    Ok(EsdfMetrics { scale, offset, mae })
}

/// `-logit` at the head's fixed radius for every probe.
pub fn head_pseudo_distances(head: &HeadModel, points: &[Point3]) -> Result<Vec<f64>> {
    let radii = vec![head.r_fixed(); points.len()];
    Ok(head.logits_batch(points, &radii)?.into_iter().map(|z| -z).collect())
}

/// Head ESDF metrics; the calibration must have positive scale.
pub fn evaluate_head_esdf(head: &HeadModel, probes: &EsdfProbes) -> Result<EsdfMetrics> {
    let pseudo = head_pseudo_distances(head, &probes.points)?;
    EsdfCalibration::fit(&pseudo, &probes.truth)?;
    normalized_mae(&pseudo, &probes.truth)
}

/// Linear readout of trunk features regressed straight onto distance.
#[derive(Debug, Clone)]
pub struct NaiveRegressor {
    trunk: TruncatedBackbone,
    output: Layer,
}

impl NaiveRegressor {
    pub fn new(backbone: &Arc<DensityBackbone>, depth: usize) -> Result<Self> {
        let trunk = backbone.truncate(depth)?;
        let output = Layer::zeros(1, trunk.feature_dim(), Activation::Identity);
        Ok(Self { trunk, output })
    }

    pub fn depth(&self) -> usize {
        self.trunk.depth()
    }

    pub fn predict_batch(&self, points: &[Point3]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let features = self.trunk.features_batch(points)?;
        self.output.forward(&features, points.len())
    }
}

#[derive(Debug, Clone)]
pub struct NaiveBaseline {
    pub regressor: NaiveRegressor,
    /// Mean squared error of each epoch's batch, before its update.
    pub losses: Vec<f64>,
    pub metrics: EsdfMetrics,
}

/// Trains the MSE regressor with the same schedule as the head (`epochs = 0`
/// is allowed and leaves a constant predictor) and scores it on `probes`.
pub fn naive_esdf_baseline(
    backbone: &Arc<DensityBackbone>,
    scene: &AnalyticScene,
    depth: usize,
    cfg: &TrainConfig,
    probes: &EsdfProbes,
) -> Result<NaiveBaseline> {
    if cfg.batch_size == 0 {
        return Err(Error::domain("batch size must be at least 1"));
    }
    let mut reg = NaiveRegressor::new(backbone, depth)?;
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        reg.output.param_count(),
    )?;
    let mut stream = SampleStream::new(derive_seed(cfg.seed, "naive-train"));
    let n = cfg.batch_size;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let points: Vec<Point3> = (0..n).map(|_| stream.next_position()).collect();
        let features = reg.trunk.features_batch(&points)?;
        let pred = reg.output.forward(&features, n)?;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(n);
        for (&p, q) in pred.iter().zip(&points) {
            let e = p - scene.distance(*q);
            loss += e * e;
            grad.push(2.0 * e / n as f64);
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step: epoch + 1, loss });
        }
        let g = reg.output.grad_params(&features, &grad, n);
        let (w, b) = reg.output.params_mut();
        adam.step(&mut [w, b], &[&g.weights, &g.biases])?;
        losses.push(loss);
    }
    let pred = reg.predict_batch(&probes.points)?;
    let metrics = normalized_mae(&pred, &probes.truth)?;
    Ok(NaiveBaseline {
        regressor: reg,
        losses,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub depth: usize,
    pub head: HeadModel,
    pub report: TrainReport,
}

/// One head per attachment depth, all with the same initialization seed,
/// sample streams and budget.
pub fn depth_sweep(
    backbone: &Arc<DensityBackbone>,
    oracle: &OccupancyOracle,
    depths: &[usize],
    head_cfg: &HeadConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<SweepEntry>> {
    if depths.is_empty() {
        return Err(Error::domain("depth sweep needs at least one depth"));
    }
    depths
        .iter()
        .map(|&depth| {
            let cfg = HeadConfig { depth, ..*head_cfg };
            let mut head = HeadModel::new(Arc::clone(backbone), &cfg)?;
            let report = train_head(&mut head, oracle, train_cfg)?;
            Ok(SweepEntry { depth, head, report })
        })
        .collect()
}

/// `depth,final_accuracy,last100_accuracy` rows.
pub fn sweep_table_csv(entries: &[SweepEntry]) -> String {
    let mut s = String::from("depth,final_accuracy,last100_accuracy\n");
    for e in entries {
        s.push_str(&format!(
            "{},{},{}\n",
            e.depth,
            e.report.final_accuracy(),
            e.report.tail_accuracy(100)
        ));
    }
    s
}

/// `x,y,z,r,label,lambda,logit` rows for labelled samples.
pub fn probe_table_csv(head: &HeadModel, samples: &[TrainingSample]) -> Result<String> {
    let points: Vec<Point3> = samples.iter().map(|s| s.position).collect();
    let radii: Vec<f64> = samples.iter().map(|s| s.radius).collect();
    let logits = head.logits_batch(&points, &radii)?;
    let mut s = String::from("x,y,z,r,label,lambda,logit\n");
    for (smp, z) in samples.iter().zip(logits) {
        let [x, y, zc] = smp.position;
        s.push_str(&format!(
            "{x},{y},{zc},{},{},{},{z}\n",
            smp.radius,
            u8::from(smp.label),
            crate::nn::numerics::sigmoid(z)
        ));
    }
    Ok(s)
}

/// Binary PGM (P5, maxval 255); values are clamped to `[0, 1]`. Row `j` of
/// `values` is written bottom-up so +v points up in the image.
pub fn encode_pgm(values: &[f64], width: usize, height: usize) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || values.len() != width * height {
        return Err(Error::shape(format!(
            "{} values for a {width}×{height} image",
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for j in (0..height).rev() {
        for &v in &values[j * width..(j + 1) * width] {
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Predicted (calibrated), ground-truth and |error| slices, each divided by the
/// ground-truth free-space range.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImages {
    pub resolution: usize,
    pub predicted: Vec<f64>,
    pub truth: Vec<f64>,
    pub error: Vec<f64>,
}

impl SliceImages {
    pub fn new(pseudo: &[f64], truth: &[f64], resolution: usize, calibration: EsdfCalibration) -> Result<Self> {
        if pseudo.len() != truth.len() || truth.len() != resolution * resolution {
            return Err(Error::shape("slice sizes disagree"));
        }
        let hi = truth.iter().copied().fold(0.0, f64::max);
        let scale = if hi > 0.0 { 1.0 / hi } else { 1.0 };
        let predicted: Vec<f64> = pseudo.iter().map(|&s| calibration.apply(s) * scale).collect();
        let truth: Vec<f64> = truth.iter().map(|&t| t.max(0.0) * scale).collect();
        let error = predicted.iter().zip(&truth).map(|(p, t)| (p - t).abs()).collect();
        Ok(Self {
            resolution,
            predicted,
            truth,
            error,
        })
    }

    pub fn pgm(&self, values: &[f64]) -> Result<Vec<u8>> {
        encode_pgm(values, self.resolution, self.resolution)
    }
}
