//! Density network standing in for a pre-trained radiance field's geometry
//! trunk: positional encoding, `depth` ReLU layers of `width` units and a
//! softplus-rectified scalar density.
//!
//! The trunk and the density layer live in one [`Mlp`]; the last layer is the
//! 1-unit identity density head.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::numerics::{sigmoid, softplus};
use crate::nn::{
    decode_nwts, encode_nwts, Activation, AdamConfig, AdamState, Layer, Mlp, PositionalEncoding,
    Tape,
};
use crate::scene::{AnalyticScene, Aabb, DensityGrid, GridSpec, Point3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    pub encoding: PositionalEncoding,
    pub width: usize,
    pub depth: usize,
    /// Trunk layer that also receives the encoded input (off by default).
    pub skip_at: Option<usize>,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            encoding: PositionalEncoding::default(),
            width: 128,
            depth: 8,
            skip_at: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityBackbone {
    encoding: PositionalEncoding,
    net: Mlp,
}

fn check_in_cube(q: Point3) -> Result<()> {
    if q.iter().all(|v| (-1.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "query ({}, {}, {}) outside the normalized cube [-1, 1]^3",
            q[0], q[1], q[2]
        )))
    }
}

impl DensityBackbone {
    /// Glorot-initialized trunk; the density layer starts at zero so σ = softplus(0).
    pub fn new(cfg: &BackboneConfig) -> Result<Self> {
        if cfg.width == 0 || cfg.depth == 0 {
            return Err(Error::domain("backbone width and depth must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let input_dim = cfg.encoding.output_dim(3);
        let mut layers = Vec::with_capacity(cfg.depth + 1);
        for i in 0..cfg.depth {
            let mut cols = if i == 0 { input_dim } else { cfg.width };
            if cfg.skip_at == Some(i) {
                cols += input_dim;
            }
            layers.push(Layer::glorot(cfg.width, cols, Activation::Relu, &mut rng));
        }
        layers.push(Layer::zeros(1, cfg.width, Activation::Identity));
        let net = Mlp::new(input_dim, layers, cfg.skip_at)?;
        Ok(Self {
            encoding: cfg.encoding,
            net,
        })
    }

    pub fn encoding(&self) -> PositionalEncoding {
        self.encoding
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    /// Number of hidden ReLU layers.
    pub fn trunk_depth(&self) -> usize {
        self.net.depth() - 1
    }

    pub fn width(&self) -> usize {
        self.net.layers()[0].rows()
    }

    fn encode_points(&self, points: &[Point3]) -> Result<Vec<f64>> {
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        self.encoding.encode_batch(&flat, 3)
    }

    pub fn density(&self, q: Point3) -> Result<f64> {
        Ok(self.density_batch(&[q])?[0])
    }

    pub fn density_batch(&self, points: &[Point3]) -> Result<Vec<f64>> {
        for &q in points {
            check_in_cube(q)?;
        }
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.encode_points(points)?;
        let z = self.net.infer(&x, points.len())?;
        Ok(z.into_iter().map(softplus).collect())
    }

    fn check_depth(&self, depth: usize) -> Result<()> {
        if depth == 0 || depth > self.trunk_depth() {
            return Err(Error::domain(format!(
                "attachment depth {depth} outside 1..={}",
                self.trunk_depth()
            )));
        }
        Ok(())
    }

    /// Layer-`depth` activations for a batch of points (row-major, `width` per point).
    pub fn features_batch(&self, points: &[Point3], depth: usize) -> Result<Vec<f64>> {
        self.check_depth(depth)?;
        for &q in points {
            check_in_cube(q)?;
        }
        let x = self.encode_points(points)?;
        self.net.infer_prefix(&x, points.len(), depth)
    }

    /// Layer-`depth` activations at `q` with a tape for one input-gradient pass.
    pub fn features_with_tape(&self, q: Point3, depth: usize) -> Result<(Vec<f64>, FeatureTape<'_>)> {
        self.check_depth(depth)?;
        check_in_cube(q)?;
        let x = self.encoding.encode(&q)?;
        let (features, tape) = self.net.forward_prefix(&x, 1, depth)?;
        Ok((
            features,
            FeatureTape {
                encoding: self.encoding,
                point: q,
                tape,
            },
        ))
    }

    /// Applies trunk layers `from+1..` and the density head to layer-`from` activations.
    pub fn density_from_features(&self, features: &[f64], from: usize) -> Result<f64> {
        self.check_depth(from)?;
        if self.net.skip_at().is_some_and(|s| s >= from) {
            return Err(Error::domain(
                "completing from features past a skip connection needs the raw input",
            ));
        }
        let mut x = features.to_vec();
        for layer in &self.net.layers()[from..] {
            x = layer.forward(&x, 1)?;
        }
        Ok(softplus(x[0]))
    }

    pub fn truncate(self: &Arc<Self>, depth: usize) -> Result<TruncatedBackbone> {
        self.check_depth(depth)?;
        Ok(TruncatedBackbone {
            backbone: Arc::clone(self),
            depth,
        })
    }

    /// `NWTS` bytes: all layers, then `u32 num_frequencies | u8 include_input`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut ext = Vec::with_capacity(5);
        ext.extend_from_slice(&(self.encoding.num_frequencies as u32).to_le_bytes());
        ext.push(u8::from(self.encoding.include_input));
        encode_nwts(self.net.layers(), &ext)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (layers, ext) = decode_nwts(bytes)?;
        if ext.len() != 5 {
            return Err(Error::format(format!(
                "backbone extension has {} bytes, expected 5",
                ext.len()
            )));
        }
        let num_frequencies = u32::from_le_bytes(ext[..4].try_into().unwrap()) as usize;
        let include_input = match ext[4] {
            0 => false,
            1 => true,
            other => return Err(Error::format(format!("bad include_input flag {other}"))),
        };
        let encoding = PositionalEncoding::new(num_frequencies, include_input);
        let net = Mlp::from_layers(encoding.output_dim(3), layers)
            .map_err(|e| Error::format(format!("backbone layers: {e}")))?;
        let last = net.layers().last().unwrap();
        if last.rows() != 1 || last.activation() != Activation::Identity || net.depth() < 2 {
            return Err(Error::format("backbone must end in a 1-unit identity layer"));
        }
        Ok(Self { encoding, net })
    }
}

/// Tape of one truncated forward pass, pulling feature gradients back to the 3-D input.
#[derive(Debug)]
pub struct FeatureTape<'a> {
    encoding: PositionalEncoding,
    point: Point3,
    tape: Tape<'a>,
}

impl FeatureTape<'_> {
    /// `∂(seed · features)/∂q`. Backbone parameters receive no gradient.
    pub fn input_gradient(&mut self, seed: &[f64]) -> Result<Point3> {
        let g_enc = self.tape.backward_input(seed)?;
        let g = self.encoding.pullback(&self.point, &g_enc)?;
        Ok([g[0], g[1], g[2]])
    }
}

/// A frozen backbone cut after `depth` trunk layers.
#[derive(Debug, Clone)]
pub struct TruncatedBackbone {
    backbone: Arc<DensityBackbone>,
    depth: usize,
}

impl TruncatedBackbone {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn backbone(&self) -> &Arc<DensityBackbone> {
        &self.backbone
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.net.layers()[self.depth - 1].rows()
    }

    pub fn features(&self, q: Point3) -> Result<Vec<f64>> {
        self.backbone.features_batch(&[q], self.depth)
    }

    pub fn features_batch(&self, points: &[Point3]) -> Result<Vec<f64>> {
        self.backbone.features_batch(points, self.depth)
    }

    pub fn features_with_tape(&self, q: Point3) -> Result<(Vec<f64>, FeatureTape<'_>)> {
        self.backbone.features_with_tape(q, self.depth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PretrainTarget {
    /// `occupied_density` inside the scene, 0 outside.
    Scene(AnalyticScene),
    /// Regress the grid's own cell values.
    Grid(DensityGrid),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub target: PretrainTarget,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub occupied_density: f64,
    /// Lattice resolution used to draw supervision points for scene targets.
    pub supervision_resolution: usize,
    /// Steps over which the learning rate ramps linearly up to `learning_rate`.
    /// Without it, scenes with little occupied volume can drive every output
    /// deep into the rectifier's flat tail within the first few dozen steps.
    pub warmup_steps: usize,
}

impl PretrainConfig {
    pub fn for_scene(scene: AnalyticScene) -> Self {
        Self {
            target: PretrainTarget::Scene(scene),
            steps: 2000,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            occupied_density: 10.0,
            supervision_resolution: 128,
            warmup_steps: 200,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::domain("pretraining needs at least one step and one sample"));
        }
        if !(self.learning_rate > 0.0) || !(self.occupied_density > 0.0) {
            return Err(Error::domain("learning rate and occupied density must be positive"));
        }
        if self.supervision_resolution < 2 {
            return Err(Error::domain("supervision resolution must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Mean squared error of each step's batch, before its update.
    pub losses: Vec<f64>,
}

impl PretrainReport {
    /// Mean of the last `n` recorded losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let n = n.clamp(1, self.losses.len());
        self.losses[self.losses.len() - n..].iter().sum::<f64>() / n as f64
    }
}

/// Regresses σ onto the target density with mean squared error and Adam.
pub fn pretrain(backbone: &mut DensityBackbone, cfg: &PretrainConfig) -> Result<PretrainReport> {
    cfg.validate()?;
    let spec = match &cfg.target {
        PretrainTarget::Scene(_) => GridSpec::new([cfg.supervision_resolution; 3], Aabb::UNIT)?,
        PretrainTarget::Grid(g) => *g.spec(),
    };
    let target = |ix: usize, iy: usize, iz: usize| match &cfg.target {
        PretrainTarget::Scene(scene) => {
            if scene.contains(spec.cell_center(ix, iy, iz)) {
                cfg.occupied_density
            } else {
                0.0
            }
        }
        PretrainTarget::Grid(g) => g.value_at(ix, iy, iz),
    };
    let [nx, ny, nz] = spec.resolution;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(
        AdamConfig::with_learning_rate(cfg.learning_rate),
        backbone.net.param_count(),
    )?;
    let mut losses = Vec::with_capacity(cfg.steps);
    let batch = cfg.batch_size;
    let mut points = Vec::with_capacity(batch);
    let mut targets = Vec::with_capacity(batch);

    for step in 0..cfg.steps {
        points.clear();
        targets.clear();
        for _ in 0..batch {
            let (ix, iy, iz) = (rng.gen_range(0..nx), rng.gen_range(0..ny), rng.gen_range(0..nz));
            let p = spec.cell_center(ix, iy, iz);
            points.push(p.map(|v| v.clamp(-1.0, 1.0)));
            targets.push(target(ix, iy, iz));
        }

        let x = backbone.encode_points(&points)?;
        let (z, mut tape) = backbone.net.forward_batch(&x, batch)?;
        let mut loss = 0.0;
        let mut seed = vec![0.0; batch];
        for i in 0..batch {
            let sigma = softplus(z[i]);
            let err = sigma - targets[i];
            loss += err * err;
            seed[i] = 2.0 * err * sigmoid(z[i]) / batch as f64;
        }
        loss /= batch as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        let ramp = ((step + 1) as f64 / cfg.warmup_steps.max(1) as f64).min(1.0);
        adam.config.learning_rate = cfg.learning_rate * ramp;
        let grads = tape.backward(&seed)?;
        drop(tape);
        adam.step(&mut backbone.net.param_slices_mut(), &grads.slices())?;
    }
    Ok(PretrainReport { losses })
}
