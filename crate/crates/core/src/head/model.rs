//! Radius-conditioned occupancy head on a frozen truncated backbone.
//!
//! ```text
//! features = trunk_k(encode(q))                      (frozen)
//! embed    = relu(W_ir · r + b_ir)                   (radius embedding)
//! logit    = W_add · [features ; embed] + b_add      (single output)
//! λ        = sigmoid(logit)
//! ```

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{DensityBackbone, TruncatedBackbone};
use crate::error::{Error, Result};
use crate::nn::numerics::sigmoid;
use crate::nn::{decode_nwts, encode_nwts, Activation, Layer, LayerGrad};
use crate::scene::Point3;

pub const MAX_QUERY_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    /// Last frozen trunk layer feeding the head.
    pub depth: usize,
    pub embed_dim: usize,
    /// Radius used for distance and gradient queries.
    pub r_fixed: f64,
    pub seed: u64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            embed_dim: 16,
            r_fixed: 0.05,
            seed: 0,
        }
    }
}

/// Which scalar the obstacle gradient differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientTarget {
    #[default]
    Logit,
    Lambda,
}

/// One forward and one backward pass at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitSample {
    pub logit: f64,
    /// `∂logit/∂q`.
    pub gradient: Point3,
}

#[derive(Debug, Clone)]
pub struct HeadModel {
    trunk: TruncatedBackbone,
    radius_embed: Layer,
    output: Layer,
    r_fixed: f64,
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r <= MAX_QUERY_RADIUS {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "query radius {r} outside (0, {MAX_QUERY_RADIUS}]"
        )))
    }
}

impl HeadModel {
    /// Glorot radius embedding; the output layer starts at zero so λ = 0.5 everywhere.
    pub fn new(backbone: Arc<DensityBackbone>, cfg: &HeadConfig) -> Result<Self> {
        if cfg.embed_dim == 0 {
            return Err(Error::domain("embed_dim must be positive"));
        }
        check_radius(cfg.r_fixed)?;
        let trunk = backbone.truncate(cfg.depth)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let radius_embed = Layer::glorot(cfg.embed_dim, 1, Activation::Relu, &mut rng);
        let output = Layer::zeros(1, trunk.feature_dim() + cfg.embed_dim, Activation::Identity);
        Ok(Self {
            trunk,
            radius_embed,
            output,
            r_fixed: cfg.r_fixed,
        })
    }

    pub fn depth(&self) -> usize {
        self.trunk.depth()
    }

    pub fn embed_dim(&self) -> usize {
        self.radius_embed.rows()
    }

    pub fn r_fixed(&self) -> f64 {
        self.r_fixed
    }

    pub fn trunk(&self) -> &TruncatedBackbone {
        &self.trunk
    }

    pub fn backbone(&self) -> &Arc<DensityBackbone> {
        self.trunk.backbone()
    }

    pub fn radius_embed(&self) -> &Layer {
        &self.radius_embed
    }

    pub fn output(&self) -> &Layer {
        &self.output
    }

    pub(crate) fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let (a, b) = self.radius_embed.params_mut();
        let (c, d) = self.output.params_mut();
        vec![a, b, c, d]
    }

    pub(crate) fn trainable_count(&self) -> usize {
        self.radius_embed.param_count() + self.output.param_count()
    }

    /// Concatenated head inputs `[features ; embed]` for a batch, plus embedding pre-activations.
    fn head_inputs(&self, features: &[f64], radii: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = radii.len();
        let f = self.trunk.feature_dim();
        if features.len() != n * f {
            return Err(Error::shape(format!(
                "{} feature values for {n} radii of width {f}",
                features.len()
            )));
        }
        let z_embed = self.radius_embed.pre_activation(radii, n)?;
        let e = self.embed_dim();
        let mut x = Vec::with_capacity(n * (f + e));
        for (feat, ze) in features.chunks_exact(f).zip(z_embed.chunks_exact(e)) {
            x.extend_from_slice(feat);
            x.extend(ze.iter().map(|&v| v.max(0.0)));
        }
        Ok((x, z_embed))
    }

    /// Logits from precomputed trunk features (row-major, one row per radius).
    pub fn logits_from_features(&self, features: &[f64], radii: &[f64]) -> Result<Vec<f64>> {
        let (x, _) = self.head_inputs(features, radii)?;
        self.output.forward(&x, radii.len())
    }

    /// Loss gradient for the trainable layers given `∂loss/∂logit` per sample.
    pub(crate) fn param_grads(
        &self,
        features: &[f64],
        radii: &[f64],
        grad_logits: &[f64],
    ) -> Result<[LayerGrad; 2]> {
        let n = radii.len();
        let (x, z_embed) = self.head_inputs(features, radii)?;
        let g_out = self.output.grad_params(&x, grad_logits, n);
        let gx = self.output.grad_input(grad_logits, n);
        let f = self.trunk.feature_dim();
        let e = self.embed_dim();
        let mut g_embed: Vec<f64> = gx
            .chunks_exact(f + e)
            .flat_map(|row| row[f..].iter().copied())
            .collect();
        self.radius_embed.grad_pre_activation(&z_embed, &mut g_embed);
        let g_ir = self.radius_embed.grad_params(radii, &g_embed, n);
        Ok([g_ir, g_out])
    }

    pub fn logit(&self, q: Point3, r: f64) -> Result<f64> {
        check_radius(r)?;
        let features = self.trunk.features(q)?;
        Ok(self.logits_from_features(&features, &[r])?[0])
    }

    pub fn logits_batch(&self, points: &[Point3], radii: &[f64]) -> Result<Vec<f64>> {
        if points.len() != radii.len() {
            return Err(Error::shape("points and radii differ in length"));
        }
        for &r in radii {
            check_radius(r)?;
        }
        if points.is_empty() {
            return Ok(Vec::new());
        }
        let features = self.trunk.features_batch(points)?;
        self.logits_from_features(&features, radii)
    }

    /// Probability that an obstacle lies within `r` of `q`.
    pub fn predict_lambda(&self, q: Point3, r: f64) -> Result<f64> {
        Ok(sigmoid(self.logit(q, r)?))
    }

    /// Pseudo-distance `-logit`; larger means farther from geometry.
    pub fn esdf_logit(&self, q: Point3, r: f64) -> Result<f64> {
        Ok(-self.logit(q, r)?)
    }

    /// Logit and its input gradient from exactly one forward and one backward pass.
    pub fn logit_with_gradient(&self, q: Point3, r: f64) -> Result<LogitSample> {
        check_radius(r)?;
        let (features, mut tape) = self.trunk.features_with_tape(q)?;
        let logit = self.logits_from_features(&features, &[r])?[0];
        let f = self.trunk.feature_dim();
        // ∂logit/∂features is the feature block of the output weights.
        let gradient = tape.input_gradient(&self.output.weights()[..f])?;
        Ok(LogitSample { logit, gradient })
    }

    /// Obstacle gradient `∇d = -∂target/∂q`.
    pub fn obstacle_gradient(&self, q: Point3, r: f64, target: GradientTarget) -> Result<Point3> {
        let s = self.logit_with_gradient(q, r)?;
        let scale = match target {
            GradientTarget::Logit => 1.0,
            GradientTarget::Lambda => {
                let l = sigmoid(s.logit);
                l * (1.0 - l)
            }
        };
        Ok(s.gradient.map(|g| -scale * g))
    }

    /// `NWTS` bytes: `[radius_embed, output]`, then `u32 depth | u32 embed_dim | f64 r_fixed`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut ext = Vec::with_capacity(16);
        ext.extend_from_slice(&(self.depth() as u32).to_le_bytes());
        ext.extend_from_slice(&(self.embed_dim() as u32).to_le_bytes());
        ext.extend_from_slice(&self.r_fixed.to_le_bytes());
        encode_nwts(&[self.radius_embed.clone(), self.output.clone()], &ext)
    }

    pub fn from_bytes(bytes: &[u8], backbone: Arc<DensityBackbone>) -> Result<Self> {
        let (mut layers, ext) = decode_nwts(bytes)?;
        if layers.len() != 2 || ext.len() != 16 {
            return Err(Error::format(format!(
                "head checkpoint has {} layers and {} extension bytes, expected 2 and 16",
                layers.len(),
                ext.len()
            )));
        }
        let depth = u32::from_le_bytes(ext[0..4].try_into().unwrap()) as usize;
        let embed_dim = u32::from_le_bytes(ext[4..8].try_into().unwrap()) as usize;
        let r_fixed = f64::from_le_bytes(ext[8..16].try_into().unwrap());
        let output = layers.pop().unwrap();
        let radius_embed = layers.pop().unwrap();
        let trunk = backbone
            .truncate(depth)
            .map_err(|e| Error::format(format!("head depth: {e}")))?;
        check_radius(r_fixed).map_err(|e| Error::format(format!("head r_fixed: {e}")))?;
        let shapes_ok = radius_embed.rows() == embed_dim
            && radius_embed.cols() == 1
            && radius_embed.activation() == Activation::Relu
            && output.rows() == 1
            && output.cols() == trunk.feature_dim() + embed_dim
            && output.activation() == Activation::Identity;
        if !shapes_ok {
            return Err(Error::format(
                "head layers do not match the backbone and extension block",
            ));
        }
        Ok(Self {
            trunk,
            radius_embed,
            output,
            r_fixed,
        })
    }
}
