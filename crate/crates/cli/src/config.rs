//! Run configuration: one TOML file plus `--section.key value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use occunav::backbone::{BackboneConfig, PretrainConfig, PretrainTarget};
use occunav::head::{HeadConfig, TrainConfig};
use occunav::nn::PositionalEncoding;
use occunav::planner::{GoalParams, ObstacleParams, RolloutConfig};
use occunav::scene::{AnalyticScene, Axis, SlicePlane};
use occunav::seed::derive_seed;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub scene: Option<SceneSection>,
    #[serde(default)]
    pub backbone: BackboneSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub head: HeadSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub planner: PlannerSection,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

/// Either a named analytic scene or a density grid on disk.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub preset: Option<String>,
    pub grid: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSection {
    pub width: usize,
    pub depth: usize,
    pub frequencies: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub occupied_density: f64,
    pub supervision_resolution: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        Self {
            width: 128,
            depth: 8,
            frequencies: 10,
            steps: 2000,
            batch_size: 256,
            learning_rate: 1e-3,
            warmup_steps: 200,
            occupied_density: 10.0,
            supervision_resolution: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum OracleSource {
    /// Sample the pretrained backbone's density.
    Backbone,
    /// Use the scene directly: an indicator grid of the preset, or the grid file.
    Scene,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub resolution: usize,
    /// Occupancy threshold; half the grid maximum when absent.
    pub threshold: Option<f64>,
    pub source: OracleSource,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            resolution: 128,
            threshold: None,
            source: OracleSource::Backbone,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HeadSection {
    pub depth: usize,
    pub embed_dim: usize,
    pub r_fixed: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_fraction: f64,
}

impl Default for HeadSection {
    fn default() -> Self {
        let h = HeadConfig::default();
        let t = TrainConfig::default();
        Self {
            depth: h.depth,
            embed_dim: h.embed_dim,
            r_fixed: h.r_fixed,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            validation_fraction: t.validation_fraction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub axis: String,
    pub offset: f64,
    pub resolution: usize,
    /// Random free-space probes for the MAE figures.
    pub probes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            axis: "z".into(),
            offset: 0.0,
            resolution: 64,
            probes: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Head,
    Analytic,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSection {
    pub start: [f64; 3],
    pub goal: [f64; 3],
    pub dt: f64,
    pub max_steps: usize,
    pub tolerance: f64,
    pub robot_radius: f64,
    pub field: FieldKind,
    /// Map the head logit onto metric distance before planning.
    pub calibrated: bool,
    pub goal_gain: f64,
    pub goal_damping: f64,
    pub goal_soft_radius: f64,
    pub obstacle_gain: f64,
    pub obstacle_length_scale: f64,
    pub obstacle_damping: f64,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let g = GoalParams::default();
        let o = ObstacleParams::default();
        Self {
            start: [-0.8, 0.2, 0.0],
            goal: [0.8, 0.2, 0.0],
            dt: 0.01,
            max_steps: 5000,
            tolerance: 0.05,
            robot_radius: 0.02,
            field: FieldKind::Head,
            calibrated: true,
            goal_gain: g.gain,
            goal_damping: g.damping,
            goal_soft_radius: g.soft_radius,
            obstacle_gain: o.gain,
            obstacle_length_scale: o.length_scale,
            obstacle_damping: o.damping,
        }
    }
}

/// Where the scene comes from once validated.
#[derive(Debug, Clone)]
pub enum SceneSource {
    Preset(AnalyticScene),
    Grid(PathBuf),
}

impl SceneSource {
    pub fn analytic(&self) -> Option<&AnalyticScene> {
        match self {
            SceneSource::Preset(s) => Some(s),
            SceneSource::Grid(_) => None,
        }
    }
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {msg}"))
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(config_err(key, format!("must be positive, got {v}")))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(config_err(key, format!("must be at least {min}, got {v}")))
    }
}

impl RunConfig {
    /// Reads `path` (or starts empty), applies overrides, then deserializes.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scene_source()?;
        let b = &self.backbone;
        at_least("backbone.width", b.width, 1)?;
        at_least("backbone.depth", b.depth, 1)?;
        at_least("backbone.frequencies", b.frequencies, 1)?;
        at_least("backbone.steps", b.steps, 1)?;
        at_least("backbone.batch_size", b.batch_size, 1)?;
        at_least("backbone.supervision_resolution", b.supervision_resolution, 2)?;
        positive("backbone.learning_rate", b.learning_rate)?;
        positive("backbone.occupied_density", b.occupied_density)?;

        at_least("oracle.resolution", self.oracle.resolution, 1)?;
        if let Some(t) = self.oracle.threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(config_err("oracle.threshold", format!("must be non-negative, got {t}")));
            }
        }

        let h = &self.head;
        if !(1..=8).contains(&h.depth) {
            return Err(config_err("head.depth", format!("must lie in 1..=8, got {}", h.depth)));
        }
        if h.depth > b.depth {
            return Err(config_err(
                "head.depth",
                format!("exceeds backbone.depth ({} > {})", h.depth, b.depth),
            ));
        }
        at_least("head.embed_dim", h.embed_dim, 1)?;
        at_least("head.epochs", h.epochs, 1)?;
        at_least("head.batch_size", h.batch_size, 1)?;
        positive("head.learning_rate", h.learning_rate)?;
        if !(h.r_fixed > 0.0 && h.r_fixed <= occunav::head::MAX_QUERY_RADIUS) {
            return Err(config_err(
                "head.r_fixed",
                format!("must lie in (0, {}], got {}", occunav::head::MAX_QUERY_RADIUS, h.r_fixed),
            ));
        }
        if !(h.validation_fraction > 0.0 && h.validation_fraction < 1.0) {
            return Err(config_err("head.validation_fraction", "must lie in (0, 1)"));
        }

        self.slice_plane()?;
        at_least("eval.resolution", self.eval.resolution, 1)?;
        at_least("eval.probes", self.eval.probes, 2)?;

        let p = &self.planner;
        if !(p.robot_radius >= 0.0 && p.robot_radius.is_finite()) {
            return Err(config_err("planner.robot_radius", "must be non-negative"));
        }
        self.rollout_config()?;
        Ok(())
    }

    pub fn scene_source(&self) -> Result<SceneSource, CliError> {
        let scene = self
            .scene
            .as_ref()
            .ok_or_else(|| config_err("scene", "missing: set scene.preset or scene.grid"))?;
        match (&scene.preset, &scene.grid) {
            (Some(name), None) => AnalyticScene::preset(name)
                .map(SceneSource::Preset)
                .map_err(|e| config_err("scene.preset", e)),
            (None, Some(path)) => Ok(SceneSource::Grid(path.clone())),
            (Some(_), Some(_)) => Err(config_err("scene", "set only one of scene.preset and scene.grid")),
            (None, None) => Err(config_err("scene", "missing: set scene.preset or scene.grid")),
        }
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            encoding: PositionalEncoding::new(self.backbone.frequencies, true),
            width: self.backbone.width,
            depth: self.backbone.depth,
            skip_at: None,
            seed: derive_seed(self.stage_seed("pretrain"), "init"),
        }
    }

    pub fn pretrain_config(&self, target: PretrainTarget) -> PretrainConfig {
        let b = &self.backbone;
        PretrainConfig {
            target,
            steps: b.steps,
            batch_size: b.batch_size,
            learning_rate: b.learning_rate,
            seed: derive_seed(self.stage_seed("pretrain"), "sampling"),
            occupied_density: b.occupied_density,
            supervision_resolution: b.supervision_resolution,
            warmup_steps: b.warmup_steps,
        }
    }

    pub fn head_config(&self, seed_stream: &str) -> HeadConfig {
        HeadConfig {
            depth: self.head.depth,
            embed_dim: self.head.embed_dim,
            r_fixed: self.head.r_fixed,
            seed: self.stage_seed(seed_stream),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.head.epochs,
            batch_size: self.head.batch_size,
            learning_rate: self.head.learning_rate,
            seed: self.stage_seed("oracle-sampling"),
            validation_fraction: self.head.validation_fraction,
            ..TrainConfig::default()
        }
    }

    pub fn slice_plane(&self) -> Result<SlicePlane, CliError> {
        let axis = Axis::parse(&self.eval.axis).map_err(|e| config_err("eval.axis", e))?;
        SlicePlane::new(axis, self.eval.offset).map_err(|e| config_err("eval.offset", e))
    }

    pub fn rollout_config(&self) -> Result<RolloutConfig, CliError> {
        let p = &self.planner;
        let cfg = RolloutConfig {
            dt: p.dt,
            max_steps: p.max_steps,
            tolerance: p.tolerance,
            goal_params: GoalParams {
                gain: p.goal_gain,
                damping: p.goal_damping,
                soft_radius: p.goal_soft_radius,
            },
            obstacle_params: ObstacleParams {
                gain: p.obstacle_gain,
                length_scale: p.obstacle_length_scale,
                damping: p.obstacle_damping,
                ..ObstacleParams::default()
            },
            ..RolloutConfig::new(p.start, p.goal)
        };
        cfg.validate().map_err(|e| config_err("planner", e))?;
        Ok(cfg)
    }

    /// Seed of the named per-stage stream.
    pub fn stage_seed(&self, name: &str) -> u64 {
        derive_seed(self.seed, name)
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Sets `a.b.c = value`, creating intermediate tables. The value is read as a
/// TOML literal when it parses as one (`4`, `1e-3`, `true`, `[0, 0.5, 0]`) and
/// as a plain string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed override key `{key}`")));
    }
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let (last, path) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for (i, p) in path.iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override `{key}`: `{}` is not a section", parts[..=i].join(".")))
        })?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}
