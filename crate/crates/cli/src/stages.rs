//! The five pipeline stages. Each reads its inputs from the output directory
//! through the manifest chain and finishes by writing its own manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use occunav::backbone::{pretrain, DensityBackbone, PretrainTarget};
use occunav::head::{
    depth_sweep, evaluate_head_esdf, head_pseudo_distances, naive_esdf_baseline, probe_table_csv,
    sweep_table_csv, train_head, EsdfCalibration, EsdfProbes, HeadModel, SliceImages,
};
use occunav::head::encode_pgm;
use occunav::planner::{audit, rollout, AnalyticField, DistanceField, HeadField, Trajectory};
use occunav::scene::{
    default_threshold, sample_density_grid, sample_density_grid_batched, AnalyticScene, Axis, DensityGrid,
    GridSpec, OccupancyOracle, SampleStream, SlicePlane,
};

use crate::config::{FieldKind, OracleSource, RunConfig, SceneSource};
use crate::error::CliError;
use crate::manifest::{produced_by, read_verified, sha256_hex, write_atomic, DirLock, RunManifest, TOOL_VERSION};

pub const BACKBONE_FILE: &str = "backbone.nwts";
pub const GRID_FILE: &str = "density.dgrd";
pub const HEAD_FILE: &str = "head.nwts";

/// Probe count for the planner's logit-to-distance calibration.
const CALIBRATION_PROBES: usize = 4096;

/// Figures from the reference evaluation, printed next to ours.
const REFERENCE_PROPOSED_MAE: f64 = 0.039;
const REFERENCE_NAIVE_MAE: f64 = 0.175;

struct Stage<'a> {
    name: &'static str,
    cfg: &'a RunConfig,
    dir: PathBuf,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    _lock: DirLock,
}

impl<'a> Stage<'a> {
    fn begin(name: &'static str, cfg: &'a RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out)?;
        let lock = DirLock::acquire(&cfg.out)?;
        Ok(Self {
            name,
            cfg,
            dir: cfg.out.clone(),
            started: Instant::now(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            _lock: lock,
        })
    }

    fn input(&mut self, name: &str, upstream: &str) -> Result<Vec<u8>, CliError> {
        let bytes = read_verified(&self.dir, name, upstream)?;
        self.inputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn external_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn output(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn backbone(&mut self) -> Result<Arc<DensityBackbone>, CliError> {
        let bytes = self.input(BACKBONE_FILE, "pretrain")?;
        Ok(Arc::new(DensityBackbone::from_bytes(&bytes)?))
    }

    fn grid(&mut self) -> Result<DensityGrid, CliError> {
        let bytes = self.input(GRID_FILE, "build-oracle")?;
        Ok(DensityGrid::from_bytes(&bytes)?)
    }

    fn head(&mut self, backbone: Arc<DensityBackbone>) -> Result<HeadModel, CliError> {
        let bytes = self.input(HEAD_FILE, "train-head")?;
        Ok(HeadModel::from_bytes(&bytes, backbone)?)
    }

    fn oracle(&mut self) -> Result<OccupancyOracle, CliError> {
        let grid = self.grid()?;
        let threshold = self.cfg.oracle.threshold.unwrap_or_else(|| default_threshold(&grid));
        Ok(OccupancyOracle::build(&grid, threshold)?)
    }

    fn finish(self) -> Result<(), CliError> {
        let manifest = RunManifest {
            stage: self.name.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed: self.cfg.seed,
            config: self.cfg.snapshot(),
            wall_time_s: self.started.elapsed().as_secs_f64(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        manifest.write(&self.dir)?;
        Ok(())
    }
}

fn load_grid_file(stage: &mut Stage, path: &Path) -> Result<DensityGrid, CliError> {
    let bytes = stage.external_input(path)?;
    Ok(DensityGrid::from_bytes(&bytes)?)
}

fn indicator_grid(scene: &AnalyticScene, spec: GridSpec, density: f64) -> Result<DensityGrid, CliError> {
    Ok(sample_density_grid(|p| if scene.contains(p) { density } else { 0.0 }, spec)?)
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let source = cfg.scene_source()?;
    let mut stage = Stage::begin("pretrain", cfg)?;
    let target = match &source {
        SceneSource::Preset(scene) => PretrainTarget::Scene(scene.clone()),
        SceneSource::Grid(path) => PretrainTarget::Grid(load_grid_file(&mut stage, path)?),
    };
    let mut backbone = DensityBackbone::new(&cfg.backbone_config())?;
    let report = pretrain(&mut backbone, &cfg.pretrain_config(target))?;

    let mut csv = String::from("step,loss\n");
    for (i, l) in report.losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    stage.output(BACKBONE_FILE, &backbone.to_bytes())?;
    stage.output("pretrain_loss.csv", csv.as_bytes())?;
    println!(
        "pretrain: steps={} final_loss={:.6} -> {}",
        report.losses.len(),
        report.tail_mean(50),
        cfg.out.join(BACKBONE_FILE).display()
    );
    stage.finish()
}

pub fn cmd_build_oracle(cfg: &RunConfig, dry_run: bool) -> Result<(), CliError> {
    let source = cfg.scene_source()?;
    let spec = GridSpec::cube(cfg.oracle.resolution).map_err(|e| CliError::Config(format!("`oracle.resolution`: {e}")))?;
    if dry_run {
        println!("build-oracle (dry run): resolution={} samples={}", cfg.oracle.resolution, spec.sample_count());
        return Ok(());
    }
    let mut stage = Stage::begin("build-oracle", cfg)?;
    let grid = match (cfg.oracle.source, &source) {
        (OracleSource::Backbone, _) => {
            let backbone = stage.backbone()?;
            sample_density_grid_batched(|pts| backbone.density_batch(pts), spec)?
        }
        (OracleSource::Scene, SceneSource::Preset(scene)) => {
            indicator_grid(scene, spec, cfg.backbone.occupied_density)?
        }
        (OracleSource::Scene, SceneSource::Grid(path)) => {
            let grid = load_grid_file(&mut stage, path)?;
            if grid.spec().resolution != spec.resolution {
                println!(
                    "notice: using the grid file's own resolution {:?}; oracle.resolution is ignored",
                    grid.spec().resolution
                );
            }
            grid
        }
    };
    let threshold = cfg.oracle.threshold.unwrap_or_else(|| default_threshold(&grid));
    let oracle = OccupancyOracle::build(&grid, threshold)?;
    let samples = grid.spec().sample_count();
    let occupied = oracle.occupied_count();
    if oracle.is_empty() {
        eprintln!("warning: no cell exceeds threshold {threshold}; the scene is empty");
    }
    let stats = serde_json::json!({
        "resolution": grid.spec().resolution,
        "samples": samples,
        "threshold": threshold,
        "occupied": occupied,
        "occupied_fraction": occupied as f64 / samples as f64,
        "empty_scene": oracle.is_empty(),
        "source": cfg.oracle.source,
    });
    let mut stats_text = serde_json::to_string_pretty(&stats).expect("stats serialize");
    stats_text.push('\n');

    stage.output(GRID_FILE, &grid.to_bytes())?;
    stage.output("oracle_stats.json", stats_text.as_bytes())?;
    println!(
        "build-oracle: samples={samples} occupied={occupied} threshold={threshold} empty_scene={}",
        oracle.is_empty()
    );
    stage.finish()
}

fn diverged_at_epoch(e: occunav::Error) -> CliError {
    match e {
        occunav::Error::Diverged { step, loss } => {
            CliError::Numeric(format!("non-finite training loss ({loss}) at epoch {step}"))
        }
        other => other.into(),
    }
}

/// A sweep records its own manifest so it never displaces the head that
/// `eval-esdf` and `plan` read.
pub fn cmd_train_head(cfg: &RunConfig, sweep: bool) -> Result<(), CliError> {
    let name = if sweep { "train-head-sweep" } else { "train-head" };
    let mut stage = Stage::begin(name, cfg)?;
    let backbone = stage.backbone()?;
    let oracle = stage.oracle()?;
    if oracle.is_empty() {
        eprintln!("warning: the oracle has no occupied cells; every label is 0");
    }
    let train_cfg = cfg.train_config();

    if sweep {
        let depths: Vec<usize> = (1..=backbone.trunk_depth().min(8)).collect();
        let entries = depth_sweep(&backbone, &oracle, &depths, &cfg.head_config("sweep"), &train_cfg)
            .map_err(diverged_at_epoch)?;
        for e in &entries {
            stage.output(&format!("head_depth{}.nwts", e.depth), &e.head.to_bytes())?;
            stage.output(&format!("train_report_depth{}.csv", e.depth), e.report.to_csv().as_bytes())?;
            println!(
                "train-head: depth={} accuracy={:.4} last100={:.4}",
                e.depth,
                e.report.final_accuracy(),
                e.report.tail_accuracy(100)
            );
        }
        stage.output("depth_sweep.csv", sweep_table_csv(&entries).as_bytes())?;
    } else {
        let mut head = HeadModel::new(backbone, &cfg.head_config("head"))?;
        let report = train_head(&mut head, &oracle, &train_cfg).map_err(diverged_at_epoch)?;
        stage.output(HEAD_FILE, &head.to_bytes())?;
        stage.output("train_report.csv", report.to_csv().as_bytes())?;
        println!(
            "train-head: depth={} epochs={} accuracy={:.4} val_loss={:.4}",
            head.depth(),
            report.epochs,
            report.final_accuracy(),
            report.val_loss.last().copied().unwrap_or(f64::NAN)
        );
    }
    stage.finish()
}

/// Min-max normalization for a slice with no ground truth to scale against.
fn self_normalized(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    values.iter().map(|v| (v - lo) / span).collect()
}

pub fn cmd_eval_esdf(cfg: &RunConfig) -> Result<(), CliError> {
    let source = cfg.scene_source()?;
    let plane = cfg.slice_plane()?;
    let mut stage = Stage::begin("eval-esdf", cfg)?;
    let backbone = stage.backbone()?;
    let head = stage.head(Arc::clone(&backbone))?;
    let oracle = stage.oracle()?;

    let n = cfg.eval.resolution;
    let slice_points = plane.points(n);
    let pseudo = head_pseudo_distances(&head, &slice_points)?;
    let eval_seed = cfg.stage_seed("eval");

    let samples = SampleStream::new(eval_seed).batch(&oracle, cfg.eval.probes);
    stage.output("probes.csv", probe_table_csv(&head, &samples)?.as_bytes())?;

    match source.analytic() {
        Some(scene) => {
            let probes = EsdfProbes::random(scene, cfg.eval.probes, eval_seed);
            let proposed = evaluate_head_esdf(&head, &probes)?;
            let naive = naive_esdf_baseline(&backbone, scene, head.depth(), &cfg.train_config(), &probes)
                .map_err(diverged_at_epoch)?;
            let ratio = naive.metrics.mae / proposed.mae;
            let text = format!(
                "probes={}\nproposed_mae={}\nnaive_mae={}\nratio={}\nscale={}\noffset={}\n\
                 reference_proposed_mae={REFERENCE_PROPOSED_MAE}\nreference_naive_mae={REFERENCE_NAIVE_MAE}\n",
                probes.len(),
                proposed.mae,
                naive.metrics.mae,
                ratio,
                proposed.scale,
                proposed.offset,
            );
            stage.output("esdf_metrics.txt", text.as_bytes())?;

            let truth: Vec<f64> = slice_points.iter().map(|&p| scene.distance(p)).collect();
            let calibration = EsdfCalibration {
                scale: proposed.scale,
                offset: proposed.offset,
            };
            let images = SliceImages::new(&pseudo, &truth, n, calibration)?;
            stage.output("slice_pred.pgm", &images.pgm(&images.predicted)?)?;
            stage.output("slice_truth.pgm", &images.pgm(&images.truth)?)?;
            stage.output("slice_error.pgm", &images.pgm(&images.error)?)?;
            println!(
                "eval-esdf: proposed_mae={:.4} naive_mae={:.4} ratio={:.2} (reference: proposed {REFERENCE_PROPOSED_MAE}, naive {REFERENCE_NAIVE_MAE})",
                proposed.mae, naive.metrics.mae, ratio
            );
        }
        None => {
            println!("notice: no analytic ground truth for a grid scene; metrics skipped, predicted slice only");
            stage.output("slice_pred.pgm", &encode_pgm(&self_normalized(&pseudo), n, n)?)?;
        }
    }
    stage.finish()
}

/// Path drawn in black over a light rendering of the density slice through the start point.
fn overlay(traj: &Trajectory, plane: SlicePlane, n: usize, density: &dyn Fn([f64; 3]) -> f64) -> Result<Vec<u8>, CliError> {
    let pts = plane.points(n);
    let raw: Vec<f64> = pts.iter().map(|&p| density(p)).collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    let mut img: Vec<f64> = raw
        .iter()
        .map(|&v| if max > 0.0 { 1.0 - 0.6 * (v / max).clamp(0.0, 1.0) } else { 1.0 })
        .collect();
    let (u, v) = plane.plane_axes();
    let pixel = |c: f64| ((c + 1.0) * 0.5 * n as f64).floor();
    for r in &traj.records {
        let (i, j) = (pixel(r.position[u]), pixel(r.position[v]));
        if (0.0..n as f64).contains(&i) && (0.0..n as f64).contains(&j) {
            img[j as usize * n + i as usize] = 0.0;
        }
    }
    Ok(encode_pgm(&img, n, n)?)
}

pub fn cmd_plan(cfg: &RunConfig) -> Result<(), CliError> {
    let source = cfg.scene_source()?;
    let rc = cfg.rollout_config()?;
    let mut stage = Stage::begin("plan", cfg)?;
    let scene = source.analytic();

    let started = Instant::now();
    let (traj, counts) = match cfg.planner.field {
        FieldKind::Analytic => {
            let scene = scene.ok_or_else(|| {
                CliError::Config("`planner.field`: analytic needs scene.preset".into())
            })?;
            let field = AnalyticField::new(scene);
            (rollout(&field, &rc)?, field.counts())
        }
        FieldKind::Head => {
            let backbone = stage.backbone()?;
            let head = stage.head(backbone)?;
            let mut field = HeadField::new(&head);
            if cfg.planner.calibrated {
                match scene {
                    Some(scene) => {
                        let probes = EsdfProbes::random(scene, CALIBRATION_PROBES, cfg.stage_seed("rollout"));
                        let pseudo = head_pseudo_distances(&head, &probes.points)?;
                        field = field.with_calibration(EsdfCalibration::fit(&pseudo, &probes.truth)?);
                    }
                    None => println!("notice: no analytic scene to calibrate against; planning on the raw logit"),
                }
            }
            (rollout(&field, &rc)?, field.counts())
        }
    };
    let elapsed = started.elapsed();
    let steps = traj.records.len();

    stage.output("trajectory.csv", traj.to_csv().as_bytes())?;
    let field_name = match cfg.planner.field {
        FieldKind::Head => "head",
        FieldKind::Analytic => "analytic",
    };
    let mut report = match scene {
        Some(scene) => audit(&traj, scene, cfg.planner.robot_radius)?.to_text(),
        None => format!("steps={}\nreason={}\n", steps.saturating_sub(1), traj.reason),
    };
    report.push_str(&format!(
        "field={field_name}\nforward_passes={}\nbackward_passes={}\nfree_drift_steps={}\n",
        counts.forward, counts.backward, traj.free_drift_steps
    ));
    stage.output("audit.txt", report.as_bytes())?;

    let plane = SlicePlane::new(Axis::Z, rc.start[2]).map_err(|e| CliError::Config(format!("`planner.start`: {e}")))?;
    let n = cfg.eval.resolution;
    if produced_by(&cfg.out, GRID_FILE, "build-oracle")? {
        let grid = stage.grid()?;
        let img = overlay(&traj, plane, n, &|p| grid.nearest_value(p))?;
        stage.output("plan_overlay.pgm", &img)?;
    } else if let Some(scene) = scene {
        let img = overlay(&traj, plane, n, &|p| if scene.contains(p) { 1.0 } else { 0.0 })?;
        stage.output("plan_overlay.pgm", &img)?;
    }

    print!("plan: field={field_name} ");
    for line in report.lines().filter(|l| !l.starts_with("field=")) {
        print!("{line} ");
    }
    println!(
        "per_step_us={:.1}",
        elapsed.as_secs_f64() * 1e6 / steps.max(1) as f64
    );
    stage.finish()
}
