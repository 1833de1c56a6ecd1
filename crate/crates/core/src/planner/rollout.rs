//! Fixed-step rollout of the combined policies and trajectory auditing.

use std::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::{AnalyticScene, Point3};

use super::field::DistanceField;
use super::rmp::{combine, goal_policy, obstacle_policy, GoalParams, ObstacleParams};

/// States farther than this from the origin count as diverged.
pub const DIVERGENCE_RADIUS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub start: Point3,
    pub goal: Point3,
    pub dt: f64,
    pub max_steps: usize,
    pub tolerance: f64,
    pub goal_params: GoalParams,
    pub obstacle_params: ObstacleParams,
}

impl RolloutConfig {
    pub fn new(start: Point3, goal: Point3) -> Self {
        Self {
            start,
            goal,
            dt: 0.01,
            max_steps: 5000,
            tolerance: 0.05,
            goal_params: GoalParams::default(),
            obstacle_params: ObstacleParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain(format!("dt must be positive, got {}", self.dt)));
        }
        if self.max_steps == 0 {
            return Err(Error::domain("max_steps must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::domain("goal tolerance must be positive"));
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !p.iter().all(|v| (-1.0..=1.0).contains(v)) {
                return Err(Error::domain(format!("{name} {p:?} outside [-1, 1]^3")));
            }
        }
        self.goal_params.validate()?;
        self.obstacle_params.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GoalReached,
    MaxSteps,
    Diverged,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::GoalReached => "goal_reached",
            Termination::MaxSteps => "max_steps",
            Termination::Diverged => "diverged",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub t: f64,
    pub position: Point3,
    pub velocity: Point3,
    pub acceleration: Point3,
    /// Field distance `d(x)` at `position`.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub reason: Termination,
    /// Steps at which every metric vanished and the state drifted.
    pub free_drift_steps: usize,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,t,x,y,z,vx,vy,vz,ax,ay,az,dist\n");
        for r in &self.records {
            let [x, y, z] = r.position;
            let [vx, vy, vz] = r.velocity;
            let [ax, ay, az] = r.acceleration;
            s.push_str(&format!(
                "{},{},{x},{y},{z},{vx},{vy},{vz},{ax},{ay},{az},{}\n",
                r.step, r.t, r.distance
            ));
        }
        s.push_str(&format!("# reason={}\n", self.reason));
        s
    }

    pub fn final_position(&self) -> Option<Point3> {
        self.records.last().map(|r| r.position)
    }
}

fn to_point(v: Vector3<f64>) -> Point3 {
    [v.x, v.y, v.z]
}

/// Semi-implicit Euler integration of goal + obstacle policies.
///
/// Every record costs exactly one field query (one forward, one backward pass).
/// Invalid configurations are errors; divergence is a trajectory outcome.
pub fn rollout(field: &dyn DistanceField, cfg: &RolloutConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let goal = Vector3::from(cfg.goal);
    let mut x = Vector3::from(cfg.start);
    let mut v = Vector3::zeros();
    let mut records = Vec::new();
    let mut free_drift_steps = 0;
    let finish = |records, reason, free_drift_steps| Trajectory {
        records,
        reason,
        free_drift_steps,
    };

    for step in 0..=cfg.max_steps {
        let sample = match field.evaluate(to_point(x)) {
            Ok(s) => s,
            Err(_) => return Ok(finish(records, Termination::Diverged, free_drift_steps)),
        };
        let obstacle = match obstacle_policy(v, sample, &cfg.obstacle_params) {
            Ok(o) => o,
            Err(_) => return Ok(finish(records, Termination::Diverged, free_drift_steps)),
        };
        let attract = goal_policy(x, v, goal, &cfg.goal_params);
        let combined = combine(&[attract, obstacle])?;
        if combined.free_drift {
            free_drift_steps += 1;
        }
        let acc = combined.accel;
        records.push(TrajectoryRecord {
            step,
            t: step as f64 * cfg.dt,
            position: to_point(x),
            velocity: to_point(v),
            acceleration: to_point(acc),
            distance: sample.distance,
        });
        if (x - goal).norm() <= cfg.tolerance {
            return Ok(finish(records, Termination::GoalReached, free_drift_steps));
        }
        if step == cfg.max_steps {
            break;
        }
        v += acc * cfg.dt;
        x += v * cfg.dt;
        let finite = x.iter().chain(v.iter()).all(|c| c.is_finite());
        if !finite || x.norm() > DIVERGENCE_RADIUS {
            return Ok(finish(records, Termination::Diverged, free_drift_steps));
        }
    }
    Ok(finish(records, Termination::MaxSteps, free_drift_steps))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditReport {
    /// Minimum of `scene_distance(x) − robot_radius` over all records.
    pub min_clearance: f64,
    pub path_length: f64,
    pub steps: usize,
    pub reason: Termination,
    pub success: bool,
}

impl AuditReport {
    pub fn to_text(&self) -> String {
        format!(
            "min_clearance={}\npath_length={}\nsteps={}\nreason={}\nsuccess={}\n",
            self.min_clearance, self.path_length, self.steps, self.reason, self.success
        )
    }
}

/// Checks a trajectory against the exact scene geometry.
pub fn audit(traj: &Trajectory, scene: &AnalyticScene, robot_radius: f64) -> Result<AuditReport> {
    if traj.records.is_empty() {
        return Err(Error::domain("cannot audit an empty trajectory"));
    }
    if !(robot_radius >= 0.0) {
        return Err(Error::domain("robot radius must be non-negative"));
    }
    let min_clearance = traj
        .records
        .iter()
        .map(|r| scene.distance(r.position) - robot_radius)
        .fold(f64::INFINITY, f64::min);
    let path_length = traj
        .records
        .windows(2)
        .map(|w| (Vector3::from(w[1].position) - Vector3::from(w[0].position)).norm())
        .sum();
    Ok(AuditReport {
        min_clearance,
        path_length,
        steps: traj.records.len() - 1,
        reason: traj.reason,
        success: traj.reason == Termination::GoalReached && min_clearance > 0.0,
    })
}

/// Start/goal pairs whose straight segment passes through geometry.
///
/// Both endpoints keep at least `clearance` from every obstacle and lie in
/// `[-margin, margin]^3`.
pub fn blocked_pairs(
    scene: &AnalyticScene,
    count: usize,
    seed: u64,
    clearance: f64,
    margin: f64,
) -> Result<Vec<(Point3, Point3)>> {
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(Error::domain("margin must lie in (0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Point3 {
        [
            rng.gen_range(-margin..margin),
            rng.gen_range(-margin..margin),
            rng.gen_range(-margin..margin),
        ]
    };
    let mut pairs = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while pairs.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::domain("could not find enough blocked start/goal pairs"));
        }
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        if scene.distance(a) < clearance || scene.distance(b) < clearance {
            continue;
        }
        let blocked = (0..=200).any(|i| {
            let t = i as f64 / 200.0;
            scene.contains([0, 1, 2].map(|k| a[k] + t * (b[k] - a[k])))
        });
        if blocked {
            pairs.push((a, b));
        }
    }
    Ok(pairs)
}
