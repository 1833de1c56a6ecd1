//! Distance fields the obstacle policy reads: d(x) and ∇d(x) from a single query.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::head::{EsdfCalibration, HeadModel};
use crate::scene::{AnalyticScene, Point3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub distance: f64,
    pub gradient: Point3,
}

/// Forward and backward passes issued so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueryCounts {
    pub forward: u64,
    pub backward: u64,
}

#[derive(Debug, Default)]
struct Counters {
    forward: AtomicU64,
    backward: AtomicU64,
}

impl Counters {
    fn record(&self) {
        self.forward.fetch_add(1, Ordering::Relaxed);
        self.backward.fetch_add(1, Ordering::Relaxed);
    }

    fn get(&self) -> QueryCounts {
        QueryCounts {
            forward: self.forward.load(Ordering::Relaxed),
            backward: self.backward.load(Ordering::Relaxed),
        }
    }
}

pub trait DistanceField {
    /// Distance and its gradient: one forward and one backward pass.
    fn evaluate(&self, q: Point3) -> Result<FieldSample>;

    fn counts(&self) -> QueryCounts;
}

/// Head-backed field: `d = -logit(q, r)` (optionally calibrated), `∇d` by backprop.
///
/// Queries outside the unit cube are evaluated at the nearest point of the cube,
/// the domain the head was trained on.
#[derive(Debug)]
pub struct HeadField<'a> {
    head: &'a HeadModel,
    radius: f64,
    calibration: Option<EsdfCalibration>,
    counters: Counters,
}

impl<'a> HeadField<'a> {
    pub fn new(head: &'a HeadModel) -> Self {
        Self {
            head,
            radius: head.r_fixed(),
            calibration: None,
            counters: Counters::default(),
        }
    }

    pub fn with_calibration(mut self, calibration: EsdfCalibration) -> Self {
        self.calibration = Some(calibration);
        self
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }
}

impl DistanceField for HeadField<'_> {
    fn evaluate(&self, q: Point3) -> Result<FieldSample> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("field query must be finite"));
        }
        self.counters.record();
        let s = self.head.logit_with_gradient(q.map(|v| v.clamp(-1.0, 1.0)), self.radius)?;
        let (a, b) = self.calibration.map_or((1.0, 0.0), |c| (c.scale, c.offset));
        Ok(FieldSample {
            distance: a * -s.logit + b,
            gradient: s.gradient.map(|g| -a * g),
        })
    }

    fn counts(&self) -> QueryCounts {
        self.counters.get()
    }
}

/// Exact signed distance and outward normal of an analytic scene.
#[derive(Debug)]
pub struct AnalyticField<'a> {
    scene: &'a AnalyticScene,
    counters: Counters,
}

impl<'a> AnalyticField<'a> {
    pub fn new(scene: &'a AnalyticScene) -> Self {
        Self {
            scene,
            counters: Counters::default(),
        }
    }
}

impl DistanceField for AnalyticField<'_> {
    fn evaluate(&self, q: Point3) -> Result<FieldSample> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("field query must be finite"));
        }
        self.counters.record();
        let (distance, gradient) = self.scene.distance_and_normal(q);
        Ok(FieldSample { distance, gradient })
    }

    fn counts(&self) -> QueryCounts {
        self.counters.get()
    }
}

/// No obstacles: a constant large distance and zero gradient.
#[derive(Debug, Default)]
pub struct EmptyField {
    counters: Counters,
}

impl EmptyField {
    pub const DISTANCE: f64 = 1e3;
}

impl DistanceField for EmptyField {
    fn evaluate(&self, _q: Point3) -> Result<FieldSample> {
        self.counters.record();
        Ok(FieldSample {
            distance: Self::DISTANCE,
            gradient: [0.0; 3],
        })
    }

    fn counts(&self) -> QueryCounts {
        self.counters.get()
    }
}
