//! Riemannian motion policies: goal attractor, obstacle repulsor, metric-weighted combination.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

use super::field::FieldSample;

/// Eigenvalues of the summed metric at or below this are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-10;

/// One policy evaluated at a state: desired acceleration `f` and metric `A`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmpEval {
    pub f: Vector3<f64>,
    pub a: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalParams {
    pub gain: f64,
    pub damping: f64,
    /// Below this distance the pull shrinks linearly to zero.
    pub soft_radius: f64,
}

impl Default for GoalParams {
    fn default() -> Self {
        Self {
            gain: 1.0,
            damping: 2.0,
            soft_radius: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleParams {
    /// Repulsion magnitude at zero distance.
    pub gain: f64,
    /// Length scale of the exponential fall-off of repulsion and metric.
    pub length_scale: f64,
    /// Damping of approach speed along the obstacle normal.
    pub damping: f64,
    /// Floor for the gradient norm when normalizing.
    pub epsilon: f64,
}

impl Default for ObstacleParams {
    fn default() -> Self {
        Self {
            gain: 4.0,
            length_scale: 0.1,
            damping: 2.0,
            epsilon: 1e-6,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be positive, got {v}")))
    }
}

impl GoalParams {
    pub fn validate(&self) -> Result<()> {
        positive("goal gain", self.gain)?;
        positive("goal damping", self.damping)?;
        positive("goal soft radius", self.soft_radius)
    }
}

impl ObstacleParams {
    pub fn validate(&self) -> Result<()> {
        positive("obstacle gain", self.gain)?;
        positive("obstacle length scale", self.length_scale)?;
        positive("obstacle damping", self.damping)?;
        positive("gradient epsilon", self.epsilon)
    }
}

/// `f = γp·(g − x)/max(‖g − x‖, δ) − γd·ẋ`, `A = I`.
pub fn goal_policy(x: Vector3<f64>, xd: Vector3<f64>, goal: Vector3<f64>, p: &GoalParams) -> RmpEval {
    let to_goal = goal - x;
    let f = p.gain * to_goal / to_goal.norm().max(p.soft_radius) - p.damping * xd;
    RmpEval {
        f,
        a: Matrix3::identity(),
    }
}

/// Repulsion and approach damping along the normalized obstacle gradient `v`:
/// `f = η·e^{−s/ν}·v − λd·min(0, vᵀẋ)·v`, `A = e^{−s/ν}·v·vᵀ`.
pub fn obstacle_policy(xd: Vector3<f64>, sample: FieldSample, p: &ObstacleParams) -> Result<RmpEval> {
    let g = Vector3::from(sample.gradient);
    if !sample.distance.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(format!(
            "non-finite field sample: d = {}, ∇d = {:?}",
            sample.distance, sample.gradient
        )));
    }
    let v = g / g.norm().max(p.epsilon);
    let w = (-sample.distance / p.length_scale).exp();
    let approach = v.dot(&xd);
    let f = p.gain * w * v - p.damping * approach.min(0.0) * v;
    let a = w * v * v.transpose();
    if !(f.iter().all(|c| c.is_finite()) && a.iter().all(|c| c.is_finite())) {
        return Err(Error::domain(format!(
            "obstacle policy overflowed at d = {}",
            sample.distance
        )));
    }
    Ok(RmpEval { f, a })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combined {
    pub accel: Vector3<f64>,
    /// No metric direction survived the cutoff; `accel` is zero.
    pub free_drift: bool,
}

/// `ẍ = (Σ Aᵢ)⁺ Σ Aᵢ fᵢ` with an eigenvalue-cutoff pseudoinverse.
pub fn combine(policies: &[RmpEval]) -> Result<Combined> {
    if policies.is_empty() {
        return Err(Error::domain("combine needs at least one policy"));
    }
    let mut a_sum = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for p in policies {
        a_sum += p.a;
        rhs += p.a * p.f;
    }
    // Symmetrize away rounding before the eigendecomposition.
    let a_sym = (a_sum + a_sum.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a_sym);
    let mut accel = Vector3::zeros();
    let mut kept = 0;
    for i in 0..3 {
        let lambda = eig.eigenvalues[i];
        if lambda > PINV_CUTOFF {
            let u = eig.eigenvectors.column(i);
            accel += u * (u.dot(&rhs) / lambda);
            kept += 1;
        }
    }
    Ok(Combined {
        accel,
        free_drift: kept == 0,
    })
}

/// Smallest eigenvalue of a symmetric metric.
pub fn min_eigenvalue(a: &Matrix3<f64>) -> f64 {
    SymmetricEigen::new((a + a.transpose()) * 0.5).eigenvalues.min()
}
