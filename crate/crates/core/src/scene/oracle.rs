//! Occupancy oracle over thresholded density samples and label generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::analytic::Point3;
use super::grid::DensityGrid;
use super::kdtree::KdTree;
use crate::error::{Error, Result};

pub const RADIUS_MIN: f64 = 0.005;
pub const RADIUS_MAX: f64 = 0.25;

/// Answers "is any occupied sample within `r` of `q`".
#[derive(Debug, Clone)]
pub struct OccupancyOracle {
    threshold: f64,
    tree: KdTree,
    cell_diagonal: f64,
}

impl OccupancyOracle {
    /// Indexes the centers of all cells whose value is strictly above `threshold`.
    ///
    /// An oracle with no occupied cells is valid; [`Self::is_empty`] reports it
    /// and every query answers `false`.
    pub fn build(grid: &DensityGrid, threshold: f64) -> Result<Self> {
        if !(threshold.is_finite() && threshold >= 0.0) {
            return Err(Error::domain(format!(
                "density threshold must be finite and non-negative, got {threshold}"
            )));
        }
        Ok(Self::from_points(
            grid.centers()
                .filter(|&(_, v)| v > threshold)
                .map(|(p, _)| p)
                .collect(),
            threshold,
            grid.spec().cell_diagonal(),
        ))
    }

    pub fn from_points(points: Vec<Point3>, threshold: f64, cell_diagonal: f64) -> Self {
        Self {
            threshold,
            tree: KdTree::build(points),
            cell_diagonal,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn occupied_count(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn occupied_points(&self) -> &[Point3] {
        self.tree.points()
    }

    /// Diagonal of the source grid's cells, the width of the discretization band.
    pub fn cell_diagonal(&self) -> f64 {
        self.cell_diagonal
    }

    pub fn query(&self, q: Point3, r: f64) -> Result<bool> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::domain(format!("query radius must be positive, got {r}")));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("query point must be finite"));
        }
        Ok(self.tree.any_within(q, r * r))
    }

    /// Euclidean distance to the nearest occupied sample (`INFINITY` if empty).
    pub fn nearest_distance(&self, q: Point3) -> f64 {
        self.tree.nearest_dist2(q).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub position: Point3,
    pub radius: f64,
    pub label: bool,
}

/// Deterministic stream of i.i.d. labelled samples: positions in `U(-1,1)^3`,
/// radii in `U(0.005, 0.25)`.
#[derive(Debug, Clone)]
pub struct SampleStream {
    rng: ChaCha8Rng,
}

impl SampleStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_position(&mut self) -> Point3 {
        [
            self.rng.gen_range(-1.0..1.0),
            self.rng.gen_range(-1.0..1.0),
            self.rng.gen_range(-1.0..1.0),
        ]
    }

    pub fn next_radius(&mut self) -> f64 {
        self.rng.gen_range(RADIUS_MIN..RADIUS_MAX)
    }

    pub fn next_sample(&mut self, oracle: &OccupancyOracle) -> TrainingSample {
        let position = self.next_position();
        let radius = self.next_radius();
        let label = oracle.tree.any_within(position, radius * radius);
        TrainingSample {
            position,
            radius,
            label,
        }
    }

    pub fn batch(&mut self, oracle: &OccupancyOracle, count: usize) -> Vec<TrainingSample> {
        (0..count).map(|_| self.next_sample(oracle)).collect()
    }
}

pub fn generate_samples(
    oracle: &OccupancyOracle,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    if count == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    Ok(SampleStream::new(seed).batch(oracle, count))
}
