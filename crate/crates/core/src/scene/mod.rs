//! Ground truth: analytic scenes, density grids, the kd-tree occupancy
//! oracle and training-label generation.

mod analytic;
mod grid;
mod kdtree;
mod oracle;
mod slice;

pub use analytic::{AnalyticScene, Point3, Primitive};
pub use grid::{
    sample_density_grid, sample_density_grid_batched, Aabb, DensityGrid, GridSpec, DGRD_MAGIC,
    DGRD_VERSION,
};
pub use kdtree::{dist2, KdTree};
pub use oracle::{
    generate_samples, OccupancyOracle, SampleStream, TrainingSample, RADIUS_MAX, RADIUS_MIN,
};
pub use slice::{ground_truth_esdf_slice, Axis, Slice2d, SlicePlane};

/// Default threshold for indicator-like synthetic fields: half the grid maximum.
pub fn default_threshold(grid: &DensityGrid) -> f64 {
    0.5 * grid.max_value()
}
