//! Axis-aligned 2-D slices through the normalized cube.

use super::analytic::{AnalyticScene, Point3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::domain(format!("unknown axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicePlane {
    pub axis: Axis,
    pub offset: f64,
}

impl SlicePlane {
    pub fn new(axis: Axis, offset: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&offset) {
            return Err(Error::domain(format!("slice offset {offset} outside [-1, 1]")));
        }
        Ok(Self { axis, offset })
    }

    /// In-plane axes (u, v) in increasing index order.
    pub fn plane_axes(&self) -> (usize, usize) {
        match self.axis {
            Axis::X => (1, 2),
            Axis::Y => (0, 2),
            Axis::Z => (0, 1),
        }
    }

    /// 3-D position of lattice cell `(i, j)` on an `n × n` cell-centered lattice over `[-1, 1]²`.
    pub fn point(&self, i: usize, j: usize, n: usize) -> Point3 {
        let (u, v) = self.plane_axes();
        let mut p = [0.0; 3];
        p[self.axis.index()] = self.offset;
        p[u] = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
        p[v] = -1.0 + (j as f64 + 0.5) * 2.0 / n as f64;
        p
    }

    pub fn points(&self, n: usize) -> Vec<Point3> {
        let mut out = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                out.push(self.point(i, j, n));
            }
        }
        out
    }
}

/// Row-major `n × n` field samples; row `j` runs along the plane's first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice2d {
    pub plane: SlicePlane,
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl Slice2d {
    pub fn from_fn<F: FnMut(Point3) -> f64>(plane: SlicePlane, resolution: usize, mut f: F) -> Self {
        let values = plane.points(resolution).into_iter().map(&mut f).collect();
        Self {
            plane,
            resolution,
            values,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.resolution + i]
    }
}

pub fn ground_truth_esdf_slice(
    scene: &AnalyticScene,
    plane: SlicePlane,
    resolution: usize,
) -> Result<Slice2d> {
    if resolution == 0 {
        return Err(Error::domain("slice resolution must be positive"));
    }
    Ok(Slice2d::from_fn(plane, resolution, |p| scene.distance(p)))
}
