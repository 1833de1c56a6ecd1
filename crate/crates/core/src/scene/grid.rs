//! Regular density grids and the `DGRD` file format.
//!
//! `DGRD` layout, little-endian: `"DGRD" | u32 version (1) | u32 nx, ny, nz |
//! 6 f64 bounds (min xyz, max xyz) | nx*ny*nz f64 values, x fastest`.

use std::io::{Read, Write};

use super::analytic::Point3;
use crate::error::{Error, Result};
use crate::nn::Cursor;

pub const DGRD_MAGIC: &[u8; 4] = b"DGRD";
pub const DGRD_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    /// The normalized cube `[-1, 1]^3`.
    pub const UNIT: Aabb = Aabb {
        min: [-1.0; 3],
        max: [1.0; 3],
    };

    pub fn contains(&self, q: Point3) -> bool {
        (0..3).all(|i| q[i] >= self.min[i] && q[i] <= self.max[i])
    }
}

/// Lattice description without values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub resolution: [usize; 3],
    pub bounds: Aabb,
}

impl GridSpec {
    pub fn new(resolution: [usize; 3], bounds: Aabb) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::domain(format!(
                "grid resolution must be at least 2 per axis, got {resolution:?}"
            )));
        }
        if (0..3).any(|i| {
            !(bounds.min[i].is_finite() && bounds.max[i].is_finite())
                || bounds.max[i] <= bounds.min[i]
        }) {
            return Err(Error::domain(format!("degenerate grid bounds {bounds:?}")));
        }
        Ok(Self { resolution, bounds })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new([n; 3], Aabb::UNIT)
    }

    pub fn sample_count(&self) -> u64 {
        self.resolution.iter().map(|&n| n as u64).product()
    }

    pub fn cell_size(&self) -> Point3 {
        let mut s = [0.0; 3];
        for (i, v) in s.iter_mut().enumerate() {
            *v = (self.bounds.max[i] - self.bounds.min[i]) / self.resolution[i] as f64;
        }
        s
    }

    pub fn cell_diagonal(&self) -> f64 {
        let s = self.cell_size();
        (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        let [nx, ny, _] = self.resolution;
        ix + nx * (iy + ny * iz)
    }

    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Point3 {
        let idx = [ix, iy, iz];
        let mut p = [0.0; 3];
        for i in 0..3 {
            let t = (idx[i] as f64 + 0.5) / self.resolution[i] as f64;
            p[i] = self.bounds.min[i] + t * (self.bounds.max[i] - self.bounds.min[i]);
        }
        p
    }

    /// Index of the cell containing `q`, clamped to the grid.
    pub fn cell_of(&self, q: Point3) -> [usize; 3] {
        let mut idx = [0; 3];
        for i in 0..3 {
            let t = (q[i] - self.bounds.min[i]) / (self.bounds.max[i] - self.bounds.min[i]);
            let n = self.resolution[i];
            idx[i] = ((t * n as f64).floor().max(0.0) as usize).min(n - 1);
        }
        idx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

fn check_value(spec: &GridSpec, i: usize, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        return Ok(());
    }
    let [nx, ny, _] = spec.resolution;
    let (ix, iy, iz) = (i % nx, (i / nx) % ny, i / (nx * ny));
    Err(Error::InvalidSample {
        position: spec.cell_center(ix, iy, iz),
        value: v,
    })
}

impl DensityGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() as u64 != spec.sample_count() {
            return Err(Error::shape(format!(
                "grid {:?} needs {} values, got {}",
                spec.resolution,
                spec.sample_count(),
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            check_value(&spec, i, v)?;
        }
        Ok(Self { spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn value_at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[self.spec.index(ix, iy, iz)]
    }

    /// Value of the cell containing `q` (clamped to the grid).
    pub fn nearest_value(&self, q: Point3) -> f64 {
        let [ix, iy, iz] = self.spec.cell_of(q);
        self.value_at(ix, iy, iz)
    }

    /// Cell centers in storage order.
    pub fn centers(&self) -> impl Iterator<Item = (Point3, f64)> + '_ {
        let [nx, ny, _] = self.spec.resolution;
        self.values.iter().enumerate().map(move |(i, &v)| {
            (
                self.spec.cell_center(i % nx, (i / nx) % ny, i / (nx * ny)),
                v,
            )
        })
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = Vec::with_capacity(64);
        header.extend_from_slice(DGRD_MAGIC);
        header.extend_from_slice(&DGRD_VERSION.to_le_bytes());
        for n in self.spec.resolution {
            header.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in self.spec.bounds.min.iter().chain(&self.spec.bounds.max) {
            header.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(8 * self.values.len());
        for v in &self.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4)? != DGRD_MAGIC {
            return Err(Error::format("bad DGRD magic"));
        }
        let version = cur.u32()?;
        if version != DGRD_VERSION {
            return Err(Error::format(format!("unsupported DGRD version {version}")));
        }
        let resolution = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = cur.f64()?;
        }
        let bounds = Aabb {
            min: [b[0], b[1], b[2]],
            max: [b[3], b[4], b[5]],
        };
        let spec = GridSpec::new(resolution, bounds)
            .map_err(|e| Error::format(format!("DGRD header: {e}")))?;
        let n = usize::try_from(spec.sample_count())
            .map_err(|_| Error::format("DGRD grid too large"))?;
        let values = cur.f64s(n)?;
        if cur.remaining() != 0 {
            return Err(Error::format(format!(
                "{} trailing bytes after DGRD values",
                cur.remaining()
            )));
        }
        Self::new(spec, values).map_err(|e| Error::format(format!("DGRD values: {e}")))
    }
}

/// Samples `field` at every cell center.
pub fn sample_density_grid<F>(field: F, spec: GridSpec) -> Result<DensityGrid>
where
    F: Fn(Point3) -> f64,
{
    sample_density_grid_batched(|pts| Ok(pts.iter().map(|&p| field(p)).collect()), spec)
}

/// Samples a batched field one z-plane at a time.
pub fn sample_density_grid_batched<F>(mut field: F, spec: GridSpec) -> Result<DensityGrid>
where
    F: FnMut(&[Point3]) -> Result<Vec<f64>>,
{
    let [nx, ny, nz] = spec.resolution;
    let total = usize::try_from(spec.sample_count())
        .map_err(|_| Error::domain("grid too large for this platform"))?;
    let mut values = Vec::with_capacity(total);
    let mut plane = Vec::with_capacity(nx * ny);
    for iz in 0..nz {
        plane.clear();
        for iy in 0..ny {
            for ix in 0..nx {
                plane.push(spec.cell_center(ix, iy, iz));
            }
        }
        let vals = field(&plane)?;
        if vals.len() != plane.len() {
            return Err(Error::shape(format!(
                "field returned {} values for {} points",
                vals.len(),
                plane.len()
            )));
        }
        for v in vals {
            check_value(&spec, values.len(), v)?;
            values.push(v);
        }
    }
    Ok(DensityGrid { spec, values })
}
