use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Sphere { center: Point3, radius: f64 },
    /// Axis-aligned box.
    Box { center: Point3, half_extents: Point3 },
}

fn norm(v: Point3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

impl Primitive {
    pub fn sphere(center: Point3, radius: f64) -> Self {
        Primitive::Sphere { center, radius }
    }

    pub fn cuboid(center: Point3, half_extents: Point3) -> Self {
        Primitive::Box {
            center,
            half_extents,
        }
    }

    fn validate(&self) -> Result<()> {
        let (center, sizes): (Point3, Vec<f64>) = match *self {
            Primitive::Sphere { center, radius } => (center, vec![radius]),
            Primitive::Box {
                center,
                half_extents,
            } => (center, half_extents.to_vec()),
        };
        if center.iter().chain(&sizes).any(|v| !v.is_finite()) || sizes.iter().any(|&s| s <= 0.0)
        {
            return Err(Error::domain(format!(
                "primitive {self:?} needs finite parameters and positive sizes"
            )));
        }
        // The primitive must reach into [-1, 1]^3.
        let probe = center.map(|c| c.clamp(-1.0, 1.0));
        if self.distance(probe) > 0.0 {
            return Err(Error::domain(format!(
                "primitive {self:?} does not intersect the unit cube"
            )));
        }
        Ok(())
    }

    /// Unsigned distance, zero inside.
    pub fn distance(&self, q: Point3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius } => {
                let d = norm([q[0] - center[0], q[1] - center[1], q[2] - center[2]]);
                (d - radius).max(0.0)
            }
            Primitive::Box {
                center,
                half_extents,
            } => {
                let mut outside = [0.0; 3];
                for i in 0..3 {
                    outside[i] = ((q[i] - center[i]).abs() - half_extents[i]).max(0.0);
                }
                norm(outside)
            }
        }
    }

    /// Outward unit direction of increasing distance; inside, the direction to the nearest surface.
    pub fn normal(&self, q: Point3) -> Point3 {
        match *self {
            Primitive::Sphere { center, .. } => {
                let d = [q[0] - center[0], q[1] - center[1], q[2] - center[2]];
                let n = norm(d);
                if n > 0.0 {
                    d.map(|v| v / n)
                } else {
                    [1.0, 0.0, 0.0]
                }
            }
            Primitive::Box {
                center,
                half_extents,
            } => {
                let rel = [q[0] - center[0], q[1] - center[1], q[2] - center[2]];
                let excess: Vec<f64> = (0..3).map(|i| rel[i].abs() - half_extents[i]).collect();
                if excess.iter().any(|&e| e > 0.0) {
                    let mut v = [0.0; 3];
                    for i in 0..3 {
                        v[i] = excess[i].max(0.0) * rel[i].signum();
                    }
                    let n = norm(v);
                    v.map(|x| x / n)
                } else {
                    let axis = (0..3)
                        .max_by(|&a, &b| excess[a].total_cmp(&excess[b]))
                        .unwrap();
                    let mut v = [0.0; 3];
                    v[axis] = if rel[axis] >= 0.0 { 1.0 } else { -1.0 };
                    v
                }
            }
        }
    }
}

/// Union of primitives with a closed-form distance field.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticScene {
    primitives: Vec<Primitive>,
}

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::domain("scene needs at least one primitive"));
        }
        for p in &primitives {
            p.validate()?;
        }
        Ok(Self { primitives })
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    /// Named scenes used by the test suite and the CLI defaults.
    pub fn preset(name: &str) -> Result<Self> {
        let prims = match name {
            "sphere" => vec![Primitive::sphere([0.0, 0.0, 0.0], 0.25)],
            "sphere_box" => vec![
                Primitive::sphere([-0.35, 0.1, 0.0], 0.25),
                Primitive::cuboid([0.4, -0.2, 0.0], [0.15, 0.3, 0.2]),
            ],
            "pillars" => vec![
                Primitive::cuboid([-0.3, 0.0, 0.0], [0.12, 0.12, 0.6]),
                Primitive::cuboid([0.3, 0.15, 0.0], [0.12, 0.12, 0.6]),
                Primitive::sphere([0.0, -0.45, 0.0], 0.2),
            ],
            other => {
                return Err(Error::domain(format!(
                    "unknown scene preset `{other}` (known: sphere, sphere_box, pillars)"
                )))
            }
        };
        Self::new(prims)
    }

    pub fn distance(&self, q: Point3) -> f64 {
        self.primitives
            .iter()
            .map(|p| p.distance(q))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, q: Point3) -> bool {
        self.distance(q) == 0.0
    }

    /// Distance together with the outward normal of the closest primitive.
    pub fn distance_and_normal(&self, q: Point3) -> (f64, Point3) {
        let (d, p) = self
            .primitives
            .iter()
            .map(|p| (p.distance(q), p))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("scene is non-empty");
        (d, p.normal(q))
    }
}
