//! Static 3-D kd-tree stored implicitly in one array.
//!
//! Each subrange `[lo, hi)` larger than a leaf stores its splitting point at
//! the midpoint; points left of it have coordinate `<=` the split and points
//! right of it `>=`. Pruning compares the squared split offset against `r²`
//! using the same arithmetic as [`dist2`], so radius queries agree exactly
//! with a linear scan.

use super::analytic::Point3;

const LEAF: usize = 8;

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(mut points: Vec<Point3>) -> Self {
        let mut axes = vec![0u8; points.len()];
        let n = points.len();
        build_range(&mut points, &mut axes, 0, n);
        Self { points, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// True iff some stored point satisfies `dist2(q, p) <= r2`.
    pub fn any_within(&self, q: Point3, r2: f64) -> bool {
        self.any_in(q, r2, 0, self.points.len())
    }

    fn any_in(&self, q: Point3, r2: f64, lo: usize, hi: usize) -> bool {
        if hi - lo <= LEAF {
            return self.points[lo..hi].iter().any(|&p| dist2(q, p) <= r2);
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.points[mid];
        if dist2(q, p) <= r2 {
            return true;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.any_in(q, r2, near.0, near.1) || (diff * diff <= r2 && self.any_in(q, r2, far.0, far.1))
    }

    /// Squared distance to the nearest stored point, `INFINITY` when empty.
    pub fn nearest_dist2(&self, q: Point3) -> f64 {
        let mut best = f64::INFINITY;
        self.nearest_in(q, 0, self.points.len(), &mut best);
        best
    }

    fn nearest_in(&self, q: Point3, lo: usize, hi: usize, best: &mut f64) {
        if hi - lo <= LEAF {
            for &p in &self.points[lo..hi] {
                *best = best.min(dist2(q, p));
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.points[mid];
        *best = best.min(dist2(q, p));
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.nearest_in(q, near.0, near.1, best);
        if diff * diff <= *best {
            self.nearest_in(q, far.0, far.1, best);
        }
    }
}

fn build_range(points: &mut [Point3], axes: &mut [u8], lo: usize, hi: usize) {
    if hi - lo <= LEAF {
        return;
    }
    let slice = &mut points[lo..hi];
    let mut spread = [0.0; 3];
    for (axis, s) in spread.iter_mut().enumerate() {
        let (mn, mx) = slice
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
                (a.min(p[axis]), b.max(p[axis]))
            });
        *s = mx - mn;
    }
    let axis = (0..3)
        .max_by(|&a, &b| spread[a].total_cmp(&spread[b]))
        .unwrap();
    let mid = (hi - lo) / 2;
    slice.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    axes[lo + mid] = axis as u8;
    build_range(points, axes, lo, lo + mid);
    build_range(points, axes, lo + mid + 1, hi);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_any(points: &[Point3], q: Point3, r2: f64) -> bool {
        points.iter().any(|&p| dist2(q, p) <= r2)
    }

    #[test]
    fn empty_tree_never_matches() {
        let t = KdTree::build(vec![]);
        assert!(!t.any_within([0.0; 3], 100.0));
        assert_eq!(t.nearest_dist2([0.0; 3]), f64::INFINITY);
    }

    #[test]
    fn random_clouds_match_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let pts: Vec<Point3> = (0..5000)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let tree = KdTree::build(pts.clone());
        for _ in 0..2000 {
            let q = [rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)];
            let r: f64 = rng.gen_range(0.001..0.1);
            assert_eq!(tree.any_within(q, r * r), brute_any(&pts, q, r * r));
            let nearest = pts.iter().map(|&p| dist2(q, p)).fold(f64::INFINITY, f64::min);
            assert_eq!(tree.nearest_dist2(q), nearest);
        }
    }

    #[test]
    fn boundary_distance_is_inclusive() {
        // Duplicate coordinates on the split axis and exact-r hits.
        let pts: Vec<Point3> = (0..40).map(|i| [0.25, (i as f64) * 0.05, 0.0]).collect();
        let tree = KdTree::build(pts.clone());
        let q = [0.0, 0.5, 0.0];
        let r2 = dist2(q, [0.25, 0.5, 0.0]);
        assert!(tree.any_within(q, r2));
        assert!(!tree.any_within(q, r2 * (1.0 - 1e-12)));
    }

    proptest! {
        #[test]
        fn lattice_queries_match_linear_scan(
            seed in 0u64..1000,
            qx in -1.0f64..1.0, qy in -1.0f64..1.0, qz in -1.0f64..1.0,
            r in 0.0f64..0.3
        ) {
            // Lattice coordinates produce many exact ties on split axes.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Point3> = (0..300)
                .map(|_| [
                    rng.gen_range(-8i32..8) as f64 / 8.0,
                    rng.gen_range(-8i32..8) as f64 / 8.0,
                    rng.gen_range(-8i32..8) as f64 / 8.0,
                ])
                .collect();
            let tree = KdTree::build(pts.clone());
            let q = [qx, qy, qz];
            prop_assert_eq!(tree.any_within(q, r * r), brute_any(&pts, q, r * r));
        }
    }
}
