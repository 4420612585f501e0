//! Static 3-d tree for exact radius queries.

use crate::geometry::Vec3;

const LEAF: usize = 8;

/// Balanced kd-tree over a fixed point set. Nodes are stored implicitly: the
/// median of each index range is the splitting point.
#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<u32>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        assert!(points.len() < u32::MAX as usize, "too many points");
        let mut tree = Self {
            order: (0..points.len() as u32).collect(),
            axis: vec![0; points.len()],
            points,
        };
        tree.build(0, tree.points.len());
        tree
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF {
            return;
        }
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[lo..hi] {
            let p = &self.points[i as usize];
            min = min.inf(p);
            max = max.sup(p);
        }
        let axis = (max - min).imax();
        let mid = (lo + hi) / 2;
        let pts = &self.points;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            pts[a as usize][axis].total_cmp(&pts[b as usize][axis])
        });
        self.axis[mid] = axis as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Indices of all points `p` with `|p - q|^2 <= r^2`, ascending.
    pub fn within(&self, q: &Vec3, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if r >= 0.0 {
            self.visit(0, self.points.len(), q, r * r, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn visit(&self, lo: usize, hi: usize, q: &Vec3, r2: f64, out: &mut Vec<usize>) {
        if hi - lo <= LEAF {
            for &i in &self.order[lo..hi] {
                if (self.points[i as usize] - q).norm_squared() <= r2 {
                    out.push(i as usize);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = self.axis[mid] as usize;
        let i = self.order[mid] as usize;
        let pivot = &self.points[i];
        if (pivot - q).norm_squared() <= r2 {
            out.push(i);
        }
        let diff = q[axis] - pivot[axis];
        if diff <= 0.0 || diff * diff <= r2 {
            self.visit(lo, mid, q, r2, out);
        }
        if diff >= 0.0 || diff * diff <= r2 {
            self.visit(mid + 1, hi, q, r2, out);
        }
    }
}

/// Reference scan with the same predicate as [`KdTree::within`].
pub fn brute_force_within(points: &[Vec3], q: &Vec3, r: f64) -> Vec<usize> {
    if r < 0.0 {
        return Vec::new();
    }
    let r2 = r * r;
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| (*p - q).norm_squared() <= r2)
        .map(|(i, _)| i)
        .collect()
}
