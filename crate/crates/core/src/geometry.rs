//! Small geometric primitives shared by the simulator, tracker and validator.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Axis-aligned box given by its center and half extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub center: Vec3,
    pub half_extents: Vec3,
}

impl Aabb {
    pub fn new(center: Vec3, half_extents: Vec3) -> Self {
        Self {
            center,
            half_extents,
        }
    }

    pub fn min(&self) -> Vec3 {
        self.center - self.half_extents
    }

    pub fn max(&self) -> Vec3 {
        self.center + self.half_extents
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    /// Slab test. Returns the entry distance along `dir` (or 0 when the
    /// origin is inside), `None` on a miss.
    pub fn ray_intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        let lo = self.min();
        let hi = self.max();
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for axis in 0..3 {
            let o = origin[axis];
            let d = dir[axis];
            if d.abs() < 1e-300 {
                if o < lo[axis] || o > hi[axis] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let mut t0 = (lo[axis] - o) * inv;
            let mut t1 = (hi[axis] - o) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_near = t_near.max(t0);
            t_far = t_far.min(t1);
            if t_near > t_far {
                return None;
            }
        }
        if t_far < 0.0 {
            return None;
        }
        Some(t_near.max(0.0))
    }

    /// Closest point of the box to `p` (p itself when inside).
    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        let lo = self.min();
        let hi = self.max();
        Vec3::new(
            p.x.clamp(lo.x, hi.x),
            p.y.clamp(lo.y, hi.y),
            p.z.clamp(lo.z, hi.z),
        )
    }

    pub fn distance_to(&self, p: &Vec3) -> f64 {
        (self.closest_point(p) - p).norm()
    }

    /// Euclidean gap between two boxes, 0 when they overlap.
    pub fn gap(&self, other: &Aabb) -> f64 {
        let d = (self.center - other.center).abs() - self.half_extents - other.half_extents;
        d.map(|c| c.max(0.0)).norm()
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Azimuth and elevation (radians) of a direction in a frame with x
/// forward, y left, z up.
pub fn azimuth_elevation(v: &Vec3) -> (f64, f64) {
    let az = v.y.atan2(v.x);
    let el = v.z.atan2((v.x * v.x + v.y * v.y).sqrt());
    (az, el)
}
