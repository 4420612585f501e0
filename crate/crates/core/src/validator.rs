//! Trajectory validation: a Hermite spline through the state history, the
//! point cloud expected along it, and voxel IoU against the LF frame.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::integrator::Frame;
use crate::kdtree::KdTree;
use crate::scene::UgvSchedule;
use crate::sensing::DensityModel;
use crate::spline::{HermiteTrajectory, Knot};
use crate::state::MavState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidatorConfig {
    pub voxel_size: f64,
    pub threshold: f64,
    /// Time step of the sweep along the spline.
    pub sweep_step: f64,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            threshold: 0.5,
            sweep_step: 0.005,
        }
    }
}

impl ValidatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) {
            return Err(Error::config("validator.voxel_size", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("validator.threshold", "must lie in [0, 1]"));
        }
        if !(self.sweep_step > 0.0) {
            return Err(Error::config("validator.sweep_step", "must be positive"));
        }
        Ok(())
    }
}

/// Everything about the run the validator needs besides the frame and the
/// history.
#[derive(Debug, Clone, Copy)]
pub struct ValidationContext<'a> {
    pub model: &'a DensityModel,
    pub ugv: &'a UgvSchedule,
    pub sensor_height: f64,
    pub half_extents: Vec3,
    pub corridor_radius: f64,
    pub f_lf: f64,
}

/// Hermite spline with one knot per history state.
pub fn fit_spline(history: &[MavState]) -> Result<HermiteTrajectory> {
    HermiteTrajectory::new(history.iter().map(|s| Knot { t: s.t, p: s.p, v: s.v }).collect())
}

/// Set of occupied voxels, keyed by integer world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelCloud {
    voxel_size: f64,
    cells: BTreeSet<[i64; 3]>,
}

impl VoxelCloud {
    pub fn new(voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::config("validator.voxel_size", "must be positive"));
        }
        Ok(Self {
            voxel_size,
            cells: BTreeSet::new(),
        })
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>, voxel_size: f64) -> Result<Self> {
        let mut c = Self::new(voxel_size)?;
        for p in points {
            c.insert(p);
        }
        Ok(c)
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn key(&self, p: &Vec3) -> [i64; 3] {
        let s = self.voxel_size;
        [(p.x / s).floor() as i64, (p.y / s).floor() as i64, (p.z / s).floor() as i64]
    }

    pub fn insert(&mut self, p: &Vec3) {
        let k = self.key(p);
        self.cells.insert(k);
    }

    pub fn insert_key(&mut self, k: [i64; 3]) {
        self.cells.insert(k);
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &[i64; 3]> {
        self.cells.iter()
    }

    pub fn centers(&self) -> Vec<Vec3> {
        let s = self.voxel_size;
        self.cells
            .iter()
            .map(|k| Vec3::new((k[0] as f64 + 0.5) * s, (k[1] as f64 + 0.5) * s, (k[2] as f64 + 0.5) * s))
            .collect()
    }
}

pub fn iou(a: &VoxelCloud, b: &VoxelCloud) -> Result<f64> {
    if a.voxel_size != b.voxel_size {
        return Err(Error::Range(format!(
            "voxel sizes differ: {} vs {}",
            a.voxel_size, b.voxel_size
        )));
    }
    let inter = a.cells.intersection(&b.cells).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Surface samples of one box face, relative to the box center.
struct Face {
    normal: Vec3,
    offset: Vec3,
    area: f64,
    samples: Vec<Vec3>,
}

fn box_faces(h: &Vec3, spacing: f64) -> Vec<Face> {
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
        let nu = ((2.0 * h[u] / spacing).ceil() as usize).max(1);
        let nw = ((2.0 * h[w] / spacing).ceil() as usize).max(1);
        for sign in [-1.0, 1.0] {
            let mut normal = Vec3::zeros();
            normal[axis] = sign;
            let offset = normal * h[axis];
            let mut samples = Vec::with_capacity((nu + 1) * (nw + 1));
            for i in 0..=nu {
                for j in 0..=nw {
                    let mut p = offset;
                    p[u] = -h[u] + 2.0 * h[u] * i as f64 / nu as f64;
                    p[w] = -h[w] + 2.0 * h[w] * j as f64 / nw as f64;
                    samples.push(p);
                }
            }
            faces.push(Face {
                normal,
                offset,
                area: 4.0 * h[u] * h[w],
                samples,
            });
        }
    }
    faces
}

/// Spline sample times covering `[t0, t1]` clipped to the trajectory.
fn sweep_times(traj: &HermiteTrajectory, t0: f64, t1: f64, step: f64) -> Result<Vec<f64>> {
    let a = t0.max(traj.start_time());
    let b = t1.min(traj.end_time());
    if !(b >= a) {
        return Err(Error::Range(format!(
            "trajectory [{}, {}] does not overlap the window [{t0}, {t1}]",
            traj.start_time(),
            traj.end_time()
        )));
    }
    let n = ((b - a) / step).floor() as usize;
    let mut ts: Vec<f64> = (0..=n).map(|k| a + k as f64 * step).collect();
    if *ts.last().unwrap() < b {
        ts.push(b);
    }
    Ok(ts)
}

/// Voxels the vehicle's sensor-facing surfaces are expected to return while
/// following `traj` over `[t0, t1]`. The box is placed so that the centroid
/// of its visible surface lies on the spline, mirroring how estimates are
/// formed. Times where fewer than one return is expected contribute nothing.
pub fn expected_cloud(
    traj: &HermiteTrajectory,
    ctx: &ValidationContext<'_>,
    t0: f64,
    t1: f64,
    cfg: &ValidatorConfig,
) -> Result<VoxelCloud> {
    if !ctx.model.is_calibrated() {
        return Err(Error::State("density model is not calibrated".into()));
    }
    let mut cloud = VoxelCloud::new(cfg.voxel_size)?;
    let faces = box_faces(&ctx.half_extents, cfg.voxel_size / 2.0);
    let diameter = 2.0 * ctx.half_extents.x.max(ctx.half_extents.y);
    for t in sweep_times(traj, t0, t1, cfg.sweep_step)? {
        let p = traj.position(t)?;
        let v = traj.velocity(t)?;
        let origin = ctx.ugv.state_at(t).sensor_origin(ctx.sensor_height);
        let to_sensor = origin - p;
        let d = to_sensor.norm();
        if d > ctx.model.max_distance() || d == 0.0 {
            continue;
        }
        let f_eff = ctx.f_lf.max(v.norm() / diameter);
        let mu = ctx.model.expected_count(d, f_eff)?.mu;
        if mu < 1.0 {
            continue;
        }
        let u = to_sensor / d;
        let visible: Vec<(&Face, f64)> = faces
            .iter()
            .filter_map(|f| {
                let c = f.normal.dot(&u);
                (c > 0.0).then_some((f, c * f.area))
            })
            .collect();
        let total: f64 = visible.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            continue;
        }
        let shift = visible.iter().map(|(f, w)| f.offset * *w).sum::<Vec3>() / total;
        let center = p - shift;
        // Returns split over faces by projected area; grazing faces that
        // would not get a single return are left out.
        for (f, _) in visible.iter().filter(|(_, w)| mu * w / total >= 1.0) {
            for s in &f.samples {
                cloud.insert(&(center + s));
            }
        }
    }
    Ok(cloud)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub t_start: f64,
    pub t_end: f64,
    pub iou: f64,
    pub threshold: f64,
    pub accepted: bool,
    pub n_expected_voxels: usize,
    pub n_observed_voxels: usize,
    pub n_knots: usize,
    /// Mean distance from observed voxel centers to the spline samples.
    pub mean_voxel_distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Validation {
    pub report: ValidationReport,
    pub expected: VoxelCloud,
    pub observed: VoxelCloud,
}

/// Voxelizes the LF points near the spline and compares them with the
/// expected cloud. `lf_frame` must hold world-frame points.
pub fn validate(
    lf_frame: &Frame,
    history: &[MavState],
    ctx: &ValidationContext<'_>,
    cfg: &ValidatorConfig,
) -> Result<Validation> {
    cfg.validate()?;
    let (t0, t1) = (lf_frame.t_start, lf_frame.t_end());
    if history.is_empty() {
        return Err(Error::Insufficient("empty history window".into()));
    }
    let traj = fit_spline(history)?;
    let expected = expected_cloud(&traj, ctx, t0, t1, cfg)?;

    let samples: Vec<Vec3> = sweep_times(&traj, t0, t1, cfg.sweep_step)?
        .into_iter()
        .map(|t| traj.position(t))
        .collect::<Result<_>>()?;
    let points: Vec<Vec3> = lf_frame.world_points(ctx.sensor_height).collect();
    let index = KdTree::new(points);
    let mut hit = vec![false; index.len()];
    for s in &samples {
        for i in index.within(s, ctx.corridor_radius) {
            hit[i] = true;
        }
    }
    let observed = VoxelCloud::from_points(
        index.points().iter().zip(&hit).filter(|(_, h)| **h).map(|(p, _)| p),
        cfg.voxel_size,
    )?;

    let centers = observed.centers();
    let mean_voxel_distance = (!centers.is_empty()).then(|| {
        let tree = KdTree::new(samples.clone());
        centers
            .iter()
            .map(|c| nearest_distance(&tree, c))
            .sum::<f64>()
            / centers.len() as f64
    });

    let value = iou(&expected, &observed)?;
    Ok(Validation {
        report: ValidationReport {
            t_start: t0,
            t_end: t1,
            iou: value,
            threshold: cfg.threshold,
            accepted: value > cfg.threshold,
            n_expected_voxels: expected.len(),
            n_observed_voxels: observed.len(),
            n_knots: history.len(),
            mean_voxel_distance,
        },
        expected,
        observed,
    })
}

/// Distance from `q` to its nearest indexed point, by growing radius.
fn nearest_distance(tree: &KdTree, q: &Vec3) -> f64 {
    let mut r = 0.05;
    loop {
        let found = tree.within(q, r);
        if let Some(d) = found
            .iter()
            .map(|&i| (tree.points()[i] - q).norm())
            .min_by(|a, b| a.total_cmp(b))
        {
            return d;
        }
        r *= 2.0;
        if r > 1e6 {
            return f64::INFINITY;
        }
    }
}
