//! Synthetic world and ray-casting lidar simulator.
//!
//! The world is a ground plane, a set of axis-aligned boxes (walls, columns)
//! and one small box standing in for the aerial vehicle, which follows a
//! scripted trajectory. Rays from [`crate::scan`] are cast against it to
//! build a timestamped point stream in the sensor frame.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::scan::{sample_count, RaySample, ScanPattern, ScanPatternConfig};
use crate::spline::{HermiteTrajectory, Knot};
use crate::state::{SensorTransform, UgvState};

/// Sensor and target poses are held constant over emission blocks of this
/// length.
pub const POSE_BLOCK: f64 = 250e-6;

/// Ground-truth origin of a simulated return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PointSource {
    Ground,
    Obstacle(u16),
    Mav,
    Clutter,
}

/// One lidar return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub t: f64,
    pub p: Vec3,
    pub source: PointSource,
}

/// Piecewise-linear speed profile: ramps from `start` to `end` over
/// `ramp_time` seconds, then holds `end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ramp {
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub ramp_time: f64,
}

impl Ramp {
    pub fn constant(v: f64) -> Self {
        Self {
            start: v,
            end: v,
            ramp_time: 0.0,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        if self.ramp_time > 0.0 && t < self.ramp_time {
            self.start + (self.end - self.start) * t / self.ramp_time
        } else {
            self.end
        }
    }

    /// Integral of the profile over `[0, t]`.
    pub fn integral(&self, t: f64) -> f64 {
        if self.ramp_time > 0.0 {
            if t <= self.ramp_time {
                self.start * t + (self.end - self.start) * t * t / (2.0 * self.ramp_time)
            } else {
                0.5 * (self.start + self.end) * self.ramp_time + self.end * (t - self.ramp_time)
            }
        } else {
            self.end * t
        }
    }

    /// Smallest t with `integral(t) = s` for a nonnegative profile.
    fn time_to_cover(&self, s: f64) -> Option<f64> {
        if self.ramp_time > 0.0 {
            let s_ramp = self.integral(self.ramp_time);
            if s <= s_ramp {
                let a = (self.end - self.start) / (2.0 * self.ramp_time);
                let b = self.start;
                if a.abs() < 1e-15 {
                    return (b > 0.0).then(|| s / b);
                }
                let disc = b * b + 4.0 * a * s;
                return Some((-b + disc.max(0.0).sqrt()) / (2.0 * a));
            }
            (self.end > 0.0).then(|| self.ramp_time + (s - s_ramp) / self.end)
        } else {
            (self.end > 0.0).then(|| s / self.end)
        }
    }
}

/// Scripted motion of the aerial vehicle. Time starts at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectoryScript {
    /// Straight flight from `start` to `end` with a speed profile in m/s.
    Line { start: Vec3, end: Vec3, speed: Ramp },
    /// Horizontal circle with an angular-speed profile in rad/s.
    Circle {
        center: Vec3,
        radius: f64,
        angular_speed: Ramp,
        #[serde(default)]
        start_angle: f64,
        duration: f64,
    },
    /// Hermite spline through (t, position, velocity) knots.
    WaypointSpline { knots: HermiteTrajectory },
}

impl TrajectoryScript {
    pub fn hover(position: Vec3, duration: f64) -> Self {
        TrajectoryScript::WaypointSpline {
            knots: HermiteTrajectory::new(vec![
                Knot {
                    t: 0.0,
                    p: position,
                    v: Vec3::zeros(),
                },
                Knot {
                    t: duration,
                    p: position,
                    v: Vec3::zeros(),
                },
            ])
            .expect("hover needs a positive duration"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TrajectoryScript::Line { start, end, speed } => {
                if (end - start).norm() <= 0.0 {
                    return Err(Error::config("trajectory.end", "line must have positive length"));
                }
                if speed.start < 0.0 || speed.end <= 0.0 || speed.ramp_time < 0.0 {
                    return Err(Error::config(
                        "trajectory.speed",
                        "speeds must be nonnegative with a positive final speed",
                    ));
                }
            }
            TrajectoryScript::Circle {
                radius,
                duration,
                angular_speed,
                ..
            } => {
                if !(*radius > 0.0) {
                    return Err(Error::config("trajectory.radius", "must be positive"));
                }
                if !(*duration > 0.0) {
                    return Err(Error::config("trajectory.duration", "must be positive"));
                }
                if angular_speed.ramp_time < 0.0 {
                    return Err(Error::config(
                        "trajectory.angular_speed.ramp_time",
                        "must be nonnegative",
                    ));
                }
            }
            TrajectoryScript::WaypointSpline { .. } => {}
        }
        Ok(())
    }

    /// Time domain `[start, end]` of the script.
    pub fn time_span(&self) -> (f64, f64) {
        match self {
            TrajectoryScript::Line { start, end, speed } => {
                let len = (end - start).norm();
                (0.0, speed.time_to_cover(len).unwrap_or(f64::INFINITY))
            }
            TrajectoryScript::Circle { duration, .. } => (0.0, *duration),
            TrajectoryScript::WaypointSpline { knots } => (knots.start_time(), knots.end_time()),
        }
    }

    pub fn duration(&self) -> f64 {
        self.time_span().1
    }

    /// Net angle swept by a circle script at time t, radians.
    pub fn swept_angle(&self, t: f64) -> Option<f64> {
        match self {
            TrajectoryScript::Circle { angular_speed, .. } => Some(angular_speed.integral(t)),
            _ => None,
        }
    }

    /// Speed of the scripted motion at time t.
    pub fn speed_at(&self, t: f64) -> Result<f64> {
        eval_trajectory(self, t).map(|(_, v)| v.norm())
    }
}

/// Exact position and velocity of the script at time `t`.
pub fn eval_trajectory(script: &TrajectoryScript, t: f64) -> Result<(Vec3, Vec3)> {
    let (t0, t1) = script.time_span();
    // Allow a hair of slack at the end for times computed by accumulation.
    if !(t >= t0 && t <= t1 + 1e-9) {
        return Err(Error::Range(format!(
            "t = {t} outside trajectory span [{t0}, {t1}]"
        )));
    }
    match script {
        TrajectoryScript::Line { start, end, speed } => {
            let delta = end - start;
            let len = delta.norm();
            let dir = delta / len;
            let s = speed.integral(t).min(len);
            Ok((start + dir * s, dir * speed.value(t)))
        }
        TrajectoryScript::Circle {
            center,
            radius,
            angular_speed,
            start_angle,
            ..
        } => {
            let theta = start_angle + angular_speed.integral(t);
            let omega = angular_speed.value(t);
            let (s, c) = theta.sin_cos();
            Ok((
                center + Vec3::new(radius * c, radius * s, 0.0),
                Vec3::new(-radius * omega * s, radius * omega * c, 0.0),
            ))
        }
        TrajectoryScript::WaypointSpline { knots } => {
            let t = t.min(knots.end_time());
            Ok((knots.position(t)?, knots.velocity(t)?))
        }
    }
}

fn default_mav_half_extents() -> Vec3 {
    Vec3::new(0.09, 0.09, 0.025)
}

fn default_mav_reflectivity() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MavBody {
    #[serde(default = "default_mav_half_extents")]
    pub half_extents: Vec3,
    #[serde(default = "default_mav_reflectivity")]
    pub reflectivity: f64,
    pub trajectory: TrajectoryScript,
    /// The vehicle disappears from the scene after this time.
    #[serde(default)]
    pub visible_until: Option<f64>,
}

impl MavBody {
    pub fn new(trajectory: TrajectoryScript) -> Self {
        Self {
            half_extents: default_mav_half_extents(),
            reflectivity: default_mav_reflectivity(),
            trajectory,
            visible_until: None,
        }
    }

    pub fn volume_cm3(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z * 1e6
    }

    /// Horizontal extent used as the vehicle "diameter".
    pub fn diameter(&self) -> f64 {
        2.0 * self.half_extents.x.max(self.half_extents.y)
    }

    pub fn is_visible(&self, t: f64) -> bool {
        self.visible_until.is_none_or(|end| t < end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::config("scene.mav.half_extents", "must be strictly positive"));
        }
        let vol = self.volume_cm3();
        if !(100.0..=2000.0).contains(&vol) {
            return Err(Error::config(
                "scene.mav.half_extents",
                format!("bounding-box volume {vol:.0} cm^3 outside [100, 2000]"),
            ));
        }
        if !(0.0..=1.0).contains(&self.reflectivity) {
            return Err(Error::config("scene.mav.reflectivity", "must lie in [0, 1]"));
        }
        self.trajectory.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: Vec3,
    pub half_extents: Vec3,
    #[serde(default = "default_obstacle_reflectivity")]
    pub reflectivity: f64,
}

fn default_obstacle_reflectivity() -> f64 {
    0.6
}

impl Obstacle {
    pub fn aabb(&self) -> Aabb {
        Aabb::new(self.center, self.half_extents)
    }
}

/// Range noise, reflectivity-dependent dropout and near-wall clutter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Standard deviation of the additive Gaussian range error, meters.
    pub range_sigma: f64,
    /// Dropout probability is `clamp(alpha * d / (reflectivity * max_range), 0, max_prob)`.
    pub dropout_alpha: f64,
    pub dropout_max_range: f64,
    pub dropout_max_prob: f64,
    /// Spurious points per second for each vehicle/obstacle pair closer than
    /// `clutter_trigger_distance`.
    pub clutter_rate: f64,
    pub clutter_trigger_distance: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            range_sigma: 0.02,
            dropout_alpha: 0.5,
            dropout_max_range: 90.0,
            dropout_max_prob: 0.95,
            clutter_rate: 40.0,
            clutter_trigger_distance: 1.0,
        }
    }
}

impl NoiseConfig {
    /// Exact geometry: no range error, no dropout, no clutter.
    pub fn noise_free() -> Self {
        Self {
            range_sigma: 0.0,
            dropout_alpha: 0.0,
            clutter_rate: 0.0,
            ..Default::default()
        }
    }

    pub fn dropout_prob(&self, reflectivity: f64, distance: f64) -> f64 {
        if self.dropout_alpha <= 0.0 {
            return 0.0;
        }
        if reflectivity <= 0.0 {
            return self.dropout_max_prob;
        }
        (self.dropout_alpha * distance / (reflectivity * self.dropout_max_range))
            .clamp(0.0, self.dropout_max_prob)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range_sigma >= 0.0) {
            return Err(Error::config("scene.noise.range_sigma", "must be nonnegative"));
        }
        if !(self.dropout_alpha >= 0.0) {
            return Err(Error::config("scene.noise.dropout_alpha", "must be nonnegative"));
        }
        if !(self.dropout_max_range > 0.0) {
            return Err(Error::config("scene.noise.dropout_max_range", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.dropout_max_prob) {
            return Err(Error::config("scene.noise.dropout_max_prob", "must lie in [0, 1]"));
        }
        if !(self.clutter_rate >= 0.0) {
            return Err(Error::config("scene.noise.clutter_rate", "must be nonnegative"));
        }
        if !(self.clutter_trigger_distance >= 0.0) {
            return Err(Error::config(
                "scene.noise.clutter_trigger_distance",
                "must be nonnegative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    /// Height of the ground plane; `None` for free space.
    #[serde(default = "default_ground")]
    pub ground_z: Option<f64>,
    #[serde(default = "default_ground_reflectivity")]
    pub ground_reflectivity: f64,
    /// Height of the lidar above the world origin (mounted on the UGV).
    #[serde(default = "default_sensor_height")]
    pub sensor_height: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub mav: Option<MavBody>,
    #[serde(default)]
    pub noise: NoiseConfig,
}

fn default_ground() -> Option<f64> {
    Some(0.0)
}

fn default_ground_reflectivity() -> f64 {
    0.5
}

fn default_sensor_height() -> f64 {
    0.9
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            ground_z: default_ground(),
            ground_reflectivity: default_ground_reflectivity(),
            sensor_height: default_sensor_height(),
            obstacles: Vec::new(),
            mav: None,
            noise: NoiseConfig::default(),
        }
    }
}

impl Scene {
    /// No geometry at all.
    pub fn empty() -> Self {
        Self {
            ground_z: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.half_extents.iter().any(|h| !(*h > 0.0)) {
                return Err(Error::config(
                    format!("scene.obstacles[{i}].half_extents"),
                    "must be strictly positive",
                ));
            }
            if !(0.0..=1.0).contains(&o.reflectivity) {
                return Err(Error::config(
                    format!("scene.obstacles[{i}].reflectivity"),
                    "must lie in [0, 1]",
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.ground_reflectivity) {
            return Err(Error::config("scene.ground_reflectivity", "must lie in [0, 1]"));
        }
        if let Some(mav) = &self.mav {
            mav.validate()?;
        }
        self.noise.validate()
    }

    pub fn mav_box(&self, position: Vec3) -> Option<Aabb> {
        self.mav.as_ref().map(|m| Aabb::new(position, m.half_extents))
    }

    /// Vehicle position at `t` if it is present in the scene then.
    pub fn mav_position(&self, t: f64) -> Result<Option<Vec3>> {
        match &self.mav {
            Some(m) if m.is_visible(t) => Ok(Some(eval_trajectory(&m.trajectory, t)?.0)),
            _ => Ok(None),
        }
    }
}

/// Closest point pair between two boxes: (point on `a`, point on `b`).
fn closest_points(a: &Aabb, b: &Aabb) -> (Vec3, Vec3) {
    let (amin, amax, bmin, bmax) = (a.min(), a.max(), b.min(), b.max());
    let mut pa = Vec3::zeros();
    let mut pb = Vec3::zeros();
    for k in 0..3 {
        let lo = amin[k].max(bmin[k]);
        let hi = amax[k].min(bmax[k]);
        if lo <= hi {
            pa[k] = 0.5 * (lo + hi);
            pb[k] = pa[k];
        } else if amax[k] < bmin[k] {
            pa[k] = amax[k];
            pb[k] = bmin[k];
        } else {
            pa[k] = amin[k];
            pb[k] = bmax[k];
        }
    }
    (pa, pb)
}

/// Per-block state of the caster: the vehicle box and active clutter segments.
#[derive(Debug, Clone, Default)]
pub struct BlockGeometry {
    mav: Option<Aabb>,
    clutter_segments: Vec<(Vec3, Vec3)>,
}

/// Ray caster bound to a scene.
#[derive(Debug, Clone)]
pub struct RayCaster {
    scene: Scene,
    obstacle_boxes: Vec<Aabb>,
    clutter_prob_per_segment: f64,
}

impl RayCaster {
    /// `point_rate` converts the clutter rate (points per second) into a
    /// per-ray probability.
    pub fn new(scene: &Scene, point_rate: f64) -> Self {
        Self {
            obstacle_boxes: scene.obstacles.iter().map(Obstacle::aabb).collect(),
            clutter_prob_per_segment: scene.noise.clutter_rate / point_rate,
            scene: scene.clone(),
        }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn block_geometry(&self, mav_position: Option<Vec3>) -> BlockGeometry {
        let mav = mav_position.and_then(|p| self.scene.mav_box(p));
        let mut clutter_segments = Vec::new();
        if let Some(mb) = &mav {
            if self.clutter_prob_per_segment > 0.0 {
                for ob in &self.obstacle_boxes {
                    if mb.gap(ob) <= self.scene.noise.clutter_trigger_distance {
                        clutter_segments.push(closest_points(mb, ob));
                    }
                }
            }
        }
        BlockGeometry {
            mav,
            clutter_segments,
        }
    }

    /// Noise-free nearest hit: (range, reflectivity, source).
    #[inline]
    pub fn nearest_hit(
        &self,
        geometry: &BlockGeometry,
        origin: &Vec3,
        dir_world: &Vec3,
    ) -> Option<(f64, f64, PointSource)> {
        let mut best: Option<(f64, f64, PointSource)> = None;
        if let Some(gz) = self.scene.ground_z {
            if dir_world.z < 0.0 && origin.z > gz {
                let t = (gz - origin.z) / dir_world.z;
                best = Some((t, self.scene.ground_reflectivity, PointSource::Ground));
            }
        }
        for (i, ob) in self.obstacle_boxes.iter().enumerate() {
            if let Some(t) = ob.ray_intersect(origin, dir_world) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((
                        t,
                        self.scene.obstacles[i].reflectivity,
                        PointSource::Obstacle(i as u16),
                    ));
                }
            }
        }
        if let (Some(mb), Some(mav)) = (&geometry.mav, &self.scene.mav) {
            if let Some(t) = mb.ray_intersect(origin, dir_world) {
                if best.is_none_or(|b| t < b.0) {
                    best = Some((t, mav.reflectivity, PointSource::Mav));
                }
            }
        }
        best.filter(|b| b.0 > 0.0)
    }

    /// Casts one ray from a sensor at `sensor` (planar pose) and applies the
    /// noise model.
    pub fn cast<R: Rng + ?Sized>(
        &self,
        geometry: &BlockGeometry,
        sensor: &SensorTransform,
        sample: &RaySample,
        rng: &mut R,
    ) -> Option<LidarPoint> {
        let noise = &self.scene.noise;
        if !geometry.clutter_segments.is_empty() {
            let p_total = self.clutter_prob_per_segment * geometry.clutter_segments.len() as f64;
            let u: f64 = rng.gen();
            if u < p_total {
                let k = ((u / p_total) * geometry.clutter_segments.len() as f64) as usize;
                let (a, b) = geometry.clutter_segments[k.min(geometry.clutter_segments.len() - 1)];
                let lambda: f64 = rng.gen();
                let world = a + (b - a) * lambda;
                return Some(LidarPoint {
                    t: sample.t,
                    p: sensor.to_sensor(&world),
                    source: PointSource::Clutter,
                });
            }
        }
        let dir_world = sensor.rotate_to_world(&sample.direction);
        let (range, reflectivity, source) = self.nearest_hit(geometry, &sensor.origin, &dir_world)?;
        if noise.dropout_alpha > 0.0 {
            let p_drop = noise.dropout_prob(reflectivity, range);
            if rng.gen::<f64>() < p_drop {
                return None;
            }
        }
        let measured = if noise.range_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            (range + noise.range_sigma * z).max(0.0)
        } else {
            range
        };
        Some(LidarPoint {
            t: sample.t,
            p: sample.direction * measured,
            source,
        })
    }
}

/// Casts a single ray against `scene`. `point_rate` is the emission rate the
/// ray belongs to, which scales the near-wall clutter probability.
pub fn cast_ray<R: Rng + ?Sized>(
    scene: &Scene,
    sensor: &UgvState,
    sample: &RaySample,
    mav_position: Option<Vec3>,
    point_rate: f64,
    rng: &mut R,
) -> Option<LidarPoint> {
    let caster = RayCaster::new(scene, point_rate);
    let geometry = caster.block_geometry(mav_position);
    caster.cast(&geometry, &SensorTransform::new(sensor, scene.sensor_height), sample, rng)
}

/// Piecewise-constant-velocity motion of the ground vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UgvSchedule {
    segments: Vec<(f64, UgvState)>,
}

impl UgvSchedule {
    pub fn stationary(pose: UgvState) -> Self {
        Self {
            segments: vec![(
                0.0,
                UgvState {
                    vx: 0.0,
                    vy: 0.0,
                    yaw_rate: 0.0,
                    ..pose
                },
            )],
        }
    }

    /// The state holds its velocity from t = 0 on.
    pub fn constant_velocity(initial: UgvState) -> Self {
        Self {
            segments: vec![(0.0, initial)],
        }
    }

    pub fn empty() -> Self {
        Self {
            segments: Vec::new(),
        }
    }

    /// Appends a segment starting at `t` (must not precede the last one).
    pub fn push(&mut self, t: f64, state: UgvState) {
        debug_assert!(self.segments.last().is_none_or(|s| s.0 <= t));
        if let Some(last) = self.segments.last_mut() {
            if last.0 == t {
                last.1 = state;
                return;
            }
        }
        self.segments.push((t, state));
    }

    pub fn segments(&self) -> &[(f64, UgvState)] {
        &self.segments
    }

    pub fn state_at(&self, t: f64) -> UgvState {
        let i = self.segments.partition_point(|s| s.0 <= t).saturating_sub(1);
        match self.segments.get(i) {
            Some((t0, s)) => s.advanced((t - t0).max(0.0)),
            None => UgvState::default(),
        }
    }

    /// Start time of the segment after `t`, if any.
    fn next_change_after(&self, t: f64) -> Option<f64> {
        self.segments.iter().map(|s| s.0).find(|&s| s > t)
    }
}

/// Ground-truth sample: target state (when present) and sensor-carrier pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthRow {
    pub t: f64,
    pub mav: Option<(Vec3, Vec3)>,
    pub ugv: UgvState,
}

/// Incremental point-stream generator. Sample `i` is emitted at
/// `i / point_rate`; each call to [`StreamSimulator::advance`] emits every
/// sample before the requested time.
pub struct StreamSimulator {
    caster: RayCaster,
    pattern: ScanPattern,
    rng: ChaCha8Rng,
    next_index: u64,
    block_len: u64,
}

impl StreamSimulator {
    pub fn new(scene: &Scene, cfg: &ScanPatternConfig, seed: u64) -> Result<Self> {
        scene.validate()?;
        let pattern = ScanPattern::new(cfg)?;
        Ok(Self {
            caster: RayCaster::new(scene, cfg.point_rate),
            pattern,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_index: 0,
            block_len: (cfg.point_rate * POSE_BLOCK).ceil().max(1.0) as u64,
        })
    }

    pub fn scene(&self) -> &Scene {
        self.caster.scene()
    }

    /// Emission time of the next sample.
    pub fn now(&self) -> f64 {
        self.pattern.time_of(self.next_index)
    }

    fn index_at(&self, t: f64) -> u64 {
        // First index whose emission time is >= t.
        let mut i = (t / self.pattern.period()).ceil().max(0.0) as u64;
        while i > 0 && self.pattern.time_of(i - 1) >= t {
            i -= 1;
        }
        while self.pattern.time_of(i) < t {
            i += 1;
        }
        i
    }

    /// Emits all samples in `[now, until)` into `out`. `ugv` is the carrier
    /// state at `now()`; its velocity is held over the call.
    pub fn advance(&mut self, until: f64, ugv: &UgvState, out: &mut Vec<LidarPoint>) -> Result<()> {
        let end = self.index_at(until);
        let t_ref = self.now();
        while self.next_index < end {
            let block_end = ((self.next_index / self.block_len) + 1) * self.block_len;
            let stop = block_end.min(end);
            let t_block = self.pattern.time_of(self.next_index);
            let sensor = SensorTransform::new(&ugv.advanced(t_block - t_ref), self.caster.scene().sensor_height);
            let mav = self.caster.scene().mav_position(t_block)?;
            let geometry = self.caster.block_geometry(mav);
            for sample in self.pattern.run(self.next_index, stop - self.next_index) {
                if let Some(p) = self.caster.cast(&geometry, &sensor, &sample, &mut self.rng) {
                    out.push(p);
                }
            }
            self.next_index = stop;
        }
        Ok(())
    }
}

/// A simulated scenario: the point stream plus the ground truth that
/// produced it.
#[derive(Debug, Clone)]
pub struct SimulatedStream {
    pub points: Vec<LidarPoint>,
    pub ground_truth: Vec<GroundTruthRow>,
    pub duration: f64,
    pub ugv: UgvSchedule,
    pub sensor_height: f64,
}

/// Ground-truth logging rate, Hz.
pub const GROUND_TRUTH_RATE: f64 = 100.0;

/// Runs the simulator open-loop for `duration` seconds with the carrier
/// following `ugv`.
pub fn simulate_stream(
    scene: &Scene,
    ugv: &UgvSchedule,
    cfg: &ScanPatternConfig,
    duration: f64,
    seed: u64,
) -> Result<SimulatedStream> {
    if !(duration > 0.0) {
        return Err(Error::config("duration", "must be positive"));
    }
    if let Some(m) = &scene.mav {
        let needed = m.visible_until.map_or(duration, |v| v.min(duration));
        if m.trajectory.duration() + 1e-9 < needed {
            return Err(Error::config(
                "trajectory",
                format!(
                    "script covers {:.3} s but the scenario needs {needed:.3} s",
                    m.trajectory.duration()
                ),
            ));
        }
    }
    let mut sim = StreamSimulator::new(scene, cfg, seed)?;
    let mut points = Vec::with_capacity(sample_count(cfg.point_rate, duration) / 2);
    let ground_truth = ground_truth_log(scene, ugv, duration)?;
    const CHUNK: f64 = 0.01;
    let mut t = 0.0;
    while t < duration {
        let mut until = (t + CHUNK).min(duration);
        if let Some(change) = ugv.next_change_after(t) {
            until = until.min(change);
        }
        let state = ugv.state_at(sim.now());
        sim.advance(until, &state, &mut points)?;
        t = until;
    }
    Ok(SimulatedStream {
        points,
        ground_truth,
        duration,
        ugv: ugv.clone(),
        sensor_height: scene.sensor_height,
    })
}

/// Ground truth sampled at [`GROUND_TRUTH_RATE`] over `[0, duration)`.
pub fn ground_truth_log(scene: &Scene, ugv: &UgvSchedule, duration: f64) -> Result<Vec<GroundTruthRow>> {
    let n = (duration * GROUND_TRUTH_RATE - 1e-9).ceil().max(0.0) as usize;
    (0..n)
        .map(|k| {
            let t = k as f64 / GROUND_TRUTH_RATE;
            ground_truth_row(scene, ugv.state_at(t), t)
        })
        .collect()
}

pub fn ground_truth_row(scene: &Scene, ugv: UgvState, t: f64) -> Result<GroundTruthRow> {
    let mav = match &scene.mav {
        Some(m) if m.is_visible(t) => Some(eval_trajectory(&m.trajectory, t)?),
        _ => None,
    };
    Ok(GroundTruthRow { t, mav, ugv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn wall_scene(noise: NoiseConfig) -> Scene {
        Scene {
            ground_z: None,
            obstacles: vec![Obstacle {
                center: Vec3::new(10.5, 0.0, 1.0),
                half_extents: Vec3::new(0.5, 5.0, 3.0),
                reflectivity: 0.8,
            }],
            noise,
            ..Default::default()
        }
    }

    fn forward_ray() -> RaySample {
        RaySample {
            direction: Vec3::x(),
            t: 0.0,
        }
    }

    #[test]
    fn circle_example() {
        let script = TrajectoryScript::Circle {
            center: Vec3::new(0.0, 0.0, 1.5),
            radius: 2.0,
            angular_speed: Ramp::constant(0.5),
            start_angle: 0.0,
            duration: 60.0,
        };
        let (p, v) = eval_trajectory(&script, 0.0).unwrap();
        assert_relative_eq!(p, Vec3::new(2.0, 0.0, 1.5));
        assert_relative_eq!(v.norm(), 1.0);
    }

    #[test]
    fn line_duration_follows_length_and_speed() {
        let script = TrajectoryScript::Line {
            start: Vec3::new(2.0, 0.0, 1.4),
            end: Vec3::new(37.0, 0.0, 1.4),
            speed: Ramp::constant(1.0),
        };
        assert_relative_eq!(script.duration(), 35.0, epsilon = 1e-12);
        assert!(eval_trajectory(&script, 35.5).is_err());
        assert!(eval_trajectory(&script, -0.1).is_err());
        let (p, _) = eval_trajectory(&script, 35.0).unwrap();
        assert_relative_eq!(p.x, 37.0, epsilon = 1e-9);
    }

    #[test]
    fn ramped_line_reaches_its_end() {
        let script = TrajectoryScript::Line {
            start: Vec3::zeros(),
            end: Vec3::new(10.0, 0.0, 0.0),
            speed: Ramp {
                start: 0.5,
                end: 2.0,
                ramp_time: 4.0,
            },
        };
        let d = script.duration();
        let (p, v) = eval_trajectory(&script, d).unwrap();
        assert_relative_eq!(p.x, 10.0, epsilon = 1e-9);
        assert_relative_eq!(v.x, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ray_at_wall_ten_meters_away() {
        let scene = wall_scene(NoiseConfig::noise_free());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sensor = UgvState::default();
        let p = cast_ray(&scene, &sensor, &forward_ray(), None, 1e5, &mut rng).unwrap();
        assert_relative_eq!(p.p.norm(), 10.0 - 0.0, epsilon = 1e-9);
        assert_eq!(p.source, PointSource::Obstacle(0));
    }

    #[test]
    fn ray_missing_everything_returns_nothing() {
        let scene = wall_scene(NoiseConfig::noise_free());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let back = RaySample {
            direction: -Vec3::x(),
            t: 0.0,
        };
        assert!(cast_ray(&scene, &UgvState::default(), &back, None, 1e5, &mut rng).is_none());
    }

    #[test]
    fn range_noise_matches_sigma() {
        let noise = NoiseConfig {
            dropout_alpha: 0.0,
            clutter_rate: 0.0,
            ..Default::default()
        };
        let scene = wall_scene(noise);
        let caster = RayCaster::new(&scene, 1e5);
        let geometry = caster.block_geometry(None);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ranges: Vec<f64> = (0..10_000)
            .map(|_| {
                caster
                    .cast(&geometry, &SensorTransform::new(&UgvState::default(), scene.sensor_height), &forward_ray(), &mut rng)
                    .unwrap()
                    .p
                    .norm()
            })
            .collect();
        let mean = ranges.iter().sum::<f64>() / ranges.len() as f64;
        let var = ranges.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ranges.len() - 1) as f64;
        let std = var.sqrt();
        assert!((0.018..=0.022).contains(&std), "std {std}");
        assert!((mean - 10.0).abs() < 0.002);
    }

    #[test]
    fn mav_occludes_wall() {
        let mut scene = wall_scene(NoiseConfig::noise_free());
        scene.mav = Some(MavBody::new(TrajectoryScript::hover(Vec3::new(5.0, 0.0, 0.9), 10.0)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cast_ray(
            &scene,
            &UgvState::default(),
            &forward_ray(),
            Some(Vec3::new(5.0, 0.0, 0.9)),
            1e5,
            &mut rng,
        )
        .unwrap();
        assert_eq!(p.source, PointSource::Mav);
        assert_relative_eq!(p.p.norm(), 5.0 - 0.09, epsilon = 1e-9);
    }

    #[test]
    fn clutter_lands_between_mav_and_wall() {
        let noise = NoiseConfig {
            clutter_rate: 1e5,
            ..NoiseConfig::noise_free()
        };
        let mut scene = wall_scene(noise);
        let mav_p = Vec3::new(9.5, 0.0, 0.9);
        scene.mav = Some(MavBody::new(TrajectoryScript::hover(mav_p, 10.0)));
        let caster = RayCaster::new(&scene, 1e5);
        let geometry = caster.block_geometry(Some(mav_p));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = caster
            .cast(&geometry, &SensorTransform::new(&UgvState::default(), scene.sensor_height), &forward_ray(), &mut rng)
            .unwrap();
        assert_eq!(p.source, PointSource::Clutter);
        let w = UgvState::default().sensor_to_world(&p.p, scene.sensor_height);
        assert!(w.x >= 9.59 - 1e-9 && w.x <= 10.0 + 1e-9, "{w:?}");
    }

    #[test]
    fn dropout_probability_clamps() {
        let n = NoiseConfig::default();
        assert_relative_eq!(n.dropout_prob(0.3, 10.0), 0.5 * 10.0 / (0.3 * 90.0));
        assert_relative_eq!(n.dropout_prob(0.01, 80.0), 0.95);
        assert_eq!(NoiseConfig::noise_free().dropout_prob(0.3, 50.0), 0.0);
    }

    #[test]
    fn mav_volume_band() {
        let mut body = MavBody::new(TrajectoryScript::hover(Vec3::zeros(), 1.0));
        assert!(body.validate().is_ok());
        body.half_extents = Vec3::new(0.2, 0.2, 0.1);
        assert!(body.validate().is_err());
    }

    #[test]
    fn schedule_integrates_velocity() {
        let mut s = UgvSchedule::constant_velocity(UgvState {
            vx: 1.0,
            ..Default::default()
        });
        s.push(
            2.0,
            UgvState {
                x: 2.0,
                yaw_rate: 0.5,
                ..Default::default()
            },
        );
        assert_relative_eq!(s.state_at(1.0).x, 1.0);
        assert_relative_eq!(s.state_at(3.0).yaw, 0.5);
        assert_relative_eq!(s.state_at(3.0).x, 2.0);
    }
}
