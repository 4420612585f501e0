//! Per-frame MAV extraction on the HF and MF streams, HF/MF fusion, rate
//! adaptation and FoV-keeping control of the ground vehicle.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{azimuth_elevation, Vec3};
use crate::integrator::{Frame, FrameCoords, Modality, RateSet};
use crate::kdtree::KdTree;
use crate::scan::ScanPatternConfig;
use crate::sensing::{CountThresholds, DensityModel};
use crate::state::{EstimateSource, MavState, SensorTransform, UgvCommand, UgvState};

/// Extra margin around the search sphere kept when cropping a frame before
/// indexing it.
const ROI_PAD: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub thresholds: CountThresholds,
    /// Height of the ground plane assumed by ground removal.
    pub ground_z: f64,
    pub ground_margin: f64,
    pub search_radius_base: f64,
    /// Seconds; the radius grows by `gain * |v| * I`.
    pub search_radius_speed_gain: f64,
    pub lost_timeout: f64,
    /// Degrees kept free at the FoV edges.
    pub fov_margin: f64,
    pub v_max: f64,
    /// Weight of the newest finite difference in the velocity filter.
    pub velocity_smoothing: f64,
    /// Minimum time between the positions differenced for velocity.
    pub velocity_baseline: f64,
    /// Allowed per-frame displacement as a fraction of the vehicle diameter.
    pub c_blur: f64,
    pub mav_diameter: f64,
    pub f_lf: f64,
    /// Yaw-rate gain, (rad/s) per rad of azimuth.
    pub k_yaw: f64,
    pub yaw_rate_max: f64,
    /// Retreat speed gain, (m/s) per rad of elevation beyond the margin.
    pub k_retreat: f64,
    pub ugv_speed_max: f64,
    /// Extractions with more than `gate_factor * (mu + 3 sigma) + gate_slack`
    /// points are rejected as contaminated by static structure.
    pub gate_factor: f64,
    pub gate_slack: f64,
    /// Extractions with fewer points count as empty.
    pub min_points: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            thresholds: CountThresholds::default(),
            ground_z: 0.0,
            ground_margin: 0.3,
            search_radius_base: 0.5,
            search_radius_speed_gain: 1.0,
            lost_timeout: 1.0,
            fov_margin: 5.0,
            v_max: 10.0,
            velocity_smoothing: 0.6,
            velocity_baseline: 0.2,
            c_blur: 1.0,
            mav_diameter: 0.18,
            f_lf: 0.5,
            k_yaw: 1.0,
            yaw_rate_max: 1.0,
            k_retreat: 4.0,
            ugv_speed_max: 0.5,
            gate_factor: 3.0,
            gate_slack: 20.0,
            min_points: 3,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        let positive = [
            ("tracker.ground_margin", self.ground_margin),
            ("tracker.search_radius_base", self.search_radius_base),
            ("tracker.lost_timeout", self.lost_timeout),
            ("tracker.fov_margin", self.fov_margin),
            ("tracker.v_max", self.v_max),
            ("tracker.velocity_baseline", self.velocity_baseline),
            ("tracker.c_blur", self.c_blur),
            ("tracker.mav_diameter", self.mav_diameter),
            ("tracker.f_lf", self.f_lf),
            ("tracker.k_yaw", self.k_yaw),
            ("tracker.yaw_rate_max", self.yaw_rate_max),
            ("tracker.gate_factor", self.gate_factor),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive"));
            }
        }
        let nonneg = [
            ("tracker.search_radius_speed_gain", self.search_radius_speed_gain),
            ("tracker.k_retreat", self.k_retreat),
            ("tracker.ugv_speed_max", self.ugv_speed_max),
            ("tracker.gate_slack", self.gate_slack),
        ];
        for (key, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be nonnegative"));
            }
        }
        if !(self.velocity_smoothing > 0.0 && self.velocity_smoothing <= 1.0) {
            return Err(Error::config("tracker.velocity_smoothing", "must lie in (0, 1]"));
        }
        if !(self.f_lf <= Modality::Lf.band().1) {
            return Err(Error::config("tracker.f_lf", "must not exceed 1 Hz"));
        }
        if !self.ground_z.is_finite() {
            return Err(Error::config("tracker.ground_z", "must be finite"));
        }
        Ok(())
    }
}

/// How HF/MF frame frequencies are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RateMode {
    Adaptive,
    /// HF and MF both integrate at this frequency, bands not enforced.
    Fixed(f64),
}

impl fmt::Display for RateMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateMode::Adaptive => write!(f, "adaptive"),
            RateMode::Fixed(hz) => write!(f, "fixed:{hz}"),
        }
    }
}

impl FromStr for RateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "adaptive" {
            return Ok(RateMode::Adaptive);
        }
        let bad = || Error::config("mode", format!("expected `adaptive` or `fixed:<Hz>`, got `{s}`"));
        let hz = s.strip_prefix("fixed:").ok_or_else(bad)?;
        let hz: f64 = hz.parse().map_err(|_| bad())?;
        if !(hz > 0.0 && hz <= Modality::Hf.band().1) {
            return Err(Error::config("mode", format!("fixed rate {hz} Hz outside (0, 100]")));
        }
        Ok(RateMode::Fixed(hz))
    }
}

impl TryFrom<String> for RateMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RateMode> for String {
    fn from(m: RateMode) -> Self {
        m.to_string()
    }
}

/// Height below which points are treated as ground.
pub fn ground_cut(ground_z: f64, margin: f64, last_altitude: f64) -> f64 {
    (ground_z + margin).min(last_altitude - margin)
}

/// Drops points whose world height is below [`ground_cut`].
pub fn ground_removal(frame: &Frame, sensor_height: f64, cfg: &TrackerConfig, last_altitude: f64) -> Frame {
    let cut = ground_cut(cfg.ground_z, cfg.ground_margin, last_altitude);
    let points = frame
        .points
        .iter()
        .zip(frame.world_points(sensor_height))
        .filter(|(_, w)| w.z >= cut)
        .map(|(p, _)| *p)
        .collect();
    Frame {
        points,
        ..frame.clone()
    }
}

/// Constant-velocity prediction over one frame period `1/f`.
pub fn predict(p: &Vec3, v: &Vec3, f: f64) -> Result<Vec3> {
    if !(f > 0.0) {
        return Err(Error::Range(format!("prediction frequency must be positive, got {f}")));
    }
    Ok(p + v / f)
}

pub fn search_radius(cfg: &TrackerConfig, speed: f64, f: f64) -> f64 {
    cfg.search_radius_base + cfg.search_radius_speed_gain * speed / f
}

/// Indexed points within `radius` of the prediction.
pub fn extract_mav(index: &KdTree, p_hat: &Vec3, radius: f64) -> Vec<Vec3> {
    index.within(p_hat, radius).into_iter().map(|i| index.points()[i]).collect()
}

pub fn centroid(points: &[Vec3]) -> Result<Vec3> {
    if points.is_empty() {
        return Err(Error::Insufficient("centroid of an empty point set".into()));
    }
    Ok(points.iter().sum::<Vec3>() / points.len() as f64)
}

/// Count-weighted position of the available estimates and their total count.
pub fn fuse_positions(mf: Option<&MavState>, hf: Option<&MavState>) -> Result<(Vec3, usize)> {
    match (mf, hf) {
        (None, None) => Err(Error::Insufficient("no estimate to fuse".into())),
        (Some(a), None) | (None, Some(a)) => Ok((a.p, a.n_points)),
        (Some(a), Some(b)) => {
            let n = a.n_points + b.n_points;
            let p = (a.p * a.n_points as f64 + b.p * b.n_points as f64) / n as f64;
            Ok((p, n))
        }
    }
}

/// Fuses HF/MF estimates and maintains a smoothed velocity from the fused
/// positions.
#[derive(Debug, Clone)]
pub struct Fuser {
    beta: f64,
    baseline: f64,
    v_max: f64,
    history: VecDeque<(f64, Vec3)>,
    v: Vec3,
}

impl Fuser {
    pub fn new(cfg: &TrackerConfig, initial: &MavState) -> Self {
        Self {
            beta: cfg.velocity_smoothing,
            baseline: cfg.velocity_baseline,
            v_max: cfg.v_max,
            history: VecDeque::from([(initial.t, initial.p)]),
            v: initial.v,
        }
    }

    pub fn velocity(&self) -> Vec3 {
        self.v
    }

    pub fn fuse(&mut self, mf: Option<&MavState>, hf: Option<&MavState>) -> Result<MavState> {
        let (p, n_points) = fuse_positions(mf, hf)?;
        let t = mf.iter().chain(hf.iter()).map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
        let reference = self
            .history
            .iter()
            .rev()
            .find(|(tr, _)| *tr <= t - self.baseline)
            .or_else(|| self.history.front().filter(|(tr, _)| *tr < t))
            .copied();
        if let Some((tr, pr)) = reference {
            let raw = (p - pr) / (t - tr);
            let mut v = raw * self.beta + self.v * (1.0 - self.beta);
            let speed = v.norm();
            if speed > self.v_max {
                v *= self.v_max / speed;
            }
            self.v = v;
        }
        self.history.push_back((t, p));
        while self.history.len() > 2 && self.history[1].0 <= t - self.baseline {
            self.history.pop_front();
        }
        Ok(MavState {
            p,
            v: self.v,
            t,
            n_points,
            source: EstimateSource::Fused,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateDecision {
    pub rates: RateSet,
    pub hf_insufficient: bool,
    pub mf_insufficient: bool,
}

/// Chooses HF/MF frequencies from the expected density at the current
/// distance and a motion-blur floor for HF.
pub fn adjust_rates(
    state: &MavState,
    ugv: &UgvState,
    sensor_height: f64,
    model: &DensityModel,
    cfg: &TrackerConfig,
) -> Result<RateDecision> {
    let d = (state.p - ugv.sensor_origin(sensor_height)).norm();
    let (hf_lo, hf_hi) = Modality::Hf.band();
    let (mf_lo, mf_hi) = Modality::Mf.band();
    let mf = model.min_frequency_for_count(d, cfg.thresholds.n_min_mf, (mf_lo, mf_hi))?;
    let hf = model.min_frequency_for_count(d, cfg.thresholds.n_min_hf, (hf_lo, hf_hi))?;
    let f_blur = state.v.norm() / (cfg.c_blur * cfg.mav_diameter);
    let f_hf = hf.f.max(f_blur).clamp(hf_lo, hf_hi);
    Ok(RateDecision {
        rates: RateSet {
            f_hf,
            f_mf: mf.f,
            f_lf: cfg.f_lf,
        },
        hf_insufficient: hf.insufficient,
        mf_insufficient: mf.insufficient,
    })
}

/// Proportional yaw control toward zero azimuth, plus a retreat command when
/// the target nears the vertical FoV edge.
pub fn ugv_control(
    state: &MavState,
    ugv: &UgvState,
    sensor_height: f64,
    scan: &ScanPatternConfig,
    cfg: &TrackerConfig,
) -> UgvCommand {
    let rel = ugv.world_to_sensor(&state.p, sensor_height);
    if rel.norm() == 0.0 {
        return UgvCommand::default();
    }
    let (az, el) = azimuth_elevation(&rel);
    let yaw_rate = (cfg.k_yaw * az).clamp(-cfg.yaw_rate_max, cfg.yaw_rate_max);
    let edge = scan.half_fov_v_rad() - cfg.fov_margin.to_radians();
    let excess = el.abs() - edge;
    let (mut vx, mut vy) = (0.0, 0.0);
    if excess > 0.0 {
        let back = (cfg.k_retreat * excess).min(cfg.ugv_speed_max);
        let (s, c) = ugv.yaw.sin_cos();
        vx = -back * c;
        vy = -back * s;
    }
    UgvCommand { vx, vy, yaw_rate }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Hit,
    Empty,
    /// Too many points for a vehicle at this range.
    Gated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameDiagnostic {
    pub modality: Modality,
    pub t_start: f64,
    pub t_end: f64,
    pub predicted: Vec3,
    pub radius: f64,
    pub n_points: usize,
    pub expected_mu: Option<f64>,
    pub outcome: Outcome,
}

/// One fused estimate together with the rates in force when it was made.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackRow {
    pub state: MavState,
    pub f_hf: f64,
    pub f_mf: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrackRecord {
    pub fused: Vec<TrackRow>,
    /// Accepted single-modality estimates.
    pub raw: Vec<TrackRow>,
    pub frames: Vec<FrameDiagnostic>,
    pub rate_history: Vec<(f64, RateDecision)>,
    pub commands: Vec<(f64, UgvCommand)>,
    pub lost_at: Option<f64>,
}

impl TrackRecord {
    pub fn is_lost(&self) -> bool {
        self.lost_at.is_some()
    }

    /// Fused states with `t0 <= t <= t1`.
    pub fn window(&self, t0: f64, t1: f64) -> Vec<MavState> {
        self.fused
            .iter()
            .filter(|r| r.state.t >= t0 && r.state.t <= t1)
            .map(|r| r.state)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub rates: RateSet,
    pub command: UgvCommand,
    pub lost: bool,
}

/// Stateful tracker fed with closed HF and MF frames in end-time order.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    model: DensityModel,
    scan: ScanPatternConfig,
    sensor_height: f64,
    mode: RateMode,
    state: MavState,
    last_hit: f64,
    pending_mf: Option<MavState>,
    fuser: Fuser,
    rates: RateSet,
    command: UgvCommand,
    record: TrackRecord,
}

impl Tracker {
    /// `initial` is the known take-off state.
    pub fn new(
        cfg: TrackerConfig,
        model: DensityModel,
        scan: ScanPatternConfig,
        sensor_height: f64,
        mode: RateMode,
        initial: MavState,
        ugv: &UgvState,
    ) -> Result<Self> {
        cfg.validate()?;
        let rates = match mode {
            RateMode::Adaptive => adjust_rates(&initial, ugv, sensor_height, &model, &cfg)?.rates,
            RateMode::Fixed(f) => RateSet {
                f_hf: f,
                f_mf: f,
                f_lf: cfg.f_lf,
            },
        };
        let initial = MavState {
            source: EstimateSource::Fused,
            ..initial
        };
        Ok(Self {
            fuser: Fuser::new(&cfg, &initial),
            cfg,
            model,
            scan,
            sensor_height,
            mode,
            state: initial,
            last_hit: initial.t,
            pending_mf: None,
            rates,
            command: UgvCommand::default(),
            record: TrackRecord::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &MavState {
        &self.state
    }

    pub fn rates(&self) -> RateSet {
        self.rates
    }

    pub fn command(&self) -> UgvCommand {
        self.command
    }

    pub fn record(&self) -> &TrackRecord {
        &self.record
    }

    pub fn into_record(self) -> TrackRecord {
        self.record
    }

    pub fn is_lost(&self) -> bool {
        self.record.is_lost()
    }

    /// Processes a batch of frames in end-time order (MF before HF on ties).
    /// `ugv` is the carrier state after the batch.
    pub fn track_step(&mut self, frames: &[Frame], ugv: &UgvState) -> Result<StepOutput> {
        let mut order: Vec<&Frame> = frames.iter().collect();
        order.sort_by(|a, b| a.t_end().total_cmp(&b.t_end()).then(a.modality.cmp(&b.modality)));
        for frame in order {
            self.process(frame, ugv)?;
        }
        Ok(StepOutput {
            rates: self.rates,
            command: self.command,
            lost: self.is_lost(),
        })
    }

    /// World-frame points of `frame` above the ground cut and inside the
    /// crop box around `center`.
    fn crop(&self, frame: &Frame, center: &Vec3, half: f64) -> Vec<Vec3> {
        let cut = ground_cut(self.cfg.ground_z, self.cfg.ground_margin, self.state.p.z);
        let transform = match frame.coords {
            FrameCoords::Sensor(pose) => Some(SensorTransform::new(&pose, self.sensor_height)),
            FrameCoords::World => None,
        };
        frame
            .points
            .iter()
            .map(|p| transform.as_ref().map_or(p.p, |tf| tf.to_world(&p.p)))
            .filter(|w| w.z >= cut && (w - center).amax() <= half)
            .collect()
    }

    /// Runs extraction on one HF or MF frame. LF frames are ignored.
    pub fn process(&mut self, frame: &Frame, ugv: &UgvState) -> Result<()> {
        if self.is_lost() || frame.modality == Modality::Lf {
            return Ok(());
        }
        let dt = (frame.t_end() - self.state.t).max(1e-3);
        let p_hat = predict(&self.state.p, &self.state.v, 1.0 / dt)?;
        let radius = search_radius(&self.cfg, self.state.v.norm(), 1.0 / dt);
        let index = KdTree::new(self.crop(frame, &p_hat, radius + ROI_PAD));
        let points = extract_mav(&index, &p_hat, radius);

        let expected = if self.model.is_calibrated() {
            let d = (p_hat - ugv.sensor_origin(self.sensor_height)).norm();
            Some(self.model.expected_count(d, frame.frequency())?)
        } else {
            None
        };
        let outcome = if points.is_empty() || points.len() < self.cfg.min_points {
            Outcome::Empty
        } else if expected.is_some_and(|e| {
            points.len() as f64 > self.cfg.gate_factor * (e.mu + 3.0 * e.sigma) + self.cfg.gate_slack
        }) {
            Outcome::Gated
        } else {
            Outcome::Hit
        };
        self.record.frames.push(FrameDiagnostic {
            modality: frame.modality,
            t_start: frame.t_start,
            t_end: frame.t_end(),
            predicted: p_hat,
            radius,
            n_points: points.len(),
            expected_mu: expected.map(|e| e.mu),
            outcome,
        });

        let estimate = if outcome == Outcome::Hit {
            self.last_hit = frame.t_end();
            let est = MavState {
                p: centroid(&points)?,
                v: self.state.v,
                t: frame.t_end(),
                n_points: points.len(),
                source: if frame.modality == Modality::Hf {
                    EstimateSource::Hf
                } else {
                    EstimateSource::Mf
                },
            };
            self.record.raw.push(TrackRow {
                state: est,
                f_hf: self.rates.f_hf,
                f_mf: self.rates.f_mf,
            });
            Some(est)
        } else {
            None
        };

        match frame.modality {
            Modality::Mf => self.pending_mf = estimate,
            Modality::Hf => {
                let mf = self.pending_mf.take();
                if mf.is_some() || estimate.is_some() {
                    let fused = self.fuser.fuse(mf.as_ref(), estimate.as_ref())?;
                    if fused.t > self.state.t {
                        self.state = fused;
                        self.record.fused.push(TrackRow {
                            state: fused,
                            f_hf: self.rates.f_hf,
                            f_mf: self.rates.f_mf,
                        });
                    }
                }
                self.update_controls(ugv, frame.t_end())?;
            }
            Modality::Lf => {}
        }

        if frame.t_end() - self.last_hit >= self.cfg.lost_timeout {
            let t = self.last_hit + self.cfg.lost_timeout;
            log::info!("track lost at t = {t:.3}");
            self.record.lost_at = Some(t);
            self.command = UgvCommand::default();
        }
        Ok(())
    }

    fn update_controls(&mut self, ugv: &UgvState, t: f64) -> Result<()> {
        if let RateMode::Adaptive = self.mode {
            let decision = adjust_rates(&self.state, ugv, self.sensor_height, &self.model, &self.cfg)?;
            if decision.rates != self.rates || self.record.rate_history.is_empty() {
                self.record.rate_history.push((t, decision));
            }
            self.rates = decision.rates;
        }
        let command = ugv_control(&self.state, ugv, self.sensor_height, &self.scan, &self.cfg);
        if command != self.command {
            self.record.commands.push((t, command));
        }
        self.command = command;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{LidarPoint, PointSource};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn world_frame(points: &[Vec3]) -> Frame {
        Frame {
            modality: Modality::Hf,
            t_start: 0.0,
            integration_time: 0.01,
            points: points
                .iter()
                .map(|p| LidarPoint {
                    t: 0.0,
                    p: *p,
                    source: PointSource::Ground,
                })
                .collect(),
            coords: FrameCoords::World,
        }
    }

    fn est(p: Vec3, n: usize, t: f64) -> MavState {
        MavState {
            p,
            v: Vec3::zeros(),
            t,
            n_points: n,
            source: EstimateSource::Hf,
        }
    }

    #[test]
    fn ground_points_are_removed() {
        let cfg = TrackerConfig::default();
        let ground: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        assert!(ground_removal(&world_frame(&ground), 0.9, &cfg, 1.5).points.is_empty());
        let mav: Vec<Vec3> = (0..10).map(|i| Vec3::new(5.0, i as f64 * 0.01, 1.5)).collect();
        assert_eq!(ground_removal(&world_frame(&mav), 0.9, &cfg, 1.5).points.len(), 10);
    }

    #[test]
    fn ground_removal_never_cuts_above_the_vehicle() {
        let cfg = TrackerConfig::default();
        for alt in [0.1, 0.4, 1.0, 3.0] {
            assert!(ground_cut(cfg.ground_z, cfg.ground_margin, alt) < alt);
        }
    }

    #[test]
    fn sensor_frames_are_lifted_to_world_height() {
        let cfg = TrackerConfig::default();
        let mut f = world_frame(&[Vec3::new(3.0, 0.0, -0.8), Vec3::new(3.0, 0.0, 0.5)]);
        f.coords = FrameCoords::Sensor(UgvState::default());
        let kept = ground_removal(&f, 0.9, &cfg, 1.4);
        assert_eq!(kept.points.len(), 1);
        assert_eq!(kept.points[0].p.z, 0.5);
    }

    #[test]
    fn prediction_examples() {
        assert_eq!(predict(&Vec3::new(1.0, 2.0, 3.0), &Vec3::zeros(), 10.0).unwrap(), Vec3::new(1.0, 2.0, 3.0));
        assert_relative_eq!(
            predict(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(1.0, 0.0, 0.0), 10.0).unwrap(),
            Vec3::new(0.1, 0.0, 1.0)
        );
        assert_relative_eq!(
            predict(&Vec3::new(2.0, -1.0, 1.5), &Vec3::new(0.0, 2.0, 0.0), 5.0).unwrap(),
            Vec3::new(2.0, -0.6, 1.5)
        );
        assert!(predict(&Vec3::zeros(), &Vec3::zeros(), 0.0).is_err());
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(
            centroid(&[Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)]).unwrap(),
            Vec3::zeros()
        );
        assert_eq!(centroid(&[Vec3::new(1.0, 2.0, 3.0)]).unwrap(), Vec3::new(1.0, 2.0, 3.0));
        assert!(centroid(&[]).is_err());
    }

    #[test]
    fn clutter_just_outside_the_radius_is_excluded() {
        let mut pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(5.0, 0.005 * i as f64, 1.5)).collect();
        pts.push(Vec3::new(5.0 + 0.5 + 1e-6, 0.0, 1.5));
        let index = KdTree::new(pts);
        assert_eq!(extract_mav(&index, &Vec3::new(5.0, 0.0, 1.5), 0.5).len(), 20);
    }

    #[test]
    fn fusion_weighting_example() {
        let mf = MavState {
            source: EstimateSource::Mf,
            ..est(Vec3::new(0.0, 0.0, 1.0), 20, 0.1)
        };
        let hf = est(Vec3::new(0.12, 0.0, 1.0), 4, 0.1);
        let (p, n) = fuse_positions(Some(&mf), Some(&hf)).unwrap();
        assert_relative_eq!(p.x, 0.02, epsilon = 1e-15);
        assert_eq!(n, 24);
        assert_eq!(fuse_positions(None, Some(&hf)).unwrap().0, hf.p);
        assert!(fuse_positions(None, None).is_err());
    }

    #[test]
    fn fuser_timestamps_at_the_later_frame_end() {
        let cfg = TrackerConfig::default();
        let mut fuser = Fuser::new(&cfg, &est(Vec3::zeros(), 1, 0.0));
        let mf = est(Vec3::new(0.1, 0.0, 0.0), 10, 0.45);
        let hf = est(Vec3::new(0.1, 0.0, 0.0), 3, 0.5);
        let s = fuser.fuse(Some(&mf), Some(&hf)).unwrap();
        assert_eq!(s.t, 0.5);
        assert_eq!(s.source, EstimateSource::Fused);
        assert_relative_eq!(s.v.x, cfg.velocity_smoothing * 0.1 / 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fuser_recovers_constant_velocity() {
        let cfg = TrackerConfig::default();
        let v = Vec3::new(1.5, -0.5, 0.0);
        let mut fuser = Fuser::new(
            &cfg,
            &MavState {
                v,
                ..est(Vec3::zeros(), 1, 0.0)
            },
        );
        for k in 1..200 {
            let t = k as f64 * 0.01;
            fuser.fuse(None, Some(&est(v * t, 5, t))).unwrap();
        }
        assert_relative_eq!(fuser.velocity(), v, epsilon = 1e-9);
    }

    #[test]
    fn dead_center_needs_no_command() {
        let cfg = TrackerConfig::default();
        let s = est(Vec3::new(5.0, 0.0, 0.9), 10, 0.0);
        let cmd = ugv_control(&s, &UgvState::default(), 0.9, &ScanPatternConfig::default(), &cfg);
        assert!(cmd.is_zero());
    }

    #[test]
    fn yaw_command_is_proportional_and_saturated() {
        let cfg = TrackerConfig {
            k_yaw: 0.5,
            ..Default::default()
        };
        let az = 20f64.to_radians();
        let s = est(Vec3::new(5.0 * az.cos(), 5.0 * az.sin(), 0.9), 10, 0.0);
        let cmd = ugv_control(&s, &UgvState::default(), 0.9, &ScanPatternConfig::default(), &cfg);
        assert_relative_eq!(cmd.yaw_rate, 0.5 * az, epsilon = 1e-12);
        let strong = TrackerConfig { k_yaw: 10.0, ..cfg };
        let cmd = ugv_control(&s, &UgvState::default(), 0.9, &ScanPatternConfig::default(), &strong);
        assert_eq!(cmd.yaw_rate, strong.yaw_rate_max);
    }

    #[test]
    fn high_target_makes_the_carrier_back_off() {
        let cfg = TrackerConfig::default();
        let ugv = UgvState::at_pose(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let s = est(Vec3::new(0.0, 2.0, 1.6), 10, 0.0);
        let cmd = ugv_control(&s, &ugv, 0.9, &ScanPatternConfig::default(), &cfg);
        assert!(cmd.vy < 0.0 && cmd.vx.abs() < 1e-12);
        assert!((cmd.vx.powi(2) + cmd.vy.powi(2)).sqrt() <= cfg.ugv_speed_max + 1e-12);
    }

    #[test]
    fn rate_mode_round_trip() {
        for s in ["adaptive", "fixed:5", "fixed:12.5"] {
            assert_eq!(s.parse::<RateMode>().unwrap().to_string(), s);
        }
        assert!("fixed:0".parse::<RateMode>().is_err());
        assert!("sometimes".parse::<RateMode>().is_err());
    }

    #[test]
    fn default_config_is_valid() {
        TrackerConfig::default().validate().unwrap();
        let bad = TrackerConfig {
            lost_timeout: 0.0,
            ..Default::default()
        };
        match bad.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "tracker.lost_timeout"),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn fused_position_is_a_convex_combination(
            a in (-5.0f64..5.0, -5.0f64..5.0, 0.0f64..3.0),
            b in (-5.0f64..5.0, -5.0f64..5.0, 0.0f64..3.0),
            na in 1usize..500,
            nb in 1usize..500,
        ) {
            let pa = Vec3::new(a.0, a.1, a.2);
            let pb = Vec3::new(b.0, b.1, b.2);
            let (p, _) = fuse_positions(Some(&est(pa, na, 0.0)), Some(&est(pb, nb, 0.0))).unwrap();
            let seg = pb - pa;
            let lambda = if seg.norm() > 0.0 { (p - pa).dot(&seg) / seg.norm_squared() } else { 0.0 };
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&lambda));
            prop_assert!((pa + seg * lambda - p).norm() < 1e-9);
        }

        #[test]
        fn prediction_is_exact_for_constant_velocity(
            p in (-5.0f64..5.0, -5.0f64..5.0, 0.0f64..3.0),
            v in (-3.0f64..3.0, -3.0f64..3.0, -1.0f64..1.0),
            f in 1.0f64..100.0,
        ) {
            let p = Vec3::new(p.0, p.1, p.2);
            let v = Vec3::new(v.0, v.1, v.2);
            let truth = p + v * (1.0 / f);
            prop_assert!((predict(&p, &v, f).unwrap() - truth).norm() < 1e-9);
        }
    }
}
