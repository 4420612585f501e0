//! Declarative scenarios, built-in presets and the closed-loop runner that
//! ties the simulator, the frame taps, the tracker and the validator
//! together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{azimuth_elevation, Vec3};
use crate::integrator::{Frame, FrameAssembler, FrameCoords, Modality};
use crate::scan::ScanPatternConfig;
use crate::scene::{
    eval_trajectory, ground_truth_log, GroundTruthRow, MavBody, Obstacle, Ramp, Scene, StreamSimulator,
    TrajectoryScript, UgvSchedule,
};
use crate::sensing::{CalibrationConfig, DensityModel};
use crate::state::{EstimateSource, MavState, SensorTransform, UgvState};
use crate::tracker::{ground_cut, Outcome, RateMode, TrackRecord, Tracker, TrackerConfig};
use crate::validator::{validate, ValidationContext, ValidationReport, ValidatorConfig, VoxelCloud};

/// Longest stretch simulated between two tracker updates.
const CHUNK: f64 = 0.01;
/// Pose refresh interval for the LF deskew.
const DESKEW_BLOCK: f64 = 0.00025;
/// Half-width of the box kept around the current estimate in LF frames.
const LF_ROI: f64 = 3.0;
/// History margin handed to the validator around each LF window.
const HISTORY_PAD: f64 = 0.1;

pub const PRESETS: [&str; 3] = ["circle_ramp", "corridor_35m", "hover"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration: f64,
    #[serde(default = "default_mode")]
    pub mode: RateMode,
    /// Directory for result files; the CLI flag takes precedence.
    #[serde(default)]
    pub output: Option<String>,
    /// Initial pose of the ground vehicle.
    #[serde(default)]
    pub ugv: UgvState,
    pub scene: Scene,
    #[serde(default)]
    pub scan: ScanPatternConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub validator: ValidatorConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

fn default_mode() -> RateMode {
    RateMode::Adaptive
}

impl ScenarioConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| {
            let msg = e.message().to_string();
            let key = offending_key(&msg).unwrap_or_else(|| "config".into());
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::config("duration", "must be positive"));
        }
        self.scene.validate()?;
        self.scan.validate()?;
        self.tracker.validate()?;
        self.validator.validate()?;
        self.calibration.validate(&self.scan)?;
        let mav = self
            .scene
            .mav
            .as_ref()
            .ok_or_else(|| Error::config("scene.mav", "a tracking scenario needs a vehicle"))?;
        let needed = mav.visible_until.map_or(self.duration, |v| v.min(self.duration));
        if mav.trajectory.duration() + 1e-9 < needed {
            return Err(Error::config(
                "scene.mav.trajectory",
                format!(
                    "script covers {:.3} s but the scenario needs {needed:.3} s",
                    mav.trajectory.duration()
                ),
            ));
        }
        Ok(())
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "circle_ramp" => Ok(circle_ramp()),
            "corridor_35m" => Ok(corridor(1.0)),
            "hover" => Ok(hover(30.0)),
            _ => Err(Error::config(
                "preset",
                format!("unknown preset `{name}` (expected one of {})", PRESETS.join(", ")),
            )),
        }
    }
}

/// Pulls the key name out of a TOML error message, when it names one.
fn offending_key(msg: &str) -> Option<String> {
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(i) = msg.find(marker) {
            let rest = &msg[i + marker.len()..];
            return rest.find('`').map(|j| rest[..j].to_string());
        }
    }
    None
}

fn wall(center: [f64; 3], half: [f64; 3]) -> Obstacle {
    Obstacle {
        center: Vec3::from(center),
        half_extents: Vec3::from(half),
        reflectivity: 0.6,
    }
}

fn base(seed: u64, duration: f64, scene: Scene) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        duration,
        mode: RateMode::Adaptive,
        output: None,
        ugv: UgvState::default(),
        scene,
        scan: ScanPatternConfig::default(),
        tracker: TrackerConfig::default(),
        validator: ValidatorConfig::default(),
        calibration: CalibrationConfig::default(),
    }
}

/// Horizontal circle of radius 2 m in front of the carrier, with the speed
/// ramping from 0.5 to 2.5 m/s. A wall stands 0.8 m behind the far side.
pub fn circle_ramp() -> ScenarioConfig {
    let duration = 36.0;
    let scene = Scene {
        obstacles: vec![
            wall([9.4, 0.0, 1.5], [0.1, 5.0, 1.5]),
            wall([4.5, 6.1, 1.5], [5.0, 0.1, 1.5]),
            wall([4.5, -6.1, 1.5], [5.0, 0.1, 1.5]),
            wall([3.5, -3.2, 1.5], [0.2, 0.2, 1.5]),
        ],
        mav: Some(MavBody::new(TrajectoryScript::Circle {
            center: Vec3::new(6.5, 0.0, 1.4),
            radius: 2.0,
            angular_speed: Ramp {
                start: 0.25,
                end: 1.25,
                ramp_time: 30.0,
            },
            start_angle: std::f64::consts::PI,
            duration,
        })),
        ..Scene::default()
    };
    base(7, duration, scene)
}

/// Straight 35 m flight away from the carrier down a 4 m wide corridor.
pub fn corridor(speed: f64) -> ScenarioConfig {
    let start = Vec3::new(4.0, 0.0, 1.4);
    let end = Vec3::new(39.0, 0.0, 1.4);
    let duration = 35.0 / speed;
    let scene = Scene {
        obstacles: vec![
            wall([22.0, 2.1, 1.5], [22.0, 0.1, 1.5]),
            wall([22.0, -2.1, 1.5], [22.0, 0.1, 1.5]),
        ],
        mav: Some(MavBody::new(TrajectoryScript::Line {
            start,
            end,
            speed: Ramp::constant(speed),
        })),
        ..Scene::default()
    };
    base(11, duration, scene)
}

/// The vehicle hovers 5 m ahead in an open field.
pub fn hover(duration: f64) -> ScenarioConfig {
    let scene = Scene {
        mav: Some(MavBody::new(TrajectoryScript::hover(Vec3::new(5.0, 0.0, 1.4), duration))),
        ..Scene::default()
    };
    base(3, duration, scene)
}

/// Integration statistics of one closed frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameStat {
    pub modality: Modality,
    pub t_start: f64,
    pub integration_time: f64,
    pub n_points: usize,
}

/// Distance between consecutive detections of one modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpacingRow {
    pub t: f64,
    pub modality: Modality,
    pub f: f64,
    pub speed: f64,
    pub spacing: f64,
    pub expected: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ErrorStats {
    pub n: usize,
    pub mean: f64,
    pub rmse: f64,
    /// Root of the trace of the error covariance.
    pub scatter: f64,
}

impl ErrorStats {
    pub fn from_errors(errors: &[Vec3]) -> Self {
        let n = errors.len();
        if n == 0 {
            return Self::default();
        }
        let nf = n as f64;
        let mean_vec = errors.iter().sum::<Vec3>() / nf;
        let mean = errors.iter().map(|e| e.norm()).sum::<f64>() / nf;
        let rmse = (errors.iter().map(|e| e.norm_squared()).sum::<f64>() / nf).sqrt();
        let scatter = if n > 1 {
            (errors.iter().map(|e| (e - mean_vec).norm_squared()).sum::<f64>() / (nf - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { n, mean, rmse, scatter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub mode: String,
    pub duration: f64,
    /// Time the track was held: the loss time, or the full duration.
    pub track_duration: f64,
    pub lost: bool,
    pub revolutions: Option<f64>,
    pub hf: ErrorStats,
    pub mf: ErrorStats,
    pub fused: ErrorStats,
    pub miss_rate: f64,
    pub n_frames: usize,
    pub max_abs_azimuth_deg: f64,
    pub max_abs_elevation_deg: f64,
    pub validations_accepted: usize,
    pub validations_total: usize,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub record: TrackRecord,
    pub ground_truth: Vec<GroundTruthRow>,
    pub frames: Vec<FrameStat>,
    pub validations: Vec<ValidationReport>,
    /// Expected and observed voxels of the last validated LF frame.
    pub voxels: Option<(VoxelCloud, VoxelCloud)>,
    /// World-frame LF frames, cropped to the region around the track.
    pub lf_frames: Vec<Frame>,
    pub spacing: Vec<SpacingRow>,
    pub ugv: UgvSchedule,
    pub metrics: Metrics,
}

/// Closed-loop run: the carrier's motion follows the tracker's commands, and
/// HF/MF integration times follow the tracker's rate decisions.
pub fn run_scenario(cfg: &ScenarioConfig, model: &DensityModel) -> Result<RunResult> {
    cfg.validate()?;
    let scene = &cfg.scene;
    let mav = scene.mav.as_ref().expect("validated");
    let sensor_height = scene.sensor_height;
    if cfg.mode == RateMode::Adaptive && !model.is_calibrated() {
        return Err(Error::State("adaptive mode needs a calibrated density model".into()));
    }

    let mut ugv = UgvState {
        vx: 0.0,
        vy: 0.0,
        yaw_rate: 0.0,
        ..cfg.ugv
    };
    let mut schedule = UgvSchedule::empty();
    schedule.push(0.0, ugv);

    let (p0, _) = eval_trajectory(&mav.trajectory, 0.0)?;
    let initial = MavState {
        p: p0,
        v: Vec3::zeros(),
        t: 0.0,
        n_points: 1,
        source: EstimateSource::Fused,
    };
    let mut tracker = Tracker::new(
        cfg.tracker.clone(),
        model.clone(),
        cfg.scan.clone(),
        sensor_height,
        cfg.mode,
        initial,
        &ugv,
    )?;
    let clamp = cfg.mode == RateMode::Adaptive;
    let rates = tracker.rates();
    let mut hf = FrameAssembler::new(Modality::Hf, 0.0, rates.f_hf, FrameCoords::Sensor(ugv), clamp);
    let mut mf = FrameAssembler::new(Modality::Mf, 0.0, rates.f_mf, FrameCoords::Sensor(ugv), clamp);
    let mut lf = FrameAssembler::new(Modality::Lf, 0.0, cfg.tracker.f_lf, FrameCoords::World, true);

    let mut sim = StreamSimulator::new(scene, &cfg.scan, cfg.seed)?;
    let mut buf = Vec::new();
    let mut frames = Vec::new();
    let mut validations = Vec::new();
    let mut voxels = None;
    let mut lf_frames = Vec::new();
    let mut t = 0.0;

    while t < cfg.duration && !tracker.is_lost() {
        let next = hf
            .frame_end()
            .min(mf.frame_end())
            .min(lf.frame_end())
            .min(t + CHUNK)
            .min(cfg.duration);
        buf.clear();
        let start_state = schedule.state_at(sim.now());
        let t_ref = sim.now();
        sim.advance(next, &start_state, &mut buf)?;

        let center = tracker.state().p;
        let cut = ground_cut(cfg.tracker.ground_z, cfg.tracker.ground_margin, center.z);
        let mut block = f64::NEG_INFINITY;
        let mut tf = SensorTransform::new(&start_state, sensor_height);
        for p in &buf {
            hf.push(*p);
            mf.push(*p);
            if p.t >= block + DESKEW_BLOCK {
                block = p.t;
                tf = SensorTransform::new(&start_state.advanced(p.t - t_ref), sensor_height);
            }
            let w = tf.to_world(&p.p);
            if w.z >= cut && (w - center).amax() <= LF_ROI {
                lf.push_world(p.t, w, p.source);
            }
        }
        t = next;
        ugv = schedule.state_at(t);

        if mf.frame_end() <= t {
            let frame = mf.close(FrameCoords::Sensor(ugv));
            frames.push(stat(&frame));
            tracker.process(&frame, &ugv)?;
        }
        if hf.frame_end() <= t {
            let frame = hf.close(FrameCoords::Sensor(ugv));
            frames.push(stat(&frame));
            tracker.process(&frame, &ugv)?;
            if clamp && !tracker.is_lost() {
                let r = tracker.rates();
                hf.retune(r.f_hf)?;
                if mf.frame_start() == t {
                    mf.retune(r.f_mf)?;
                } else {
                    mf.set_rate(r.f_mf);
                }
            }
            let cmd = tracker.command();
            if (cmd.vx, cmd.vy, cmd.yaw_rate) != (ugv.vx, ugv.vy, ugv.yaw_rate) {
                ugv = ugv.with_velocity(&cmd);
                schedule.push(t, ugv);
            }
        }
        if lf.frame_end() <= t {
            let frame = lf.close(FrameCoords::World);
            frames.push(stat(&frame));
            let history = tracker
                .record()
                .window(frame.t_start - HISTORY_PAD, frame.t_end() + HISTORY_PAD);
            if history.len() >= 2 {
                let ctx = ValidationContext {
                    model,
                    ugv: &schedule,
                    sensor_height,
                    half_extents: mav.half_extents,
                    corridor_radius: cfg.tracker.search_radius_base,
                    f_lf: cfg.tracker.f_lf,
                };
                match validate(&frame, &history, &ctx, &cfg.validator) {
                    Ok(v) => {
                        validations.push(v.report);
                        voxels = Some((v.expected, v.observed));
                    }
                    Err(e) => log::warn!("validation of LF frame at t = {} skipped: {e}", frame.t_start),
                }
            }
            lf_frames.push(frame);
        }
    }

    let end = t;
    let record = tracker.into_record();
    let ground_truth = ground_truth_log(scene, &schedule, end)?;
    let spacing = spacing_rows(&record, scene)?;
    let metrics = compute_metrics(cfg, &record, &ground_truth, &frames, &validations, end)?;
    Ok(RunResult {
        config: cfg.clone(),
        record,
        ground_truth,
        frames,
        validations,
        voxels,
        lf_frames,
        spacing,
        ugv: schedule,
        metrics,
    })
}

fn stat(frame: &Frame) -> FrameStat {
    FrameStat {
        modality: frame.modality,
        t_start: frame.t_start,
        integration_time: frame.integration_time,
        n_points: frame.points.len(),
    }
}

fn truth_at(scene: &Scene, t: f64) -> Result<Option<(Vec3, Vec3)>> {
    match &scene.mav {
        Some(m) if m.is_visible(t) => Ok(Some(eval_trajectory(&m.trajectory, t)?)),
        _ => Ok(None),
    }
}

/// Spacing between estimates of consecutive frames that both hit.
pub fn spacing_rows(record: &TrackRecord, scene: &Scene) -> Result<Vec<SpacingRow>> {
    let mut rows = Vec::new();
    for modality in [Modality::Hf, Modality::Mf] {
        let source = if modality == Modality::Hf {
            EstimateSource::Hf
        } else {
            EstimateSource::Mf
        };
        let mut raw = record.raw.iter().filter(|r| r.state.source == source);
        let mut prev: Option<MavState> = None;
        for d in record.frames.iter().filter(|d| d.modality == modality) {
            if d.outcome != Outcome::Hit {
                prev = None;
                continue;
            }
            let cur = raw.next().expect("one estimate per hit").state;
            if let Some(p) = prev {
                let f = 1.0 / (d.t_end - d.t_start);
                if let Some((_, v)) = truth_at(scene, cur.t)? {
                    let speed = v.norm();
                    rows.push(SpacingRow {
                        t: cur.t,
                        modality,
                        f,
                        speed,
                        spacing: (cur.p - p.p).norm(),
                        expected: speed / f,
                        n_points: cur.n_points.min(p.n_points),
                    });
                }
            }
            prev = Some(cur);
        }
    }
    Ok(rows)
}

fn errors_of(rows: impl Iterator<Item = MavState>, scene: &Scene) -> Result<Vec<Vec3>> {
    let mut out = Vec::new();
    for s in rows {
        if let Some((p, _)) = truth_at(scene, s.t)? {
            out.push(s.p - p);
        }
    }
    Ok(out)
}

fn compute_metrics(
    cfg: &ScenarioConfig,
    record: &TrackRecord,
    ground_truth: &[GroundTruthRow],
    frames: &[FrameStat],
    validations: &[ValidationReport],
    end: f64,
) -> Result<Metrics> {
    let scene = &cfg.scene;
    let track_duration = record.lost_at.unwrap_or(end).min(end);
    let by_source = |src: EstimateSource| record.raw.iter().filter(move |r| r.state.source == src).map(|r| r.state);
    let hf = ErrorStats::from_errors(&errors_of(by_source(EstimateSource::Hf), scene)?);
    let mf = ErrorStats::from_errors(&errors_of(by_source(EstimateSource::Mf), scene)?);
    let fused = ErrorStats::from_errors(&errors_of(record.fused.iter().map(|r| r.state), scene)?);
    let n_frames = record.frames.len();
    let misses = record.frames.iter().filter(|d| d.outcome != Outcome::Hit).count();
    let revolutions = scene
        .mav
        .as_ref()
        .and_then(|m| m.trajectory.swept_angle(track_duration))
        .map(|a| a / std::f64::consts::TAU);
    let (mut max_az, mut max_el) = (0.0f64, 0.0f64);
    for row in ground_truth.iter().filter(|r| r.t <= track_duration) {
        if let Some((p, _)) = row.mav {
            let (az, el) = azimuth_elevation(&row.ugv.world_to_sensor(&p, scene.sensor_height));
            max_az = max_az.max(az.abs());
            max_el = max_el.max(el.abs());
        }
    }
    let _ = frames;
    Ok(Metrics {
        mode: cfg.mode.to_string(),
        duration: cfg.duration,
        track_duration,
        lost: record.is_lost(),
        revolutions,
        hf,
        mf,
        fused,
        miss_rate: if n_frames > 0 { misses as f64 / n_frames as f64 } else { 0.0 },
        n_frames,
        max_abs_azimuth_deg: max_az.to_degrees(),
        max_abs_elevation_deg: max_el.to_degrees(),
        validations_accepted: validations.iter().filter(|v| v.accepted).count(),
        validations_total: validations.len(),
    })
}
