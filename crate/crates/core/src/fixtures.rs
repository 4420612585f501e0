//! Seeded validation fixtures: the first LF frame of a closed-loop run in
//! which a vehicle crosses in front of the sensor, the tracker's own history
//! over that frame, and several wrong hypotheses about what produced the
//! returns.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::integrator::Frame;
use crate::scenario::{run_scenario, ScenarioConfig};
use crate::scene::{MavBody, Obstacle, Ramp, Scene, TrajectoryScript, UgvSchedule};
use crate::sensing::DensityModel;
use crate::state::MavState;
use crate::tracker::RateMode;
use crate::validator::{validate, ValidationContext, ValidationReport};

/// Lateral offset of the ghost track, m.
const GHOST_OFFSET: f64 = 0.45;
const HISTORY_PAD: f64 = 0.1;

pub const DECOYS: [&str; 3] = ["static_blob", "offset_track", "stale_track"];

/// Vehicle crossing 6 m ahead at 1 m/s, with a small static cluster of
/// debris beside its path.
pub fn crossing_config(seed: u64) -> ScenarioConfig {
    let debris = [
        ([6.1, 1.3, 1.35], [0.05, 0.08, 0.05]),
        ([6.3, 1.6, 1.55], [0.04, 0.04, 0.06]),
        ([6.0, 1.7, 1.2], [0.06, 0.05, 0.04]),
        ([6.2, 1.45, 1.75], [0.03, 0.06, 0.03]),
    ];
    let scene = Scene {
        obstacles: debris
            .iter()
            .map(|(c, h)| Obstacle {
                center: Vec3::from(*c),
                half_extents: Vec3::from(*h),
                reflectivity: 0.5,
            })
            .collect(),
        mav: Some(MavBody::new(TrajectoryScript::Line {
            start: Vec3::new(6.0, -1.5, 1.4),
            end: Vec3::new(6.0, 1.5, 1.4),
            speed: Ramp::constant(1.0),
        })),
        ..Scene::default()
    };
    let mut cfg = ScenarioConfig::preset("hover").expect("built-in");
    cfg.seed = seed;
    cfg.duration = 2.5;
    cfg.mode = RateMode::Adaptive;
    cfg.scene = scene;
    cfg
}

pub fn debris_center() -> Vec3 {
    Vec3::new(6.15, 1.5, 1.45)
}

#[derive(Debug, Clone)]
pub struct ValidationFixture {
    pub config: ScenarioConfig,
    pub ugv: UgvSchedule,
    pub frame: Frame,
    pub genuine: Vec<MavState>,
    pub decoys: Vec<(&'static str, Vec<MavState>)>,
}

pub fn validation_fixture(seed: u64, model: &DensityModel) -> Result<ValidationFixture> {
    let config = crossing_config(seed);
    let run = run_scenario(&config, model)?;
    let frame = run
        .lf_frames
        .first()
        .cloned()
        .ok_or_else(|| Error::Insufficient("run closed no LF frame".into()))?;
    let genuine = run.record.window(frame.t_start - HISTORY_PAD, frame.t_end() + HISTORY_PAD);
    if genuine.len() < 2 {
        return Err(Error::Insufficient("tracker history too short".into()));
    }

    let with = |s: &MavState, p: Vec3, v: Vec3| MavState { p, v, ..*s };
    let static_blob = genuine.iter().map(|s| with(s, debris_center(), Vec3::zeros())).collect();
    let offset = Vec3::new(GHOST_OFFSET, 0.0, 0.0);
    let offset_track = genuine.iter().map(|s| with(s, s.p + offset, s.v)).collect();
    let p0 = genuine[0].p;
    let stale_track = genuine.iter().map(|s| with(s, p0, Vec3::zeros())).collect();

    Ok(ValidationFixture {
        config,
        ugv: run.ugv,
        frame,
        genuine,
        decoys: vec![
            ("static_blob", static_blob),
            ("offset_track", offset_track),
            ("stale_track", stale_track),
        ],
    })
}

/// Validates the genuine history and every decoy against the fixture frame.
pub fn evaluate_fixture(
    fx: &ValidationFixture,
    model: &DensityModel,
) -> Result<(ValidationReport, Vec<(&'static str, ValidationReport)>)> {
    let cfg = &fx.config;
    let mav = cfg.scene.mav.as_ref().expect("vehicle");
    let ctx = ValidationContext {
        model,
        ugv: &fx.ugv,
        sensor_height: cfg.scene.sensor_height,
        half_extents: mav.half_extents,
        corridor_radius: cfg.tracker.search_radius_base,
        f_lf: cfg.tracker.f_lf,
    };
    let genuine = validate(&fx.frame, &fx.genuine, &ctx, &cfg.validator)?.report;
    let decoys = fx
        .decoys
        .iter()
        .map(|(name, h)| Ok((*name, validate(&fx.frame, h, &ctx, &cfg.validator)?.report)))
        .collect::<Result<_>>()?;
    Ok((genuine, decoys))
}
