//! Adaptive scan integration for tracking a small aerial vehicle with a
//! non-repetitive solid-state lidar mounted on a ground robot.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod integrator;
pub mod kdtree;
pub mod scan;
pub mod scenario;
pub mod scene;
pub mod sensing;
pub mod spline;
pub mod state;
pub mod tracker;
pub mod validator;

pub use error::{Error, Result};
pub use geometry::{Aabb, Vec3};
pub use integrator::{Frame, FrameAssembler, FrameCoords, Modality, RateSchedule, RateSet, RateWarning};
pub use scan::{RaySample, ScanPattern, ScanPatternConfig};
pub use scene::{
    simulate_stream, LidarPoint, MavBody, NoiseConfig, Obstacle, PointSource, Ramp, Scene,
    SimulatedStream, StreamSimulator, TrajectoryScript, UgvSchedule,
};
pub use sensing::{
    calibrate, expected_spacing, CalibrationConfig, CountEstimate, CountThresholds, DensityModel,
    FrequencyChoice,
};
pub use spline::{HermiteTrajectory, Knot};
pub use state::{EstimateSource, MavState, SensorTransform, UgvCommand, UgvState};
pub use kdtree::KdTree;
pub use tracker::{RateMode, TrackRecord, Tracker, TrackerConfig};
pub use validator::{iou, validate, ValidationReport, ValidatorConfig, VoxelCloud};
pub use scenario::{run_scenario, Metrics, RunResult, ScenarioConfig};
