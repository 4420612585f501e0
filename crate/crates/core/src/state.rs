//! Kinematic states of the tracked vehicle and of the sensor carrier.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Vec3};

/// Where an estimate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateSource {
    Hf,
    Mf,
    Fused,
}

impl EstimateSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimateSource::Hf => "hf",
            EstimateSource::Mf => "mf",
            EstimateSource::Fused => "fused",
        }
    }
}

/// Position and velocity of the aerial vehicle in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MavState {
    pub p: Vec3,
    pub v: Vec3,
    pub t: f64,
    /// Number of lidar points supporting the estimate.
    pub n_points: usize,
    pub source: EstimateSource,
}

/// Planar pose and velocity of the ground vehicle. Velocities are expressed
/// in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UgvState {
    pub x: f64,
    pub y: f64,
    /// Heading, radians in (-pi, pi].
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl UgvState {
    pub fn at_pose(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            yaw: wrap_angle(yaw),
            ..Default::default()
        }
    }

    /// Pose after holding the current velocity for `dt` seconds.
    pub fn advanced(&self, dt: f64) -> Self {
        Self {
            x: self.x + self.vx * dt,
            y: self.y + self.vy * dt,
            yaw: wrap_angle(self.yaw + self.yaw_rate * dt),
            ..*self
        }
    }

    pub fn with_velocity(&self, cmd: &UgvCommand) -> Self {
        Self {
            vx: cmd.vx,
            vy: cmd.vy,
            yaw_rate: cmd.yaw_rate,
            ..*self
        }
    }

    /// Sensor origin in the world frame.
    pub fn sensor_origin(&self, sensor_height: f64) -> Vec3 {
        Vec3::new(self.x, self.y, sensor_height)
    }

    /// Maps a sensor-frame point into the world frame.
    #[inline]
    pub fn sensor_to_world(&self, p: &Vec3, sensor_height: f64) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(
            self.x + c * p.x - s * p.y,
            self.y + s * p.x + c * p.y,
            sensor_height + p.z,
        )
    }

    /// Maps a world-frame point into the sensor frame.
    #[inline]
    pub fn world_to_sensor(&self, p: &Vec3, sensor_height: f64) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.x;
        let dy = p.y - self.y;
        Vec3::new(c * dx + s * dy, -s * dx + c * dy, p.z - sensor_height)
    }

    /// Rotates a sensor-frame direction into the world frame.
    #[inline]
    pub fn rotate_to_world(&self, d: &Vec3) -> Vec3 {
        let (s, c) = self.yaw.sin_cos();
        Vec3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z)
    }
}

/// Sensor pose with the yaw rotation precomputed, for per-point transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorTransform {
    pub origin: Vec3,
    sin_yaw: f64,
    cos_yaw: f64,
}

impl SensorTransform {
    pub fn new(ugv: &UgvState, sensor_height: f64) -> Self {
        let (sin_yaw, cos_yaw) = ugv.yaw.sin_cos();
        Self {
            origin: ugv.sensor_origin(sensor_height),
            sin_yaw,
            cos_yaw,
        }
    }

    #[inline]
    pub fn rotate_to_world(&self, d: &Vec3) -> Vec3 {
        let (s, c) = (self.sin_yaw, self.cos_yaw);
        Vec3::new(c * d.x - s * d.y, s * d.x + c * d.y, d.z)
    }

    #[inline]
    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        self.origin + self.rotate_to_world(p)
    }

    #[inline]
    pub fn to_sensor(&self, p: &Vec3) -> Vec3 {
        let (s, c) = (self.sin_yaw, self.cos_yaw);
        let d = p - self.origin;
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }
}

/// Velocity command for the ground vehicle (world-frame translation plus yaw
/// rate).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UgvCommand {
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl UgvCommand {
    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.yaw_rate == 0.0
    }
}
