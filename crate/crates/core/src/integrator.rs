//! Splits the raw point stream into three concurrent frame sequences with
//! independently adjustable integration times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::{LidarPoint, SimulatedStream, UgvSchedule};
use crate::state::UgvState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    /// Medium frequency: coarse but persistent tracking.
    Mf,
    /// High frequency: sparse frames, fine-grained estimation.
    Hf,
    /// Low frequency: trajectory validation.
    Lf,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Mf, Modality::Hf, Modality::Lf];

    /// Allowed frame-frequency band in Hz.
    pub fn band(&self) -> (f64, f64) {
        match self {
            Modality::Hf => (20.0, 100.0),
            Modality::Mf => (5.0, 20.0),
            Modality::Lf => (1e-3, 1.0),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Hf => "HF",
            Modality::Mf => "MF",
            Modality::Lf => "LF",
        }
    }
}

/// Frame frequencies of the three modalities, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSet {
    pub f_hf: f64,
    pub f_mf: f64,
    pub f_lf: f64,
}

impl Default for RateSet {
    fn default() -> Self {
        Self {
            f_hf: 50.0,
            f_mf: 10.0,
            f_lf: 0.5,
        }
    }
}

impl RateSet {
    pub fn get(&self, m: Modality) -> f64 {
        match m {
            Modality::Hf => self.f_hf,
            Modality::Mf => self.f_mf,
            Modality::Lf => self.f_lf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for m in Modality::ALL {
            let (lo, hi) = m.band();
            let f = self.get(m);
            if !(f >= lo && f <= hi) {
                return Err(Error::config(
                    format!("rates.f_{}", m.as_str().to_lowercase()),
                    format!("{f} Hz outside [{lo}, {hi}]"),
                ));
            }
        }
        if !(self.f_hf > self.f_mf && self.f_mf > self.f_lf) {
            return Err(Error::config("rates", "require f_HF > f_MF > f_LF"));
        }
        Ok(())
    }
}

/// Coordinate frame of a frame's points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameCoords {
    /// Raw sensor-frame points, with the carrier pose at the frame start.
    /// Motion of the carrier within the frame is not compensated.
    Sensor(UgvState),
    /// Points already mapped to the world frame.
    World,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub modality: Modality,
    pub t_start: f64,
    pub integration_time: f64,
    pub points: Vec<LidarPoint>,
    pub coords: FrameCoords,
}

impl Frame {
    pub fn t_end(&self) -> f64 {
        self.t_start + self.integration_time
    }

    pub fn frequency(&self) -> f64 {
        1.0 / self.integration_time
    }

    /// Points mapped to the world frame.
    pub fn world_points(&self, sensor_height: f64) -> impl Iterator<Item = Vec3> + '_ {
        let pose = match self.coords {
            FrameCoords::Sensor(pose) => Some(pose),
            FrameCoords::World => None,
        };
        self.points.iter().map(move |p| match pose {
            Some(pose) => pose.sensor_to_world(&p.p, sensor_height),
            None => p.p,
        })
    }
}

/// Piecewise-constant frequency request over time. A change requested at
/// time `t` applies to the first frame starting at or after `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSchedule {
    changes: Vec<(f64, f64)>,
}

impl RateSchedule {
    pub fn constant(f: f64) -> Self {
        Self {
            changes: vec![(f64::NEG_INFINITY, f)],
        }
    }

    pub fn with_change(mut self, t: f64, f: f64) -> Self {
        self.push(t, f);
        self
    }

    pub fn push(&mut self, t: f64, f: f64) {
        let i = self.changes.partition_point(|c| c.0 <= t);
        self.changes.insert(i, (t, f));
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        // Frame starts are accumulated sums; absorb representation error.
        let i = self
            .changes
            .partition_point(|c| c.0 <= t + 1e-9)
            .saturating_sub(1);
        self.changes[i].1
    }
}

/// Emitted when a requested rate falls outside the modality band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateWarning {
    pub modality: Modality,
    pub t: f64,
    pub requested: f64,
    pub applied: f64,
}

/// Incremental frame builder for one modality.
///
/// Frame `k` after the last rate change starts at `anchor + k / f`, which
/// keeps boundaries free of accumulated rounding.
#[derive(Debug, Clone)]
pub struct FrameAssembler {
    modality: Modality,
    clamp_to_band: bool,
    anchor: f64,
    index: u64,
    rate: f64,
    requested: Option<f64>,
    current: Frame,
    warnings: Vec<RateWarning>,
}

impl FrameAssembler {
    /// `clamp_to_band = false` lets fixed-rate baselines run outside the
    /// modality band.
    pub fn new(modality: Modality, t0: f64, rate: f64, coords: FrameCoords, clamp_to_band: bool) -> Self {
        let mut a = Self {
            modality,
            clamp_to_band,
            anchor: t0,
            index: 0,
            rate,
            requested: None,
            current: Frame {
                modality,
                t_start: t0,
                integration_time: 1.0,
                points: Vec::new(),
                coords,
            },
            warnings: Vec::new(),
        };
        a.rate = a.admit(rate, t0);
        a.current.integration_time = 1.0 / a.rate;
        a
    }

    fn admit(&mut self, requested: f64, t: f64) -> f64 {
        if !self.clamp_to_band {
            return requested;
        }
        let (lo, hi) = self.modality.band();
        let applied = if requested.is_nan() { lo } else { requested.clamp(lo, hi) };
        if applied != requested {
            log::warn!(
                "{} rate {requested} Hz clamped to {applied} Hz at t = {t:.3}",
                self.modality.as_str()
            );
            self.warnings.push(RateWarning {
                modality: self.modality,
                t,
                requested,
                applied,
            });
        }
        applied
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn current_rate(&self) -> f64 {
        self.rate
    }

    pub fn frame_start(&self) -> f64 {
        self.current.t_start
    }

    pub fn frame_end(&self) -> f64 {
        self.anchor + (self.index + 1) as f64 / self.rate
    }

    /// Requests a new frequency for the next frame.
    pub fn set_rate(&mut self, f: f64) {
        self.requested = Some(f);
    }

    /// Changes the rate of the frame that was just opened. It must not hold
    /// any point yet, so the partition is unaffected.
    pub fn retune(&mut self, f: f64) -> Result<()> {
        if !self.current.points.is_empty() {
            return Err(Error::State(format!(
                "{} frame at t = {} already holds points",
                self.modality.as_str(),
                self.current.t_start
            )));
        }
        self.requested = None;
        let rate = self.admit(f, self.current.t_start);
        self.anchor = self.current.t_start;
        self.index = 0;
        self.rate = rate;
        self.current.integration_time = 1.0 / rate;
        Ok(())
    }

    pub fn warnings(&self) -> &[RateWarning] {
        &self.warnings
    }

    pub fn take_warnings(&mut self) -> Vec<RateWarning> {
        std::mem::take(&mut self.warnings)
    }

    /// Adds a point; the caller guarantees it lies inside the current frame.
    #[inline]
    pub fn push(&mut self, p: LidarPoint) {
        debug_assert!(p.t >= self.current.t_start && p.t < self.frame_end());
        self.current.points.push(p);
    }

    #[inline]
    pub fn push_world(&mut self, t: f64, world: Vec3, source: crate::scene::PointSource) {
        self.current.points.push(LidarPoint { t, p: world, source });
    }

    /// Closes the current frame and opens the next one.
    pub fn close(&mut self, next_coords: FrameCoords) -> Frame {
        let next_start = self.frame_end();
        self.current.integration_time = next_start - self.current.t_start;
        let mut next_rate = self.rate;
        if let Some(req) = self.requested.take() {
            next_rate = self.admit(req, next_start);
        }
        if next_rate != self.rate {
            self.anchor = next_start;
            self.index = 0;
            self.rate = next_rate;
        } else {
            self.index += 1;
        }
        let next = Frame {
            modality: self.modality,
            t_start: next_start,
            integration_time: self.frame_end() - next_start,
            points: Vec::new(),
            coords: next_coords,
        };
        std::mem::replace(&mut self.current, next)
    }
}

fn pose_coords(ugv: &UgvSchedule, t: f64) -> FrameCoords {
    FrameCoords::Sensor(ugv.state_at(t))
}

/// Cuts a recorded stream into frames of one modality. Frames start at t = 0
/// and cover the whole stream duration; the last frame may extend past it.
pub fn tap(
    stream: &SimulatedStream,
    modality: Modality,
    schedule: &RateSchedule,
) -> (Vec<Frame>, Vec<RateWarning>) {
    tap_points(&stream.points, stream.duration, &stream.ugv, modality, schedule, true)
}

/// [`tap`] over a bare point slice.
pub fn tap_points(
    points: &[LidarPoint],
    duration: f64,
    ugv: &UgvSchedule,
    modality: Modality,
    schedule: &RateSchedule,
    clamp_to_band: bool,
) -> (Vec<Frame>, Vec<RateWarning>) {
    let mut asm = FrameAssembler::new(
        modality,
        0.0,
        schedule.rate_at(0.0),
        pose_coords(ugv, 0.0),
        clamp_to_band,
    );
    let mut frames = Vec::new();
    let close = |asm: &mut FrameAssembler, frames: &mut Vec<Frame>| {
        let next_start = asm.frame_end();
        asm.set_rate(schedule.rate_at(next_start));
        frames.push(asm.close(pose_coords(ugv, next_start)));
    };
    for p in points {
        while p.t >= asm.frame_end() {
            close(&mut asm, &mut frames);
        }
        asm.push(*p);
    }
    while asm.frame_start() < duration - 1e-9 {
        close(&mut asm, &mut frames);
    }
    (frames, asm.take_warnings())
}
