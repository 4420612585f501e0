//! Non-repetitive solid-state lidar scan pattern.
//!
//! Ray directions follow two sinusoids in azimuth and elevation whose
//! frequencies differ by the golden ratio. Because the ratio is irrational
//! the figure never closes, so a longer integration window visits more of
//! the field of view.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{azimuth_elevation, Vec3};

/// Golden ratio, used to derive the elevation frequency from the azimuth one.
pub const GOLDEN_RATIO: f64 = 1.618_033_988_749_895;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanPatternConfig {
    /// Horizontal field of view, degrees.
    pub fov_h: f64,
    /// Vertical field of view, degrees.
    pub fov_v: f64,
    /// Emitted points per second.
    pub point_rate: f64,
    /// Azimuth oscillation frequency, Hz. The elevation frequency is this
    /// value times the golden ratio.
    pub petal_freq_a: f64,
    /// Elevation phase offset, radians.
    pub phase: f64,
}

impl Default for ScanPatternConfig {
    fn default() -> Self {
        Self {
            fov_h: 81.7,
            fov_v: 25.1,
            point_rate: 4_800_000.0,
            petal_freq_a: 707.1,
            phase: 0.7,
        }
    }
}

impl ScanPatternConfig {
    pub fn petal_freq_b(&self) -> f64 {
        self.petal_freq_a * GOLDEN_RATIO
    }

    pub fn half_fov_h_rad(&self) -> f64 {
        self.fov_h.to_radians() / 2.0
    }

    pub fn half_fov_v_rad(&self) -> f64 {
        self.fov_v.to_radians() / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_h > 0.0 && self.fov_h < 180.0) {
            return Err(Error::config("scan.fov_h", "must lie in (0, 180) degrees"));
        }
        if !(self.fov_v > 0.0 && self.fov_v < 180.0) {
            return Err(Error::config("scan.fov_v", "must lie in (0, 180) degrees"));
        }
        if !(self.point_rate > 0.0 && self.point_rate.is_finite()) {
            return Err(Error::config("scan.point_rate", "must be positive"));
        }
        if !(self.petal_freq_a > 0.0 && self.petal_freq_a.is_finite()) {
            return Err(Error::config("scan.petal_freq_a", "must be positive"));
        }
        if !self.phase.is_finite() {
            return Err(Error::config("scan.phase", "must be finite"));
        }
        Ok(())
    }
}

/// One emitted ray: a unit direction in the sensor frame (x forward, y left,
/// z up) and its absolute emission time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub direction: Vec3,
    pub t: f64,
}

impl RaySample {
    pub fn azimuth_elevation(&self) -> (f64, f64) {
        azimuth_elevation(&self.direction)
    }
}

/// Precomputed pattern evaluator. Sample `i` of the global stream is emitted
/// at `i / point_rate`.
#[derive(Debug, Clone)]
pub struct ScanPattern {
    half_h: f64,
    half_v: f64,
    omega_a: f64,
    omega_b: f64,
    phase: f64,
    period: f64,
}

impl ScanPattern {
    pub fn new(cfg: &ScanPatternConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            half_h: cfg.half_fov_h_rad(),
            half_v: cfg.half_fov_v_rad(),
            omega_a: TAU * cfg.petal_freq_a,
            omega_b: TAU * cfg.petal_freq_b(),
            phase: cfg.phase,
            period: 1.0 / cfg.point_rate,
        })
    }

    /// Time between consecutive samples.
    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn time_of(&self, index: u64) -> f64 {
        index as f64 * self.period
    }

    /// Azimuth and elevation in radians at time `t`.
    #[inline]
    pub fn angles_at(&self, t: f64) -> (f64, f64) {
        let az = self.half_h * (self.omega_a * t).sin();
        let el = self.half_v * (self.omega_b * t + self.phase).sin();
        (az, el)
    }

    #[inline]
    pub fn direction_from_angles(az: f64, el: f64) -> Vec3 {
        let (sa, ca) = az.sin_cos();
        let (se, ce) = el.sin_cos();
        Vec3::new(ce * ca, ce * sa, se)
    }

    #[inline]
    pub fn sample_at(&self, t: f64) -> RaySample {
        let (az, el) = self.angles_at(t);
        RaySample {
            direction: Self::direction_from_angles(az, el),
            t,
        }
    }

    pub fn half_extents(&self) -> (f64, f64) {
        (self.half_h, self.half_v)
    }

    /// Azimuth and elevation of samples `first..first + count`, advanced by
    /// the same rotation recurrence as [`ScanPattern::run`].
    pub fn run_angles(&self, first: u64, count: u64) -> impl Iterator<Item = (u64, f64, f64)> + '_ {
        let t0 = self.time_of(first);
        let (mut sa, mut ca) = (self.omega_a * t0).sin_cos();
        let (mut sb, mut cb) = (self.omega_b * t0 + self.phase).sin_cos();
        let (dsa, dca) = (self.omega_a * self.period).sin_cos();
        let (dsb, dcb) = (self.omega_b * self.period).sin_cos();
        (first..first + count).map(move |i| {
            let out = (i, self.half_h * sa, self.half_v * sb);
            (sa, ca) = (sa * dca + ca * dsa, ca * dca - sa * dsa);
            (sb, cb) = (sb * dcb + cb * dsb, cb * dcb - sb * dsb);
            out
        })
    }

    /// Samples `first..first + count` of the global stream. The carrier
    /// phases are evaluated exactly at `first` and advanced by rotation
    /// afterwards, which avoids two transcendental calls per sample.
    pub fn run(&self, first: u64, count: u64) -> impl Iterator<Item = RaySample> + '_ {
        self.run_angles(first, count).map(move |(i, az, el)| RaySample {
            direction: Self::direction_from_angles(az, el),
            t: self.time_of(i),
        })
    }
}

/// Number of samples emitted in a window of length `dt`.
pub fn sample_count(point_rate: f64, dt: f64) -> usize {
    // Guard against representation error such as 240000 * 0.01 = 2399.9999..
    (point_rate * dt + 1e-9).floor().max(0.0) as usize
}

/// Ray directions emitted in `[t0, t0 + dt)`.
pub fn sample_directions(cfg: &ScanPatternConfig, t0: f64, dt: f64) -> Result<Vec<RaySample>> {
    if !(dt > 0.0) {
        return Err(Error::config("dt", "integration window must be positive"));
    }
    let pattern = ScanPattern::new(cfg)?;
    let n = sample_count(cfg.point_rate, dt);
    Ok((0..n)
        .map(|i| pattern.sample_at(t0 + i as f64 * pattern.period))
        .collect())
}

/// Fraction of `grid`-degree cells of the FoV rectangle visited by at least
/// one ray emitted in `[0, dt)`. A window shorter than one sample period
/// still contains the sample at t = 0.
pub fn coverage_fraction(cfg: &ScanPatternConfig, dt: f64, grid: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::config("dt", "integration window must be positive"));
    }
    if !(grid > 0.0) || grid >= cfg.fov_h || grid >= cfg.fov_v {
        return Err(Error::config(
            "grid",
            "cell size must be positive and smaller than both FoV extents",
        ));
    }
    let pattern = ScanPattern::new(cfg)?;
    let grid_rad = grid.to_radians();
    let (half_h, half_v) = pattern.half_extents();
    let nx = (cfg.fov_h / grid).ceil() as usize;
    let ny = (cfg.fov_v / grid).ceil() as usize;
    let mut visited = vec![false; nx * ny];
    let mut count = 0usize;
    let n = sample_count(cfg.point_rate, dt).max(1);
    for i in 0..n {
        let (az, el) = pattern.angles_at(i as f64 * pattern.period);
        let cx = (((az + half_h) / grid_rad) as usize).min(nx - 1);
        let cy = (((el + half_v) / grid_rad) as usize).min(ny - 1);
        let cell = &mut visited[cy * nx + cx];
        if !*cell {
            *cell = true;
            count += 1;
            if count == visited.len() {
                break;
            }
        }
    }
    Ok(count as f64 / visited.len() as f64)
}

/// Cell indices visited in `[t0, t0 + dt)`; used to compare disjoint windows.
pub fn visited_cells(cfg: &ScanPatternConfig, t0: f64, dt: f64, grid: f64) -> Result<Vec<bool>> {
    let pattern = ScanPattern::new(cfg)?;
    let grid_rad = grid.to_radians();
    let (half_h, half_v) = pattern.half_extents();
    let nx = (cfg.fov_h / grid).ceil() as usize;
    let ny = (cfg.fov_v / grid).ceil() as usize;
    let mut visited = vec![false; nx * ny];
    for i in 0..sample_count(cfg.point_rate, dt) {
        let (az, el) = pattern.angles_at(t0 + i as f64 * pattern.period);
        let cx = (((az + half_h) / grid_rad) as usize).min(nx - 1);
        let cy = (((el + half_v) / grid_rad) as usize).min(ny - 1);
        visited[cy * nx + cx] = true;
    }
    Ok(visited)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nominal_rate() -> ScanPatternConfig {
        ScanPatternConfig {
            point_rate: 240_000.0,
            ..Default::default()
        }
    }

    #[test]
    fn ten_millisecond_window_has_2400_samples_inside_fov() {
        let cfg = nominal_rate();
        let samples = sample_directions(&cfg, 0.0, 0.01).unwrap();
        assert_eq!(samples.len(), 2400);
        let (hh, hv) = (cfg.half_fov_h_rad(), cfg.half_fov_v_rad());
        for s in &samples {
            let (az, el) = s.azimuth_elevation();
            assert!(az.abs() <= hh + 1e-12 && el.abs() <= hv + 1e-12);
            assert!((s.direction.norm() - 1.0).abs() < 1e-9);
            assert!(s.t >= 0.0 && s.t < 0.01);
        }
        assert!(samples.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn first_sample_follows_parametric_form() {
        let cfg = nominal_rate();
        let s = sample_directions(&cfg, 0.0, 0.001).unwrap()[0];
        let (az, el) = s.azimuth_elevation();
        assert_relative_eq!(az, 0.0, epsilon = 1e-12);
        assert_relative_eq!(el, cfg.half_fov_v_rad() * cfg.phase.sin(), epsilon = 1e-12);
    }

    #[test]
    fn identical_calls_are_identical() {
        let cfg = ScanPatternConfig::default();
        let a = sample_directions(&cfg, 1.25, 0.003).unwrap();
        let b = sample_directions(&cfg, 1.25, 0.003).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.t.to_bits(), y.t.to_bits());
            for k in 0..3 {
                assert_eq!(x.direction[k].to_bits(), y.direction[k].to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_windows_and_rates() {
        let cfg = ScanPatternConfig::default();
        assert!(sample_directions(&cfg, 0.0, 0.0).is_err());
        assert!(sample_directions(&cfg, 0.0, -1.0).is_err());
        let bad = ScanPatternConfig {
            point_rate: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            sample_directions(&bad, 0.0, 0.1),
            Err(Error::Config { .. })
        ));
        assert!(coverage_fraction(&cfg, 0.1, 0.0).is_err());
        assert!(coverage_fraction(&cfg, 0.1, 30.0).is_err());
    }

    #[test]
    fn single_sample_covers_one_cell() {
        let cfg = ScanPatternConfig::default();
        let cells = cfg.fov_h.ceil() * cfg.fov_v.ceil();
        let c = coverage_fraction(&cfg, 1e-12, 1.0).unwrap();
        assert_relative_eq!(c, 1.0 / cells);
    }

    #[test]
    fn coverage_grows_with_integration_time() {
        let cfg = ScanPatternConfig::default();
        let ladder = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2];
        let cov: Vec<f64> = ladder
            .iter()
            .map(|&dt| coverage_fraction(&cfg, dt, 1.0).unwrap())
            .collect();
        for w in cov.windows(2) {
            assert!(w[1] >= w[0], "{cov:?}");
        }
        assert!(cov[6] >= cov[2]);
        assert!(cov[0] < 0.5, "short windows must leave most cells unvisited: {cov:?}");
    }

    #[test]
    fn long_integration_covers_the_fov() {
        let cfg = nominal_rate();
        let c = coverage_fraction(&cfg, 10.0, 1.0).unwrap();
        assert!(c >= 0.99, "coverage {c}");
    }

    #[test]
    fn disjoint_windows_visit_different_cells() {
        let cfg = nominal_rate();
        for (t0, t1) in [(0.0, 0.01), (0.01, 0.025), (0.3, 1.7)] {
            let a = visited_cells(&cfg, t0, 0.01, 1.0).unwrap();
            let b = visited_cells(&cfg, t1, 0.01, 1.0).unwrap();
            assert_ne!(a, b, "windows at {t0} and {t1} repeat");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn directions_stay_inside_fov(
            fov_h in 1.0f64..179.0,
            fov_v in 1.0f64..179.0,
            fa in 1.0f64..5000.0,
            phase in -10.0f64..10.0,
            t0 in 0.0f64..100.0,
        ) {
            let cfg = ScanPatternConfig { fov_h, fov_v, point_rate: 50_000.0, petal_freq_a: fa, phase };
            let samples = sample_directions(&cfg, t0, 0.004).unwrap();
            prop_assert_eq!(samples.len(), 200);
            for s in samples {
                let (az, el) = s.azimuth_elevation();
                prop_assert!(az.abs() <= cfg.half_fov_h_rad() + 1e-9);
                prop_assert!(el.abs() <= cfg.half_fov_v_rad() + 1e-9);
                prop_assert!((s.direction.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
