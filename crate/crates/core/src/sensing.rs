//! Empirical sensing model: expected on-target point count as a function of
//! distance and frame frequency, and the detection spacing law.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{azimuth_elevation, Vec3};
use crate::scan::{sample_count, RaySample, ScanPattern, ScanPatternConfig};
use crate::scene::{MavBody, NoiseConfig, PointSource, RayCaster, Scene, TrajectoryScript};
use crate::state::{SensorTransform, UgvState};

pub const MODEL_VERSION: u32 = 1;

/// Minimum per-frame point counts for reliable extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CountThresholds {
    pub n_min_hf: f64,
    pub n_min_mf: f64,
}

impl Default for CountThresholds {
    fn default() -> Self {
        Self {
            n_min_hf: 4.0,
            n_min_mf: 20.0,
        }
    }
}

impl CountThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_min_hf >= 1.0) {
            return Err(Error::config("tracker.thresholds.n_min_hf", "must be at least 1"));
        }
        if !(self.n_min_mf > self.n_min_hf) {
            return Err(Error::config(
                "tracker.thresholds.n_min_mf",
                "must exceed n_min_hf",
            ));
        }
        Ok(())
    }
}

/// Table of (mu, sigma) over a distance ladder and a frequency ladder, both
/// ascending. `mu[i][j]` belongs to `distances[i]` and `frequencies[j]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityModel {
    pub version: u32,
    pub distances: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountEstimate {
    pub mu: f64,
    pub sigma: f64,
    /// The query fell outside the calibrated hull and was clamped to it.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyChoice {
    pub f: f64,
    /// No frequency in the band reaches the requested count.
    pub insufficient: bool,
}

/// Locates `x` in the ascending `grid`: (lower index, weight of upper, clamped).
fn bracket(grid: &[f64], x: f64) -> (usize, f64, bool) {
    let n = grid.len();
    if n == 1 {
        return (0, 0.0, x != grid[0]);
    }
    if x <= grid[0] {
        return (0, 0.0, x < grid[0]);
    }
    if x >= grid[n - 1] {
        return (n - 2, 1.0, x > grid[n - 1]);
    }
    let hi = grid.partition_point(|&g| g <= x).min(n - 1);
    let lo = hi - 1;
    (lo, (x - grid[lo]) / (grid[hi] - grid[lo]), false)
}

impl DensityModel {
    pub fn is_calibrated(&self) -> bool {
        !self.distances.is_empty() && !self.frequencies.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported model version {}", self.version),
            ));
        }
        if !self.is_calibrated() {
            return Err(Error::State("density model is not calibrated".into()));
        }
        let strictly_ascending = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|x| x.is_finite());
        if !strictly_ascending(&self.distances) || self.distances[0] <= 0.0 {
            return Err(Error::config("distances", "must be positive and strictly ascending"));
        }
        if !strictly_ascending(&self.frequencies) || self.frequencies[0] <= 0.0 {
            return Err(Error::config("frequencies", "must be positive and strictly ascending"));
        }
        for (name, t) in [("mu", &self.mu), ("sigma", &self.sigma)] {
            if t.len() != self.distances.len() || t.iter().any(|r| r.len() != self.frequencies.len()) {
                return Err(Error::config(name, "table shape does not match the ladders"));
            }
            if t.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::config(name, "entries must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    pub fn max_distance(&self) -> f64 {
        self.distances.last().copied().unwrap_or(0.0)
    }

    /// Integration-time ladder (ascending) and the matching column indices.
    fn time_ladder(&self) -> (Vec<f64>, Vec<usize>) {
        let cols: Vec<usize> = (0..self.frequencies.len()).rev().collect();
        (cols.iter().map(|&j| 1.0 / self.frequencies[j]).collect(), cols)
    }

    fn interp(&self, table: &[Vec<f64>], d: f64, f: f64) -> (f64, bool) {
        let (times, cols) = self.time_ladder();
        let (i0, wd, cd) = bracket(&self.distances, d);
        let (k0, wt, ct) = bracket(&times, 1.0 / f);
        let i1 = (i0 + 1).min(self.distances.len() - 1);
        let k1 = (k0 + 1).min(times.len() - 1);
        let at = |i: usize, k: usize| table[i][cols[k]];
        let v0 = at(i0, k0) * (1.0 - wt) + at(i0, k1) * wt;
        let v1 = at(i1, k0) * (1.0 - wt) + at(i1, k1) * wt;
        (v0 * (1.0 - wd) + v1 * wd, cd || ct)
    }

    /// Bilinear in (distance, 1/f); queries outside the hull are clamped.
    pub fn expected_count(&self, d: f64, f: f64) -> Result<CountEstimate> {
        if !self.is_calibrated() {
            return Err(Error::State("density model is not calibrated".into()));
        }
        if !(f > 0.0) || !d.is_finite() {
            return Err(Error::Range(format!("invalid query d = {d}, f = {f}")));
        }
        let (mu, clamped) = self.interp(&self.mu, d, f);
        let (sigma, _) = self.interp(&self.sigma, d, f);
        Ok(CountEstimate { mu, sigma, clamped })
    }

    /// Largest frequency in `band` whose expected count reaches `n`, or the
    /// band floor flagged insufficient.
    pub fn min_frequency_for_count(&self, d: f64, n: f64, band: (f64, f64)) -> Result<FrequencyChoice> {
        if !self.is_calibrated() {
            return Err(Error::State("density model is not calibrated".into()));
        }
        let (lo, hi) = band;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Range(format!("empty frequency band [{lo}, {hi}]")));
        }
        let mu_at = |i_time: f64| self.interp(&self.mu, d, 1.0 / i_time).0;
        let (i_min, i_max) = (1.0 / hi, 1.0 / lo);
        if mu_at(i_min) >= n {
            return Ok(FrequencyChoice { f: hi, insufficient: false });
        }
        if mu_at(i_max) < n {
            return Ok(FrequencyChoice { f: lo, insufficient: true });
        }
        // mu is piecewise linear in integration time at fixed distance.
        let (times, _) = self.time_ladder();
        let mut knots = vec![i_min];
        knots.extend(times.iter().copied().filter(|&t| t > i_min && t < i_max));
        knots.push(i_max);
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (ma, mb) = (mu_at(a), mu_at(b));
            if ma < n && mb >= n {
                let t = a + (n - ma) / (mb - ma) * (b - a);
                let mut f = (1.0 / t).clamp(lo, hi);
                // Undo rounding so the re-query never lands below n.
                while f > lo && self.interp(&self.mu, d, f).0 < n {
                    f = (f * (1.0 - 1e-12)).max(lo);
                }
                return Ok(FrequencyChoice { f, insufficient: false });
            }
        }
        Ok(FrequencyChoice { f: lo, insufficient: false })
    }

    /// Enforces mu nonincreasing in distance and nondecreasing in
    /// integration time. Returns the largest change applied to any cell.
    pub fn smooth_monotone(&mut self) -> f64 {
        let before = self.mu.clone();
        let nd = self.distances.len();
        let nf = self.frequencies.len();
        for _ in 0..50 {
            let mut changed = false;
            for j in 0..nf {
                // Along distance: nonincreasing.
                let col: Vec<f64> = (0..nd).map(|i| -self.mu[i][j]).collect();
                let fit = pava(&col);
                for (row, v) in self.mu.iter_mut().zip(&fit) {
                    if (-v - row[j]).abs() > 1e-12 {
                        changed = true;
                    }
                    row[j] = -v;
                }
            }
            for i in 0..nd {
                // Along integration time (descending frequency): nondecreasing.
                let row: Vec<f64> = (0..nf).rev().map(|j| self.mu[i][j]).collect();
                let fit = pava(&row);
                for (k, j) in (0..nf).rev().enumerate() {
                    if (fit[k] - self.mu[i][j]).abs() > 1e-12 {
                        changed = true;
                    }
                    self.mu[i][j] = fit[k];
                }
            }
            if !changed {
                break;
            }
        }
        // Residual violations: smallest bimonotone majorant.
        for i in (0..nd).rev() {
            for j in (0..nf).rev() {
                let mut m = self.mu[i][j];
                if i + 1 < nd {
                    m = m.max(self.mu[i + 1][j]);
                }
                if j + 1 < nf {
                    m = m.max(self.mu[i][j + 1]);
                }
                self.mu[i][j] = m;
            }
        }
        before
            .iter()
            .flatten()
            .zip(self.mu.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks the monotonicity invariants with tolerance `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        let nd = self.distances.len();
        let nf = self.frequencies.len();
        for i in 0..nd {
            for j in 0..nf {
                if i + 1 < nd && self.mu[i + 1][j] > self.mu[i][j] + tol {
                    return false;
                }
                if j + 1 < nf && self.mu[i][j + 1] > self.mu[i][j] + tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: DensityModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

/// Pool-adjacent-violators fit of a nondecreasing sequence (unit weights).
pub fn pava(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m1, n1) = blocks[blocks.len() - 1];
            let (m0, n0) = blocks[blocks.len() - 2];
            if m0 <= m1 {
                break;
            }
            blocks.pop();
            let n = n0 + n1;
            *blocks.last_mut().unwrap() = ((m0 * n0 as f64 + m1 * n1 as f64) / n as f64, n);
        }
    }
    blocks.into_iter().flat_map(|(m, n)| std::iter::repeat_n(m, n)).collect()
}

/// Expected distance between consecutive detections.
pub fn expected_spacing(speed: f64, f: f64) -> Result<f64> {
    if !(f > 0.0) {
        return Err(Error::Range(format!("frequency must be positive, got {f}")));
    }
    Ok(speed.abs() / f)
}

/// Detection spacing paired with the density model's reliability verdict.
#[derive(Debug, Clone, Copy)]
pub struct SpacingModel<'a> {
    pub density: &'a DensityModel,
    pub n_min: f64,
}

impl SpacingModel<'_> {
    pub fn spacing(&self, speed: f64, f: f64) -> Result<f64> {
        expected_spacing(speed, f)
    }

    /// Whether a target at distance `d` yields enough points at `f`.
    pub fn reliable(&self, d: f64, f: f64) -> Result<bool> {
        Ok(self.density.expected_count(d, f)?.mu >= self.n_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub distances: Vec<f64>,
    pub frequencies: Vec<f64>,
    /// Frames integrated at the lowest frequency; higher frequencies get
    /// proportionally more.
    pub repetitions: usize,
    /// Elevation of the hover point above the sensor's horizontal plane.
    pub elevation_deg: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            distances: vec![1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 13.0, 17.0, 22.0, 30.0],
            frequencies: vec![2.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            repetitions: 10,
            elevation_deg: 5.0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self, scan: &ScanPatternConfig) -> Result<()> {
        let ascending = |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]) && v[0] > 0.0;
        if !ascending(&self.distances) {
            return Err(Error::config(
                "calibration.distances",
                "must be nonempty, positive and strictly ascending",
            ));
        }
        if !ascending(&self.frequencies) {
            return Err(Error::config(
                "calibration.frequencies",
                "must be nonempty, positive and strictly ascending",
            ));
        }
        if self.repetitions < 10 {
            return Err(Error::config("calibration.repetitions", "must be at least 10"));
        }
        if !(self.elevation_deg.abs() < scan.fov_v / 2.0) {
            return Err(Error::config(
                "calibration.elevation_deg",
                "hover point must lie inside the vertical field of view",
            ));
        }
        Ok(())
    }
}

/// Per-frame MAV point counts for a hover at distance `d`, one vector per
/// frequency. The vehicle is placed straight ahead at the configured
/// elevation with no other geometry and no clutter.
pub fn hover_counts(
    body: &MavBody,
    noise: &NoiseConfig,
    scan: &ScanPatternConfig,
    cal: &CalibrationConfig,
    d: f64,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    let e = cal.elevation_deg.to_radians();
    let sensor_height = 1.0;
    let position = Vec3::new(d * e.cos(), 0.0, sensor_height + d * e.sin());
    let f_min = cal.frequencies[0];
    let window = cal.repetitions as f64 / f_min;
    let scene = Scene {
        ground_z: None,
        sensor_height,
        obstacles: Vec::new(),
        mav: Some(MavBody {
            trajectory: TrajectoryScript::hover(position, window),
            visible_until: None,
            ..body.clone()
        }),
        noise: NoiseConfig {
            clutter_rate: 0.0,
            ..*noise
        },
        ..Scene::default()
    };
    scene.validate()?;
    let caster = RayCaster::new(&scene, scan.point_rate);
    let geometry = caster.block_geometry(Some(position));
    let sensor = SensorTransform::new(&UgvState::default(), sensor_height);

    // Angular bounding box of the box corners; rays outside it cannot hit.
    let b = scene.mav_box(position).expect("scene has a vehicle");
    let (mut az_lo, mut az_hi, mut el_lo, mut el_hi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for k in 0..8 {
        let c = Vec3::new(
            if k & 1 == 0 { b.min().x } else { b.max().x },
            if k & 2 == 0 { b.min().y } else { b.max().y },
            if k & 4 == 0 { b.min().z } else { b.max().z },
        );
        let (az, el) = azimuth_elevation(&sensor.to_sensor(&c));
        az_lo = az_lo.min(az);
        az_hi = az_hi.max(az);
        el_lo = el_lo.min(el);
        el_hi = el_hi.max(el);
    }
    let margin = 1e-6;

    let pattern = ScanPattern::new(scan)?;
    let n = sample_count(scan.point_rate, window) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits: Vec<f64> = Vec::new();
    for (i, az, el) in pattern.run_angles(0, n) {
        if az < az_lo - margin || az > az_hi + margin || el < el_lo - margin || el > el_hi + margin {
            continue;
        }
        let sample = RaySample {
            direction: ScanPattern::direction_from_angles(az, el),
            t: pattern.time_of(i),
        };
        if let Some(p) = caster.cast(&geometry, &sensor, &sample, &mut rng) {
            if p.source == PointSource::Mav {
                hits.push(p.t);
            }
        }
    }
    cal.frequencies
        .iter()
        .map(|&f| {
            let frames = (window * f + 1e-9).floor() as usize;
            if frames == 0 {
                return Err(Error::Insufficient(format!(
                    "no complete frame at {f} Hz within {window} s"
                )));
            }
            let mut counts = vec![0u32; frames];
            for &t in &hits {
                let k = (t * f + 1e-9).floor() as usize;
                if k < frames {
                    counts[k] += 1;
                }
            }
            Ok(counts)
        })
        .collect()
}

fn mean_std(counts: &[u32]) -> (f64, f64) {
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    if counts.len() < 2 {
        return (mean, 0.0);
    }
    let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Hovers the vehicle over the distance ladder and tabulates per-frame MAV
/// point counts at every ladder frequency.
pub fn calibrate(
    template: &Scene,
    scan: &ScanPatternConfig,
    cal: &CalibrationConfig,
    seed: u64,
) -> Result<DensityModel> {
    scan.validate()?;
    cal.validate(scan)?;
    let body = template
        .mav
        .clone()
        .unwrap_or_else(|| MavBody::new(TrajectoryScript::hover(Vec3::zeros(), 1.0)));
    let mut mu = Vec::with_capacity(cal.distances.len());
    let mut sigma = Vec::with_capacity(cal.distances.len());
    for (i, &d) in cal.distances.iter().enumerate() {
        let seed_d = seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
        let counts = hover_counts(&body, &template.noise, scan, cal, d, seed_d)?;
        let (m, s): (Vec<f64>, Vec<f64>) = counts.iter().map(|c| mean_std(c)).unzip();
        log::debug!("calibration d = {d}: mu = {m:?}");
        if m.iter().all(|&x| x == 0.0) {
            return Err(Error::Insufficient(format!("no returns from the target at d = {d} m")));
        }
        mu.push(m);
        sigma.push(s);
    }
    let mut model = DensityModel {
        version: MODEL_VERSION,
        distances: cal.distances.clone(),
        frequencies: cal.frequencies.clone(),
        mu,
        sigma,
    };
    let adjusted = model.smooth_monotone();
    log::debug!("isotonic smoothing moved cells by up to {adjusted:.3} points");
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy() -> DensityModel {
        DensityModel {
            version: MODEL_VERSION,
            distances: vec![2.0, 5.0, 10.0],
            frequencies: vec![5.0, 10.0, 20.0],
            mu: vec![
                vec![400.0, 200.0, 100.0],
                vec![64.0, 32.0, 16.0],
                vec![16.0, 8.0, 4.0],
            ],
            sigma: vec![vec![10.0, 7.0, 5.0], vec![4.0, 3.0, 2.0], vec![2.0, 1.5, 1.0]],
        }
    }

    #[test]
    fn nodes_and_midpoints() {
        let m = toy();
        let c = m.expected_count(5.0, 10.0).unwrap();
        assert_eq!((c.mu, c.sigma, c.clamped), (32.0, 3.0, false));
        let mid = m.expected_count(7.5, 10.0).unwrap();
        assert_relative_eq!(mid.mu, 20.0);
        // Midway in integration time between 0.1 s and 0.2 s.
        let c = m.expected_count(5.0, 1.0 / 0.15).unwrap();
        assert_relative_eq!(c.mu, 48.0, epsilon = 1e-9);
    }

    #[test]
    fn clamps_outside_the_hull() {
        let m = toy();
        let c = m.expected_count(40.0, 10.0).unwrap();
        assert!(c.clamped);
        assert_eq!(c.mu, 8.0);
        assert!(m.expected_count(5.0, 200.0).unwrap().clamped);
    }

    #[test]
    fn uncalibrated_is_a_state_error() {
        let m = DensityModel::default();
        assert!(matches!(m.expected_count(5.0, 10.0), Err(Error::State(_))));
        assert!(matches!(
            m.min_frequency_for_count(5.0, 4.0, (20.0, 100.0)),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn frequency_inversion() {
        let m = toy();
        let c = m.min_frequency_for_count(5.0, 0.0, (5.0, 20.0)).unwrap();
        assert_eq!(c.f, 20.0);
        let c = m.min_frequency_for_count(5.0, 1e6, (5.0, 20.0)).unwrap();
        assert_eq!((c.f, c.insufficient), (5.0, true));
        let c = m.min_frequency_for_count(5.0, 20.0, (5.0, 20.0)).unwrap();
        assert!(!c.insufficient);
        assert!(m.expected_count(5.0, c.f).unwrap().mu >= 20.0);
        // mu(5 m, I) = 320 I on [0.05, 0.1], so mu = 20 at I = 1/16 s.
        assert_relative_eq!(c.f, 16.0, epsilon = 1e-6);
    }

    #[test]
    fn pava_fits_nondecreasing() {
        assert_eq!(pava(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(pava(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(pava(&[]), Vec::<f64>::new());
    }

    #[test]
    fn smoothing_restores_monotonicity() {
        let mut m = toy();
        m.mu[1][0] = 500.0;
        m.mu[2][2] = 9.0;
        assert!(!m.is_monotone(0.0));
        m.smooth_monotone();
        assert!(m.is_monotone(0.0));
    }

    #[test]
    fn json_round_trip() {
        let m = toy();
        let s = m.to_json().unwrap();
        for key in ["version", "distances", "frequencies", "mu", "sigma"] {
            assert!(s.contains(&format!("\"{key}\"")));
        }
        assert_eq!(DensityModel::from_json(&s).unwrap(), m);
    }

    #[test]
    fn spacing_is_speed_over_frequency() {
        assert_eq!(expected_spacing(0.0, 10.0).unwrap(), 0.0);
        assert_relative_eq!(expected_spacing(2.0, 10.0).unwrap(), 0.2);
        assert!(expected_spacing(1.0, 0.0).is_err());
    }
}
