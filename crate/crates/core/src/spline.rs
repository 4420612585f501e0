//! Piecewise cubic Hermite curves constrained by knot positions and knot
//! velocities. Second-derivative continuity is not imposed, so a knot may
//! carry an abrupt change of acceleration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Knot>", into = "Vec<Knot>")]
pub struct HermiteTrajectory {
    knots: Vec<Knot>,
}

impl TryFrom<Vec<Knot>> for HermiteTrajectory {
    type Error = Error;

    fn try_from(knots: Vec<Knot>) -> Result<Self> {
        HermiteTrajectory::new(knots)
    }
}

impl From<HermiteTrajectory> for Vec<Knot> {
    fn from(h: HermiteTrajectory) -> Self {
        h.knots
    }
}

impl HermiteTrajectory {
    pub fn new(knots: Vec<Knot>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Insufficient(format!(
                "a Hermite trajectory needs at least 2 knots, got {}",
                knots.len()
            )));
        }
        for w in knots.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::Range(format!(
                    "knot times must be strictly increasing ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        if knots.iter().any(|k| {
            !k.t.is_finite() || k.p.iter().any(|c| !c.is_finite()) || k.v.iter().any(|c| !c.is_finite())
        }) {
            return Err(Error::Range("knots must be finite".into()));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn start_time(&self) -> f64 {
        self.knots[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.knots[self.knots.len() - 1].t
    }

    fn segment(&self, t: f64) -> Result<(usize, f64, f64)> {
        if !(t >= self.start_time() && t <= self.end_time()) {
            return Err(Error::Range(format!(
                "t = {t} outside [{}, {}]",
                self.start_time(),
                self.end_time()
            )));
        }
        // Index of the first knot strictly after t, minus one.
        let i = self
            .knots
            .partition_point(|k| k.t <= t)
            .saturating_sub(1)
            .min(self.knots.len() - 2);
        let h = self.knots[i + 1].t - self.knots[i].t;
        let s = (t - self.knots[i].t) / h;
        Ok((i, s, h))
    }

    pub fn position(&self, t: f64) -> Result<Vec3> {
        let (i, s, h) = self.segment(t)?;
        let (a, b) = (&self.knots[i], &self.knots[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(a.p * h00 + a.v * (h10 * h) + b.p * h01 + b.v * (h11 * h))
    }

    pub fn velocity(&self, t: f64) -> Result<Vec3> {
        let (i, s, h) = self.segment(t)?;
        let (a, b) = (&self.knots[i], &self.knots[i + 1]);
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        Ok(a.p * d00 + a.v * d10 + b.p * d01 + b.v * d11)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k(t: f64, p: [f64; 3], v: [f64; 3]) -> Knot {
        Knot {
            t,
            p: Vec3::from(p),
            v: Vec3::from(v),
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(matches!(
            HermiteTrajectory::new(vec![k(0.0, [0.0; 3], [0.0; 3])]),
            Err(Error::Insufficient(_))
        ));
        assert!(matches!(
            HermiteTrajectory::new(vec![k(1.0, [0.0; 3], [0.0; 3]), k(1.0, [1.0; 3], [0.0; 3])]),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn chord_consistent_velocities_give_a_line() {
        let h = HermiteTrajectory::new(vec![
            k(0.0, [0.0, 0.0, 1.0], [2.0, -1.0, 0.0]),
            k(2.0, [4.0, -2.0, 1.0], [2.0, -1.0, 0.0]),
        ])
        .unwrap();
        let mid = h.position(1.0).unwrap();
        assert_relative_eq!(mid, Vec3::new(2.0, -1.0, 1.0), epsilon = 1e-12);
        for t in [0.1, 0.7, 1.3, 1.9] {
            let p = h.position(t).unwrap();
            assert_relative_eq!(p, Vec3::new(2.0 * t, -t, 1.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn out_of_range_queries_fail() {
        let h = HermiteTrajectory::new(vec![k(0.0, [0.0; 3], [0.0; 3]), k(1.0, [1.0; 3], [0.0; 3])])
            .unwrap();
        assert!(h.position(-0.1).is_err());
        assert!(h.velocity(1.1).is_err());
        assert!(h.position(1.0).is_ok());
    }
}
