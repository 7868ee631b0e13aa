use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::sim::SimTime;

use super::PlantError;

/// Repeating point-to-point move: out by `distance`, dwell, back, dwell.
/// Each leg accelerates at `acceleration` up to `velocity`, cruises, and
/// decelerates symmetrically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trapezoid<T> {
    /// mm
    pub distance: T,
    /// mm/s
    pub velocity: T,
    /// mm/s²
    pub acceleration: T,
    /// s
    pub dwell: T,
}

impl<T: Scalar> Default for Trapezoid<T> {
    fn default() -> Self {
        Trapezoid {
            distance: T::of(10.0),
            velocity: T::of(10.0),
            acceleration: T::of(200.0),
            dwell: T::of(0.2),
        }
    }
}

impl<T: Scalar> Trapezoid<T> {
    pub fn validate(&self) -> Result<(), PlantError> {
        let ok = self.distance > T::zero()
            && self.velocity > T::zero()
            && self.acceleration > T::zero()
            && self.dwell >= T::zero();
        if ok {
            Ok(())
        } else {
            Err(PlantError::Config("trapezoid parameters must be positive".into()))
        }
    }

    /// (ramp time, cruise time, peak velocity) of one leg.
    fn leg(&self) -> (T, T, T) {
        let two = T::of(2.0);
        let ramp = self.velocity / self.acceleration;
        let ramp_dist = self.acceleration * ramp * ramp / two;
        if two * ramp_dist >= self.distance {
            let ramp = (self.distance / self.acceleration).sqrt();
            (ramp, T::zero(), self.acceleration * ramp)
        } else {
            (ramp, (self.distance - two * ramp_dist) / self.velocity, self.velocity)
        }
    }

    fn leg_position(&self, s: T) -> T {
        let two = T::of(2.0);
        let (ramp, cruise, peak) = self.leg();
        let a = self.acceleration;
        let total = two * ramp + cruise;
        if s <= T::zero() {
            T::zero()
        } else if s < ramp {
            a * s * s / two
        } else if s < ramp + cruise {
            a * ramp * ramp / two + peak * (s - ramp)
        } else if s < total {
            let rem = total - s;
            self.distance - a * rem * rem / two
        } else {
            self.distance
        }
    }

    pub fn period(&self) -> T {
        let (ramp, cruise, _) = self.leg();
        T::of(2.0) * (T::of(2.0) * ramp + cruise + self.dwell)
    }

    pub fn setpoint_at(&self, secs: T) -> T {
        let (ramp, cruise, _) = self.leg();
        let mv = T::of(2.0) * ramp + cruise;
        let t = secs % self.period();
        if t < mv {
            self.leg_position(t)
        } else if t < mv + self.dwell {
            self.distance
        } else if t < T::of(2.0) * mv + self.dwell {
            self.distance - self.leg_position(t - mv - self.dwell)
        } else {
            T::zero()
        }
    }
}

/// Reference position as a function of time since motion start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trajectory<T> {
    Trapezoid(Trapezoid<T>),
    /// Piecewise-linear through `(time, setpoint mm)` points; holds the last value.
    Table { points: Vec<(SimTime, T)> },
}

impl<T: Scalar> Default for Trajectory<T> {
    fn default() -> Self {
        Trajectory::Trapezoid(Trapezoid::default())
    }
}

#[derive(Deserialize)]
struct Row {
    time_ms: f64,
    setpoint_mm: f64,
}

impl<T: Scalar> Trajectory<T> {
    pub fn validate(&self) -> Result<(), PlantError> {
        match self {
            Trajectory::Trapezoid(t) => t.validate(),
            Trajectory::Table { points } => {
                if points.is_empty() {
                    return Err(PlantError::Trajectory("trajectory table is empty".into()));
                }
                if points.windows(2).any(|w| w[1].0 < w[0].0) {
                    return Err(PlantError::Trajectory("trajectory times must be non-decreasing".into()));
                }
                Ok(())
            }
        }
    }

    pub fn setpoint(&self, since_start: SimTime) -> T {
        match self {
            Trajectory::Trapezoid(t) => t.setpoint_at(T::of(since_start.as_secs_f64())),
            Trajectory::Table { points } => {
                let i = points.partition_point(|(t, _)| *t <= since_start);
                if i == 0 {
                    return points.first().map_or(T::zero(), |p| p.1);
                }
                if i == points.len() {
                    return points[i - 1].1;
                }
                let (t0, y0) = points[i - 1];
                let (t1, y1) = points[i];
                let span = (t1 - t0).as_micros() as f64;
                let frac = T::of((since_start - t0).as_micros() as f64 / span);
                y0 + (y1 - y0) * frac
            }
        }
    }

    /// Reads a `time_ms,setpoint_mm` CSV with a header row.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, PlantError> {
        let mut reader = csv::Reader::from_reader(input);
        let mut points = Vec::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| PlantError::Trajectory(format!("row {}: {e}", i + 2)))?;
            if !(row.time_ms >= 0.0) || !row.setpoint_mm.is_finite() {
                return Err(PlantError::Trajectory(format!("row {}: invalid values", i + 2)));
            }
            points.push((SimTime::from_millis_f64(row.time_ms), T::of(row.setpoint_mm)));
        }
        let traj = Trajectory::Table { points };
        traj.validate()?;
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_profile_points() {
        let t = Trapezoid::<f64>::default();
        // ramp 0.05 s covers 0.25 mm, cruise 0.95 s
        assert_eq!(t.setpoint_at(0.0), 0.0);
        assert!((t.setpoint_at(0.05) - 0.25).abs() < 1e-12);
        assert!((t.setpoint_at(0.55) - 5.25).abs() < 1e-12);
        assert_eq!(t.setpoint_at(1.1), 10.0);
        assert!((t.period() - 2.5).abs() < 1e-12);
        assert!(t.setpoint_at(2.5).abs() < 1e-9);
        assert!((t.setpoint_at(1.25 + 0.55) - 4.75).abs() < 1e-9);
    }

    #[test]
    fn short_moves_become_triangular() {
        let t = Trapezoid::<f64> { distance: 0.1, velocity: 10.0, acceleration: 200.0, dwell: 0.0 };
        let (ramp, cruise, peak) = t.leg();
        assert_eq!(cruise, 0.0);
        assert!((peak - 200.0 * ramp).abs() < 1e-12 && peak < 10.0);
        assert!((t.setpoint_at(2.0 * ramp) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn setpoint_is_continuous() {
        let t = Trapezoid::<f64>::default();
        let mut prev = t.setpoint_at(0.0);
        for k in 1..=25_000 {
            let s = t.setpoint_at(k as f64 * 1e-4);
            assert!((s - prev).abs() <= 10.0 * 1e-4 + 1e-9, "jump at {k}");
            prev = s;
        }
    }

    #[test]
    fn table_interpolates_and_holds() {
        let csv = "time_ms,setpoint_mm\n0,0\n10,1\n20,1\n30,0\n";
        let t = Trajectory::<f64>::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.setpoint(SimTime::from_millis(5)), 0.5);
        assert_eq!(t.setpoint(SimTime::from_millis(15)), 1.0);
        assert_eq!(t.setpoint(SimTime::from_millis(25)), 0.5);
        assert_eq!(t.setpoint(SimTime::from_secs(2)), 0.0);
    }

    #[test]
    fn bad_tables_are_rejected() {
        assert!(Trajectory::<f64>::from_csv("time_ms,setpoint_mm\n".as_bytes()).is_err());
        assert!(Trajectory::<f64>::from_csv("time_ms,setpoint_mm\n5,0\n1,1\n".as_bytes()).is_err());
        let err = Trajectory::<f64>::from_csv("time_ms,setpoint_mm\n0,0\nx,1\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }
}
