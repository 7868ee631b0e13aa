use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains<T> {
    pub kp: T,
    pub ki: T,
    pub kd: T,
    /// Bound on the accumulated error integral, mm·s.
    pub integral_clamp: T,
}

impl<T: Scalar> Default for PidGains<T> {
    fn default() -> Self {
        PidGains {
            kp: T::of(140.0),
            ki: T::of(10.0),
            kd: T::of(0.3),
            integral_clamp: T::of(0.5),
        }
    }
}

impl<T: Scalar> PidGains<T> {
    pub fn proportional(kp: T) -> Self {
        PidGains {
            kp,
            ki: T::zero(),
            kd: T::zero(),
            integral_clamp: T::zero(),
        }
    }
}

/// Contributions of the last tick, for tracing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidTerms<T> {
    pub p: T,
    pub i: T,
    pub d: T,
}

/// Position controller producing a velocity command (mm/s).
#[derive(Debug, Clone)]
pub struct Controller<T> {
    gains: PidGains<T>,
    integral: T,
    prev_error: Option<T>,
    terms: PidTerms<T>,
}

impl<T: Scalar> Controller<T> {
    pub fn new(gains: PidGains<T>) -> Self {
        Controller {
            gains,
            integral: T::zero(),
            prev_error: None,
            terms: PidTerms::default(),
        }
    }

    pub fn gains(&self) -> &PidGains<T> {
        &self.gains
    }

    pub fn integral(&self) -> T {
        self.integral
    }

    pub fn terms(&self) -> PidTerms<T> {
        self.terms
    }

    /// One servo cycle. The integral is clamped to `±integral_clamp` before
    /// use, which keeps it from winding up under sustained error. The
    /// derivative is zero on the first tick.
    pub fn tick(&mut self, setpoint: T, feedback: T, dt: SimTime) -> T {
        let h = T::of(dt.as_secs_f64());
        let e = setpoint - feedback;
        self.integral = (self.integral + e * h).clamp_abs(self.gains.integral_clamp);
        let d = match self.prev_error {
            Some(prev) if h > T::zero() => (e - prev) / h,
            _ => T::zero(),
        };
        self.prev_error = Some(e);
        self.terms = PidTerms {
            p: self.gains.kp * e,
            i: self.gains.ki * self.integral,
            d: self.gains.kd * d,
        };
        self.terms.p + self.terms.i + self.terms.d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: SimTime = SimTime::from_micros(1000);

    #[test]
    fn zero_error_gives_zero_command() {
        let mut c = Controller::new(PidGains::<f64>::default());
        for _ in 0..100 {
            assert_eq!(c.tick(4.0, 4.0, DT), 0.0);
        }
    }

    #[test]
    fn proportional_only_is_kp_times_error() {
        let mut c = Controller::new(PidGains::proportional(12.5f64));
        assert_eq!(c.tick(1.0, 0.8, DT), 12.5 * (1.0 - 0.8));
        assert_eq!(c.tick(0.0, 0.5, DT), -6.25);
    }

    #[test]
    fn sustained_error_saturates_integral_at_clamp() {
        let gains = PidGains {
            kp: 0.0,
            ki: 1.0,
            kd: 0.0,
            integral_clamp: 0.02,
        };
        let mut c = Controller::new(gains);
        for _ in 0..1000 {
            c.tick(1.0, 0.0, DT);
        }
        assert_eq!(c.terms().i, 0.02);
        for _ in 0..1000 {
            c.tick(-1.0, 0.0, DT);
        }
        assert_eq!(c.terms().i, -0.02);
    }

    #[test]
    fn derivative_uses_error_difference() {
        let gains = PidGains::<f64> {
            kp: 0.0,
            ki: 0.0,
            kd: 2.0,
            integral_clamp: 0.0,
        };
        let mut c = Controller::new(gains);
        assert_eq!(c.tick(0.0, 0.0, DT), 0.0);
        let u = c.tick(0.001, 0.0, DT);
        assert!((u - 2.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn integral_never_exceeds_clamp(errors in proptest::collection::vec(-5.0f64..5.0, 1..300), clamp in 0.0f64..1.0) {
                let mut c = Controller::new(PidGains { kp: 1.0, ki: 3.0, kd: 0.1, integral_clamp: clamp });
                for e in errors {
                    c.tick(e, 0.0, DT);
                    prop_assert!(c.integral().abs() <= clamp);
                }
            }
        }
    }
}
