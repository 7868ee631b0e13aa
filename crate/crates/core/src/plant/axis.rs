use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::sim::SimTime;

use super::PlantError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisParams<T> {
    /// Velocity lag time constant in seconds.
    pub tau: T,
    /// mm/s
    pub max_velocity: T,
    /// mm/s²
    pub max_acceleration: T,
}

impl<T: Scalar> Default for AxisParams<T> {
    fn default() -> Self {
        AxisParams {
            tau: T::of(0.005),
            max_velocity: T::of(50.0),
            max_acceleration: T::of(1000.0),
        }
    }
}

impl<T: Scalar> AxisParams<T> {
    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.tau > T::zero()) {
            return Err(PlantError::Config(format!("axis time constant must be positive, got {}", self.tau)));
        }
        if !(self.max_velocity > T::zero() && self.max_acceleration > T::zero()) {
            return Err(PlantError::Config("axis velocity and acceleration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisModel<T> {
    pub params: AxisParams<T>,
    /// mm
    pub position: T,
    /// mm/s
    pub velocity: T,
}

impl<T: Scalar> AxisModel<T> {
    pub fn at_rest(params: AxisParams<T>) -> Self {
        AxisModel {
            params,
            position: T::zero(),
            velocity: T::zero(),
        }
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// Advances the axis by `dt` under a constant velocity command.
///
/// The velocity follows `dv/dt = (cmd - v) / tau`, with `|dv/dt|` capped at
/// the acceleration limit and `|v|` at the velocity limit. The update is the
/// closed-form solution of that clamped lag, i.e. the limit of the Euler
/// step `v += (dt/tau)(cmd - v)` as the step shrinks, so splitting `dt`
/// into smaller steps gives the same result.
pub fn step_axis<T: Scalar>(axis: &AxisModel<T>, command: T, dt: SimTime) -> AxisModel<T> {
    let p = axis.params;
    let zero = T::zero();
    let vmax = p.max_velocity;
    let amax = p.max_acceleration;
    let band = amax * p.tau;
    let mut r = T::of(dt.as_secs_f64());
    let mut v = axis.velocity.clamp_abs(vmax);
    let mut x = axis.position;

    // Each pass ends at a regime change, and there are at most three of those.
    for _ in 0..6 {
        if r <= zero {
            break;
        }
        let e = command - v;
        if e == zero {
            x = x + v * r;
            break;
        }
        let dir = sign(e);
        if v.abs() >= vmax && e * v > zero {
            v = vmax * sign(v);
            x = x + v * r;
            break;
        }
        if e.abs() > band {
            let room = vmax - v * dir;
            let to_band = (e.abs() - band) / amax;
            let to_limit = room / amax;
            let t = r.min(to_band).min(to_limit);
            let a = amax * dir;
            x = x + v * t + a * t * t / T::of(2.0);
            v = if t == to_limit { vmax * dir } else { v + a * t };
            r = r - t;
            continue;
        }
        let mut t = r;
        let mut hit_limit = false;
        if command.abs() > vmax {
            let lim = vmax * sign(command);
            let ratio = (lim - command) / e;
            if ratio > zero && ratio < T::one() {
                let th = -p.tau * ratio.ln();
                if th <= t {
                    t = th;
                    hit_limit = true;
                }
            }
        }
        let k = (-t / p.tau).exp();
        x = x + command * t - e * p.tau * (T::one() - k);
        v = if hit_limit {
            vmax * sign(command)
        } else {
            command - e * k
        };
        r = r - t;
        if !hit_limit {
            break;
        }
    }
    AxisModel {
        params: p,
        position: x,
        velocity: v.clamp_abs(vmax),
    }
}
