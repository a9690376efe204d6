//! Rate- and acceleration-limited cable motion.
//!
//! The three cables are limited together. Their length changes always sum
//! to zero, so the state is a vector on that plane; it moves towards the
//! target with every cable's speed at most `v_max` and every cable's speed
//! change at most `a_max·dt` per tick. The cable with the most travel runs
//! the usual trapezoidal profile and the others follow in proportion, so
//! the realized lengths always describe a valid bend. The limiter is what
//! makes the synchronized condition lag behind the body.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Result};
use crate::kinematics::{CableDeltas, DELTA_SUM_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionLimits {
    /// Cable speed limit, m/s.
    pub v_max: f64,
    /// Cable acceleration limit, m/s².
    pub a_max: f64,
    /// Control loop rate, Hz.
    pub loop_rate: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        Self { v_max: 0.2512, a_max: 0.628, loop_rate: 100.0 }
    }
}

impl MotionLimits {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("v_max", self.v_max), ("a_max", self.a_max), ("loop_rate", self.loop_rate)] {
            ensure_finite(name, v)?;
            if v <= 0.0 {
                return Err(invalid(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.loop_rate
    }
}

/// Actuated cable lengths (relative to straight) and their velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CableState {
    pub length_delta: [f64; 3],
    pub velocity: [f64; 3],
}

impl CableState {
    pub fn deltas(&self) -> CableDeltas {
        CableDeltas(self.length_delta)
    }
}

/// Speed from which braking at `a` per tick, with velocity applied before
/// position each tick, stops after `d` of travel including this tick.
fn braking_speed(d: f64, a: f64, dt: f64) -> f64 {
    a * ((0.25 * dt * dt + 2.0 * d / a).sqrt() - 0.5 * dt)
}

/// Travel after this tick when braking from speed `v` at `a` per tick.
fn braking_distance(v: f64, a: f64, dt: f64) -> f64 {
    let n = (v / (a * dt)).floor();
    dt * (n * v - a * dt * n * (n + 1.0) / 2.0)
}

fn on_plane(v: [f64; 3]) -> Vector3<f64> {
    let v = Vector3::from(v);
    v.add_scalar(-v.mean())
}

struct Step<'a> {
    limits: &'a MotionLimits,
    dt: f64,
    radius: f64,
}

impl Step<'_> {
    /// Euclidean acceleration available along `dir` before some cable hits `a_max`.
    fn accel_along(&self, dir: &Vector3<f64>) -> f64 {
        self.limits.a_max / dir.amax()
    }

    /// The state stays inside the ball, and so does the point where full
    /// braking from it would stop.
    fn safe(&self, x: &Vector3<f64>, v: &Vector3<f64>) -> bool {
        let next = x + v * self.dt;
        let speed = v.norm();
        let stop = if speed > 0.0 {
            let dir = v / speed;
            next + dir * braking_distance(speed, self.accel_along(&dir), self.dt)
        } else {
            next
        };
        let bound = self.radius * (1.0 + 1e-12) + 1e-15;
        next.norm() <= bound && stop.norm() <= bound
    }

    fn braking(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let speed = v.norm();
        if speed == 0.0 {
            return *v;
        }
        let dv = self.accel_along(&(v / speed)) * self.dt;
        if speed <= dv {
            Vector3::zeros()
        } else {
            v * (1.0 - dv / speed)
        }
    }
}

/// Advances all cables one control tick towards `target`.
pub fn plan_tick(current: &CableState, target: &CableDeltas, limits: &MotionLimits, dt: f64) -> Result<CableState> {
    plan_tick_within(current, target, limits, dt, f64::INFINITY)
}

/// [`plan_tick`], additionally keeping the length vector within Euclidean
/// norm `radius` (the image of the bend-angle limit).
pub fn plan_tick_within(
    current: &CableState,
    target: &CableDeltas,
    limits: &MotionLimits,
    dt: f64,
    radius: f64,
) -> Result<CableState> {
    limits.validate()?;
    let nominal = limits.dt();
    if !(dt.is_finite() && (dt - nominal).abs() <= 0.01 * nominal) {
        return Err(invalid(format!("dt {dt} must be within 1% of 1/loop_rate = {nominal}")));
    }
    for i in 0..3 {
        ensure_finite("target", target.0[i])?;
        ensure_finite("length_delta", current.length_delta[i])?;
        ensure_finite("velocity", current.velocity[i])?;
    }
    if target.sum().abs() > DELTA_SUM_TOLERANCE {
        return Err(invalid(format!("target cable deltas sum to {:e}, not zero", target.sum())));
    }
    if radius.is_nan() || radius < 0.0 {
        return Err(invalid("radius must be >= 0"));
    }
    let step = Step { limits, dt, radius };
    let x = on_plane(current.length_delta);
    let v = on_plane(current.velocity);
    let goal = on_plane(target.0);

    let d = goal - x;
    let dist = d.norm();
    let (desired, reach) = if dist > 0.0 {
        let dir = d / dist;
        let m = dir.amax();
        let reach = dist / dt;
        let speed = (limits.v_max / m).min(braking_speed(dist, limits.a_max / m, dt)).min(reach);
        (dir * speed, speed == reach)
    } else {
        (Vector3::zeros(), true)
    };
    let change = desired - v;
    let dv_max = limits.a_max * dt;
    let scale = if change.amax() > dv_max { dv_max / change.amax() } else { 1.0 };
    let mut next_v = v + change * scale;
    let mut exact = scale == 1.0 && reach;
    if !step.safe(&x, &next_v) {
        // Blend towards full braking, which keeps the stop point where it was.
        let fallback = step.braking(&v);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if step.safe(&x, &(fallback + (next_v - fallback) * mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        next_v = fallback + (next_v - fallback) * lo;
        exact = false;
    }
    // Final approach lands on the target instead of accumulating rounding.
    let next_x = if exact { goal } else { x + next_v * dt };
    Ok(CableState { length_delta: next_x.into(), velocity: next_v.into() })
}

/// Rest-to-rest time for a move of `step_size` meters under the limits.
pub fn settle_time(step_size: f64, limits: &MotionLimits) -> Result<f64> {
    limits.validate()?;
    ensure_finite("step_size", step_size)?;
    if step_size < 0.0 {
        return Err(invalid("step_size must be >= 0"));
    }
    let (v, a) = (limits.v_max, limits.a_max);
    Ok(if step_size <= v * v / a {
        2.0 * (step_size / a).sqrt()
    } else {
        v / a + step_size / v
    })
}

/// Whole steps per cable for one tick, plus the sub-step remainder carried
/// into the next tick.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepCommand {
    pub steps: [i64; 3],
    /// Meters not yet expressed as steps.
    pub residual: [f64; 3],
}

/// Converts a per-cable travel into whole steps, rounding half to even and
/// carrying the remainder.
pub fn to_steps(travel: [f64; 3], prev_residual: [f64; 3], steps_per_meter: f64) -> Result<StepCommand> {
    ensure_finite("steps_per_meter", steps_per_meter)?;
    if steps_per_meter <= 0.0 {
        return Err(invalid("steps_per_meter must be > 0"));
    }
    let mut cmd = StepCommand::default();
    for i in 0..3 {
        ensure_finite("travel", travel[i])?;
        let total = travel[i] + prev_residual[i];
        let steps = (total * steps_per_meter).round_ties_even();
        cmd.steps[i] = steps as i64;
        cmd.residual[i] = total - steps / steps_per_meter;
    }
    Ok(cmd)
}

/// Tracks commanded step counts against the continuous cable lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Stepper {
    steps_per_meter: f64,
    last_length: [f64; 3],
    residual: [f64; 3],
    position: [i64; 3],
}

impl Stepper {
    pub const DEFAULT_STEPS_PER_METER: f64 = 40_000.0;

    pub fn new(steps_per_meter: f64) -> Result<Self> {
        ensure_finite("steps_per_meter", steps_per_meter)?;
        if steps_per_meter <= 0.0 {
            return Err(invalid("steps_per_meter must be > 0"));
        }
        Ok(Self { steps_per_meter, last_length: [0.0; 3], residual: [0.0; 3], position: [0; 3] })
    }

    pub fn update(&mut self, state: &CableState) -> Result<StepCommand> {
        let travel: [f64; 3] = std::array::from_fn(|i| state.length_delta[i] - self.last_length[i]);
        let cmd = to_steps(travel, self.residual, self.steps_per_meter)?;
        self.last_length = state.length_delta;
        self.residual = cmd.residual;
        for i in 0..3 {
            self.position[i] += cmd.steps[i];
        }
        Ok(cmd)
    }

    /// Accumulated step count per cable.
    pub fn position(&self) -> [i64; 3] {
        self.position
    }

    pub fn step_length(&self) -> f64 {
        1.0 / self.steps_per_meter
    }
}
