//! Browser bindings for the demo page. Everything returns flat `f64`
//! arrays so the page can draw them without a serialization layer.

use wasm_bindgen::prelude::*;

use syncbot::actuation::{plan_tick_within, settle_time, CableState, MotionLimits};
use syncbot::kinematics::{backbone_points, bend_estimate, cable_deltas, BendState, RobotGeometry};
use syncbot::patterns::{PatternConfig, PatternKind};
use syncbot::robot::{Robot, RobotConfig};

type Res<T> = Result<T, String>;

fn msg(e: syncbot::Error) -> String {
    e.to_string()
}

/// Backbone polyline for a bend, as x,y,z triples in meters.
fn backbone_impl(theta_deg: f64, phi_deg: f64, points: usize) -> Res<Vec<f64>> {
    let geom = RobotGeometry::default();
    let phi = phi_deg.abs().min(geom.phi_max.to_degrees()).to_radians();
    let bend = BendState::new(theta_deg.to_radians(), phi).map_err(msg)?;
    let pts = backbone_points(bend, &geom, points).map_err(msg)?;
    Ok(pts.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
}

/// Cable length changes in millimeters for a bend.
fn cables_impl(theta_deg: f64, phi_deg: f64) -> Res<Vec<f64>> {
    let geom = RobotGeometry::default();
    let bend = BendState::new(theta_deg.to_radians(), phi_deg.to_radians()).map_err(msg)?;
    Ok(cable_deltas(bend, &geom).map_err(msg)?.0.iter().map(|d| d * 1e3).collect())
}

fn kind(name: &str) -> Res<PatternKind> {
    match name.parse::<PatternKind>() {
        Ok(k @ (PatternKind::Simple | PatternKind::Random)) => Ok(k),
        _ => Err("pattern must be simple or random".into()),
    }
}

/// Runs a self-driven pattern through the cable limiter. Rows of
/// t, target tilt x, target tilt y, realized tilt x, realized tilt y
/// (degrees), one per control tick.
fn pattern_through_limiter_impl(pattern: &str, seconds: f64, seed: u32, v_max: f64, a_max: f64) -> Res<Vec<f64>> {
    let limits = MotionLimits { v_max, a_max, ..MotionLimits::default() };
    let cfg = RobotConfig {
        limits,
        pattern: PatternConfig { kind: kind(pattern)?, seed: u64::from(seed), ..PatternConfig::default() },
        ..RobotConfig::default()
    };
    let mut robot = Robot::new(cfg, None).map_err(msg)?;
    let ticks = (seconds.clamp(0.0, 600.0) * limits.loop_rate).round() as u64;
    let mut out = Vec::with_capacity(ticks as usize * 5);
    for k in 0..ticks {
        let tick = robot.step(k as f64 / limits.loop_rate).map_err(msg)?;
        let (tx, ty) = tick.target.tilt();
        let (bx, by) = tick.bend.tilt();
        out.extend([tick.t, tx.to_degrees(), ty.to_degrees(), bx.to_degrees(), by.to_degrees()]);
    }
    Ok(out)
}

/// Bend step from straight to `phi_deg` towards `theta_deg`. Rows of
/// t, phi (degrees), then the three cable speeds (mm/s).
fn step_response_impl(theta_deg: f64, phi_deg: f64, v_max: f64, a_max: f64) -> Res<Vec<f64>> {
    let geom = RobotGeometry::default();
    let limits = MotionLimits { v_max, a_max, ..MotionLimits::default() };
    let goal = BendState::new(theta_deg.to_radians(), phi_deg.abs().min(geom.phi_max.to_degrees()).to_radians())
        .map_err(msg)?;
    let target = cable_deltas(goal, &geom).map_err(msg)?;
    let dt = limits.dt();
    let horizon = step_settle_time_impl(theta_deg, phi_deg, v_max, a_max)? + 0.5;
    let mut state = CableState::default();
    let mut out = vec![0.0, 0.0, 0.0, 0.0, 0.0];
    for k in 1..=(horizon / dt).ceil() as u64 {
        state = plan_tick_within(&state, &target, &limits, dt, geom.delta_norm_limit()).map_err(msg)?;
        let phi = bend_estimate(state.deltas(), &geom).phi().to_degrees();
        out.push(k as f64 * dt);
        out.push(phi);
        out.extend(state.velocity.iter().map(|v| v * 1e3));
    }
    Ok(out)
}

/// Rest-to-rest time of the step, set by the cable with the most travel.
fn step_settle_time_impl(theta_deg: f64, phi_deg: f64, v_max: f64, a_max: f64) -> Res<f64> {
    let geom = RobotGeometry::default();
    let limits = MotionLimits { v_max, a_max, ..MotionLimits::default() };
    let goal = BendState::new(theta_deg.to_radians(), phi_deg.abs().min(geom.phi_max.to_degrees()).to_radians())
        .map_err(msg)?;
    let jump = cable_deltas(goal, &geom).map_err(msg)?.0.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    settle_time(jump, &limits).map_err(msg)
}

#[wasm_bindgen]
pub fn backbone(theta_deg: f64, phi_deg: f64, points: usize) -> Result<Vec<f64>, JsError> {
    backbone_impl(theta_deg, phi_deg, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn cables(theta_deg: f64, phi_deg: f64) -> Result<Vec<f64>, JsError> {
    cables_impl(theta_deg, phi_deg).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn pattern_through_limiter(pattern: &str, seconds: f64, seed: u32, v_max: f64, a_max: f64) -> Result<Vec<f64>, JsError> {
    pattern_through_limiter_impl(pattern, seconds, seed, v_max, a_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn step_response(theta_deg: f64, phi_deg: f64, v_max: f64, a_max: f64) -> Result<Vec<f64>, JsError> {
    step_response_impl(theta_deg, phi_deg, v_max, a_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn step_settle_time(theta_deg: f64, phi_deg: f64, v_max: f64, a_max: f64) -> Result<f64, JsError> {
    step_settle_time_impl(theta_deg, phi_deg, v_max, a_max).map_err(|e| JsError::new(&e))
}
