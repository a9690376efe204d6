//! Target bend streams for the experimental motion conditions.
//!
//! * `synchronized`: the latest body orientation, mapped straight through.
//!   The visible lag comes from the actuation limiter, not from here.
//! * `simple`: planar waving, `φ = |A·sin(2πft)|` with the direction flipping
//!   by π whenever the sine changes sign.
//! * `random`: a two-dimensional Ornstein-Uhlenbeck walk of the tilt vector,
//!   reflected at the edge of the `phi_max` disc.
//! * `replay`: a recorded trace, interpolated at the requested time.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::kinematics::{wrap_angle, BendState};
use crate::seed;
use crate::sensing::{map_orientation, MappingConfig, OrientationSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Synchronized,
    Random,
    Simple,
    Replay,
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] = [
        PatternKind::Synchronized,
        PatternKind::Random,
        PatternKind::Simple,
        PatternKind::Replay,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PatternKind::Synchronized => "synchronized",
            PatternKind::Random => "random",
            PatternKind::Simple => "simple",
            PatternKind::Replay => "replay",
        }
    }

    /// Whether the pattern consumes live orientation samples.
    pub fn needs_live_input(&self) -> bool {
        matches!(self, PatternKind::Synchronized)
    }
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown condition '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternConfig {
    pub kind: PatternKind,
    pub seed: u64,
    /// Peak bend of the waving pattern, radians.
    pub simple_amplitude: f64,
    /// Waving frequency, Hz.
    pub simple_frequency: f64,
    /// Bend direction of the waving plane, radians.
    pub simple_direction: f64,
    /// Mean-reversion rate of the random walk, 1/s.
    pub ou_theta: f64,
    /// Diffusion scale of the random walk, rad/√s.
    pub ou_sigma: f64,
    pub phi_max: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            kind: PatternKind::Simple,
            seed: 0,
            simple_amplitude: 15f64.to_radians(),
            simple_frequency: 0.25,
            simple_direction: 0.0,
            ou_theta: 0.5,
            ou_sigma: 0.12,
            phi_max: 20f64.to_radians(),
        }
    }
}

impl PatternConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("simple_amplitude", self.simple_amplitude),
            ("simple_frequency", self.simple_frequency),
            ("simple_direction", self.simple_direction),
            ("ou_theta", self.ou_theta),
            ("ou_sigma", self.ou_sigma),
            ("phi_max", self.phi_max),
        ] {
            ensure_finite(name, v)?;
        }
        if !(self.phi_max > 0.0 && self.phi_max < PI) {
            return Err(invalid("phi_max must lie in (0, pi)"));
        }
        if !(self.simple_amplitude >= 0.0 && self.simple_amplitude <= self.phi_max) {
            return Err(invalid("simple_amplitude must lie in [0, phi_max]"));
        }
        if self.simple_frequency <= 0.0 {
            return Err(invalid("simple_frequency must be > 0"));
        }
        if self.ou_theta <= 0.0 || self.ou_sigma <= 0.0 {
            return Err(invalid("ou_theta and ou_sigma must be > 0"));
        }
        Ok(())
    }
}

/// Folds a radius into `[0, radius]` by repeated reflection at the rim.
fn fold_radius(r: f64, radius: f64) -> f64 {
    let period = 2.0 * radius;
    let m = r.rem_euclid(period);
    if m > radius {
        period - m
    } else {
        m
    }
}

/// Reflected two-dimensional Ornstein-Uhlenbeck walk of the tilt vector.
#[derive(Debug, Clone)]
pub struct OuWalk {
    x: f64,
    y: f64,
    rate: f64,
    sigma: f64,
    radius: f64,
    rng: ChaCha8Rng,
}

impl OuWalk {
    /// Starts from a draw of the (unbounded) stationary distribution, folded
    /// into the disc.
    pub fn new(rate: f64, sigma: f64, radius: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let spread = sigma / (2.0 * rate).sqrt();
        let x: f64 = StandardNormal.sample(&mut rng);
        let y: f64 = StandardNormal.sample(&mut rng);
        let mut walk = Self { x: x * spread, y: y * spread, rate, sigma, radius, rng };
        walk.reflect();
        walk
    }

    fn reflect(&mut self) {
        let r = self.x.hypot(self.y);
        if r > self.radius {
            let scale = fold_radius(r, self.radius) / r;
            self.x *= scale;
            self.y *= scale;
        }
    }

    /// Advances by `dt` using the exact transition of the unbounded process.
    pub fn step(&mut self, dt: f64) -> (f64, f64) {
        let decay = (-self.rate * dt).exp();
        let spread = self.sigma * ((1.0 - decay * decay) / (2.0 * self.rate)).sqrt();
        let nx: f64 = StandardNormal.sample(&mut self.rng);
        let ny: f64 = StandardNormal.sample(&mut self.rng);
        self.x = self.x * decay + spread * nx;
        self.y = self.y * decay + spread * ny;
        self.reflect();
        (self.x, self.y)
    }

    pub fn tilt(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Time-indexed view of an orientation trace with linear interpolation.
#[derive(Debug, Clone)]
pub struct TraceCursor {
    samples: Vec<OrientationSample>,
    index: usize,
    exhausted: bool,
}

impl TraceCursor {
    pub fn new(samples: Vec<OrientationSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::MissingInput("trace is empty".into()));
        }
        for w in samples.windows(2) {
            if w[1].t < w[0].t {
                return Err(Error::TimeRegression { now: w[1].t, last: w[0].t });
            }
        }
        Ok(Self { samples, index: 0, exhausted: false })
    }

    pub fn samples(&self) -> &[OrientationSample] {
        &self.samples
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Set once a request lands past the final sample.
    pub fn exhausted(&self) -> bool {
        self.exhausted
    }

    /// The trace value at `t`, stamped `t`. Times before the first sample
    /// return the first sample; times after the last hold the last one.
    pub fn sample_at(&mut self, t: f64) -> OrientationSample {
        let n = self.samples.len();
        if t < self.samples[self.index].t {
            self.index = self.samples.partition_point(|s| s.t <= t).saturating_sub(1);
        }
        while self.index + 1 < n && self.samples[self.index + 1].t <= t {
            self.index += 1;
        }
        let a = self.samples[self.index];
        let stamped = |s: OrientationSample| OrientationSample { t, ..s };
        if t <= a.t {
            return stamped(a);
        }
        if self.index + 1 == n {
            self.exhausted = true;
            return stamped(a);
        }
        let b = self.samples[self.index + 1];
        let w = (t - a.t) / (b.t - a.t);
        OrientationSample {
            t,
            heading: wrap_angle(a.heading + w * wrap_angle(b.heading - a.heading)),
            pitch: a.pitch + w * (b.pitch - a.pitch),
            roll: wrap_angle(a.roll + w * wrap_angle(b.roll - a.roll)),
        }
    }
}

#[derive(Debug, Clone)]
enum PatternState {
    Synchronized,
    Simple,
    Random(OuWalk),
    Replay(TraceCursor),
}

/// Single-owner generator of target bends for one session.
#[derive(Debug, Clone)]
pub struct PatternGenerator {
    cfg: PatternConfig,
    mapping: MappingConfig,
    state: PatternState,
}

impl PatternGenerator {
    /// Builds a generator; `trace` is required for `replay` and ignored
    /// otherwise.
    pub fn new(cfg: PatternConfig, mapping: MappingConfig, trace: Option<Vec<OrientationSample>>) -> Result<Self> {
        cfg.validate()?;
        mapping.validate()?;
        let state = match cfg.kind {
            PatternKind::Synchronized => PatternState::Synchronized,
            PatternKind::Simple => PatternState::Simple,
            PatternKind::Random => PatternState::Random(OuWalk::new(cfg.ou_theta, cfg.ou_sigma, cfg.phi_max, cfg.seed)),
            PatternKind::Replay => {
                let trace = trace.ok_or_else(|| Error::MissingInput("replay needs a trace".into()))?;
                PatternState::Replay(TraceCursor::new(trace)?)
            }
        };
        Ok(Self { cfg, mapping, state })
    }

    pub fn config(&self) -> &PatternConfig {
        &self.cfg
    }

    pub fn kind(&self) -> PatternKind {
        self.cfg.kind
    }

    /// True once a replay has run past the end of its trace.
    pub fn end_of_trace(&self) -> bool {
        matches!(&self.state, PatternState::Replay(c) if c.exhausted())
    }

    pub fn next_target(&mut self, t: f64, dt: f64, latest: Option<&OrientationSample>) -> Result<BendState> {
        ensure_finite("t", t)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("dt must be > 0, got {dt}")));
        }
        let bend = match &mut self.state {
            PatternState::Synchronized => {
                let sample = latest.ok_or_else(|| {
                    Error::MissingInput("synchronized pattern needs a latest orientation sample".into())
                })?;
                map_orientation(sample, &self.mapping)?
            }
            PatternState::Simple => simple_wave(&self.cfg, t),
            PatternState::Random(walk) => {
                let (x, y) = walk.step(dt);
                BendState::from_tilt(x, y)
            }
            PatternState::Replay(cursor) => map_orientation(&cursor.sample_at(t), &self.mapping)?,
        };
        Ok(bend.clamped(self.cfg.phi_max))
    }
}

/// The waving pattern at time `t`.
pub fn simple_wave(cfg: &PatternConfig, t: f64) -> BendState {
    let s = (TAU * cfg.simple_frequency * t).sin();
    let direction = if s < 0.0 { cfg.simple_direction + PI } else { cfg.simple_direction };
    BendState::new(direction, (cfg.simple_amplitude * s).abs()).unwrap_or(BendState::STRAIGHT)
}

/// The two statistics matched by [`calibrate_random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionStats {
    /// Root mean square of the bend angle, radians.
    pub rms_phi: f64,
    /// Swings of each tilt component across its own mean, per second,
    /// averaged over the two components. A swing only counts once the
    /// component is [`CROSSING_BAND`] standard deviations past the mean, so
    /// jitter at the sample rate does not register.
    pub zero_crossing_rate: f64,
}

/// Hysteresis band of the crossing count, in standard deviations.
pub const CROSSING_BAND: f64 = 0.5;

fn mean_crossings(values: &[f64]) -> usize {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let band = CROSSING_BAND * sd;
    let mut side = 0i8;
    let mut count = 0;
    for v in values {
        let d = v - mean;
        let now = if d > band {
            1
        } else if d < -band {
            -1
        } else {
            continue;
        };
        if side != 0 && now != side {
            count += 1;
        }
        side = now;
    }
    count
}

pub fn motion_stats(bends: &[BendState], sample_rate: f64) -> MotionStats {
    let n = bends.len().max(1) as f64;
    let rms_phi = (bends.iter().map(|b| b.phi() * b.phi()).sum::<f64>() / n).sqrt();
    let (xs, ys): (Vec<f64>, Vec<f64>) = bends.iter().map(BendState::tilt).unzip();
    let crossings = mean_crossings(&xs) + mean_crossings(&ys);
    let duration = bends.len() as f64 / sample_rate;
    MotionStats { rms_phi, zero_crossing_rate: crossings as f64 / (2.0 * duration) }
}

/// Length of the generated run used to score candidate parameters.
pub const CALIBRATION_HORIZON: f64 = 300.0;
/// Shortest reference accepted by [`calibrate_random`].
pub const MIN_REFERENCE_SECONDS: f64 = 30.0;
const CALIBRATION_ROUNDS: usize = 12;
const CALIBRATION_TOLERANCE: f64 = 0.01;
const CALIBRATION_SEEDS: u64 = 4;
/// Reversion rate per banded crossing per second of an unbounded walk.
const CROSSINGS_TO_RATE: f64 = 1.6;

/// Runs the random pattern for `duration` seconds at `sample_rate`.
pub fn random_run(cfg: &PatternConfig, sample_rate: f64, duration: f64) -> Vec<BendState> {
    let dt = 1.0 / sample_rate;
    let steps = (duration * sample_rate).round() as usize;
    let mut walk = OuWalk::new(cfg.ou_theta, cfg.ou_sigma, cfg.phi_max, cfg.seed);
    (0..steps)
        .map(|_| {
            let (x, y) = walk.step(dt);
            BendState::from_tilt(x, y).clamped(cfg.phi_max)
        })
        .collect()
}

/// Tunes `ou_theta` and `ou_sigma` so the random pattern matches a reference
/// recording (sampled at `sample_rate`) in RMS bend and tilt crossing rate.
///
/// Every candidate is scored on [`CALIBRATION_HORIZON`] runs from `cfg.seed`
/// and a few seeds derived from it. The fitted config keeps `cfg.seed`.
pub fn calibrate_random(reference: &[BendState], sample_rate: f64, cfg: &PatternConfig) -> Result<PatternConfig> {
    cfg.validate()?;
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(invalid("sample_rate must be > 0"));
    }
    let seconds = reference.len() as f64 / sample_rate;
    if seconds < MIN_REFERENCE_SECONDS {
        return Err(Error::InsufficientData(format!(
            "reference spans {seconds:.1} s, need at least {MIN_REFERENCE_SECONDS} s"
        )));
    }
    let target = motion_stats(reference, sample_rate);
    if target.rms_phi < 1e-9 {
        return Err(Error::Degenerate("reference has no motion (zero RMS bend)".into()));
    }
    if target.zero_crossing_rate <= 0.0 {
        return Err(Error::Degenerate("reference tilt never crosses zero".into()));
    }

    // Starting guesses: the banded crossing rate grows about linearly with
    // the reversion rate, and each component's stationary spread is σ/√(2k).
    let rate = (target.zero_crossing_rate * CROSSINGS_TO_RATE).max(1e-6);
    let sigma = (target.rms_phi * rate.sqrt()).max(1e-9);

    // Averaged over a few seeds so the fit does not chase one run's noise.
    let stats = |rate: f64, sigma: f64| {
        let runs: Vec<MotionStats> = (0..CALIBRATION_SEEDS)
            .map(|i| {
                let seed = if i == 0 { cfg.seed } else { seed::derive(cfg.seed, i) };
                let trial = PatternConfig { ou_theta: rate, ou_sigma: sigma, seed, ..*cfg };
                motion_stats(&random_run(&trial, sample_rate, CALIBRATION_HORIZON), sample_rate)
            })
            .collect();
        let n = runs.len() as f64;
        MotionStats {
            rms_phi: runs.iter().map(|m| m.rms_phi).sum::<f64>() / n,
            zero_crossing_rate: runs.iter().map(|m| m.zero_crossing_rate).sum::<f64>() / n,
        }
    };
    // Both statistics move with both parameters (the rim reflection couples
    // them), so solve jointly: damped Newton in log space with a
    // finite-difference Jacobian.
    let residual = |u: Vector2<f64>| {
        let m = stats(u.x.exp(), u.y.exp());
        Vector2::new(
            (m.zero_crossing_rate.max(1e-12) / target.zero_crossing_rate).ln(),
            (m.rms_phi.max(1e-12) / target.rms_phi).ln(),
        )
    };
    let mut u = Vector2::new(rate.ln(), sigma.ln());
    let mut r = residual(u);
    let mut best = (r.amax(), u);
    for _ in 0..CALIBRATION_ROUNDS {
        if r.amax() < CALIBRATION_TOLERANCE {
            break;
        }
        let h = 0.05;
        let jx = (residual(u + Vector2::new(h, 0.0)) - r) / h;
        let jy = (residual(u + Vector2::new(0.0, h)) - r) / h;
        let Some(inv) = Matrix2::from_columns(&[jx, jy]).try_inverse() else {
            break;
        };
        let mut step = -(inv * r);
        if step.amax() > 1.0 {
            step /= step.amax();
        }
        u += step;
        r = residual(u);
        if r.amax() < best.0 {
            best = (r.amax(), u);
        }
    }
    Ok(PatternConfig { ou_theta: best.1.x.exp(), ou_sigma: best.1.y.exp(), ..*cfg })
}
