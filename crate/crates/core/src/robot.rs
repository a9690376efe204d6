//! One control tick of the robot: gate the latest input, pick a target bend,
//! limit the cables towards it and count steps.

use serde::{Deserialize, Serialize};

use crate::actuation::{plan_tick_within, CableState, MotionLimits, Stepper};
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::kinematics::{bend_estimate, cable_deltas, BendState, CableDeltas, RobotGeometry};
use crate::netsim::{freshness_gate, DEFAULT_STALENESS_TIMEOUT};
use crate::patterns::{PatternConfig, PatternGenerator, PatternKind};
use crate::records::Telemetry;
use crate::sensing::{MappingConfig, OrientationSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    pub geometry: RobotGeometry,
    pub limits: MotionLimits,
    pub mapping: MappingConfig,
    pub pattern: PatternConfig,
    /// Seconds after which an orientation sample no longer drives the robot.
    pub staleness_timeout: f64,
    pub steps_per_meter: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            geometry: RobotGeometry::default(),
            limits: MotionLimits::default(),
            mapping: MappingConfig::default(),
            pattern: PatternConfig::default(),
            staleness_timeout: DEFAULT_STALENESS_TIMEOUT,
            steps_per_meter: Stepper::DEFAULT_STEPS_PER_METER,
        }
    }
}

impl RobotConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.limits.validate()?;
        self.mapping.validate()?;
        self.pattern.validate()?;
        ensure_finite("staleness_timeout", self.staleness_timeout)?;
        if self.staleness_timeout <= 0.0 {
            return Err(invalid("staleness_timeout must be > 0"));
        }
        Ok(())
    }
}

/// Everything the robot did on one tick, in SI units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotTick {
    pub t: f64,
    /// Whether a fresh orientation sample was available.
    pub gate_open: bool,
    pub target: BendState,
    /// Bend realized by the actuated cables.
    pub bend: BendState,
    pub cables: CableState,
    pub steps: [i64; 3],
}

impl RobotTick {
    pub fn telemetry(&self) -> Telemetry {
        let mm = |v: f64| v * 1e3;
        Telemetry {
            t: self.t,
            dl1: mm(self.cables.length_delta[0]),
            dl2: mm(self.cables.length_delta[1]),
            dl3: mm(self.cables.length_delta[2]),
            theta: self.bend.theta().to_degrees(),
            phi: self.bend.phi().to_degrees(),
            steps1: self.steps[0],
            steps2: self.steps[1],
            steps3: self.steps[2],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Robot {
    cfg: RobotConfig,
    generator: PatternGenerator,
    trace: Option<Vec<OrientationSample>>,
    latest: Option<OrientationSample>,
    target: BendState,
    cables: CableState,
    stepper: Stepper,
    last_t: Option<f64>,
}

impl Robot {
    /// `trace` feeds the replay pattern and is kept for later switches.
    pub fn new(cfg: RobotConfig, trace: Option<Vec<OrientationSample>>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            generator: PatternGenerator::new(cfg.pattern, cfg.mapping, trace.clone())?,
            stepper: Stepper::new(cfg.steps_per_meter)?,
            cfg,
            trace,
            latest: None,
            target: BendState::STRAIGHT,
            cables: CableState::default(),
            last_t: None,
        })
    }

    pub fn config(&self) -> &RobotConfig {
        &self.cfg
    }

    pub fn kind(&self) -> PatternKind {
        self.cfg.pattern.kind
    }

    /// Switches the motion pattern; the cables continue from where they are.
    pub fn set_pattern(&mut self, pattern: PatternConfig) -> Result<()> {
        self.generator = PatternGenerator::new(pattern, self.cfg.mapping, self.trace.clone())?;
        self.cfg.pattern = pattern;
        Ok(())
    }

    /// Takes a delivered orientation sample; late arrivals older than the
    /// current one are ignored.
    pub fn receive(&mut self, sample: OrientationSample) -> Result<()> {
        sample.validate()?;
        if self.latest.is_none_or(|l| sample.t >= l.t) {
            self.latest = Some(sample);
        }
        Ok(())
    }

    pub fn latest(&self) -> Option<&OrientationSample> {
        self.latest.as_ref()
    }

    pub fn bend(&self) -> BendState {
        bend_estimate(self.cables.deltas(), &self.cfg.geometry)
    }

    pub fn cables(&self) -> &CableState {
        &self.cables
    }

    pub fn step(&mut self, t: f64) -> Result<RobotTick> {
        ensure_finite("t", t)?;
        if let Some(last) = self.last_t {
            if t < last {
                return Err(Error::TimeRegression { now: t, last });
            }
        }
        self.last_t = Some(t);
        let dt = self.cfg.limits.dt();
        let gate_open = self.latest.is_some_and(|s| freshness_gate(&s, t, self.cfg.staleness_timeout));
        if !self.generator.kind().needs_live_input() {
            self.target = self.generator.next_target(t, dt, None)?;
        } else if gate_open {
            self.target = self.generator.next_target(t, dt, self.latest.as_ref())?;
        }
        // Otherwise hold the last target.
        let target = self.target.clamped(self.cfg.geometry.phi_max);
        let desired: CableDeltas = cable_deltas(target, &self.cfg.geometry)?;
        self.cables = plan_tick_within(&self.cables, &desired, &self.cfg.limits, dt, self.cfg.geometry.delta_norm_limit())?;
        self.stepper.update(&self.cables)?;
        Ok(RobotTick {
            t,
            gate_open,
            target,
            bend: self.bend(),
            cables: self.cables,
            steps: self.stepper.position(),
        })
    }
}
