//! Session and study configuration, read from a sectioned TOML file.
//!
//! Angles in the file are degrees; everything is converted to radians on
//! the way in. Every key is optional and falls back to the documented default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::actuation::{MotionLimits, Stepper};
use crate::error::{invalid, Error, Result};
use crate::kinematics::RobotGeometry;
use crate::netsim::{LinkModel, DEFAULT_SENSOR_RATE, DEFAULT_STALENESS_TIMEOUT};
use crate::patterns::{PatternConfig, PatternKind};
use crate::robot::RobotConfig;
use crate::seed::{self, stream};
use crate::sensing::{read_trace, synthetic_sway, MappingConfig, OrientationSample, SwayConfig, ThetaSource};
use crate::trustgame::PayoutPolicy;

pub const SEED_ENV: &str = "SYNCBOT_SEED";
pub const SYNTHETIC_TRACE: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSection {
    pub seed: u64,
    pub condition: PatternKind,
    /// Exploration stage length, seconds.
    pub duration: f64,
    pub questionnaire_duration: f64,
    /// Empty for none, `synthetic` for generated sway, otherwise a trace CSV
    /// path relative to the config file.
    pub trace: String,
}

impl Default for SessionSection {
    fn default() -> Self {
        Self {
            seed: 0,
            condition: PatternKind::Synchronized,
            duration: 180.0,
            questionnaire_duration: 5.0,
            trace: SYNTHETIC_TRACE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSection {
    pub rate: f64,
    pub staleness_timeout: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        Self { rate: DEFAULT_SENSOR_RATE, staleness_timeout: DEFAULT_STALENESS_TIMEOUT }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub drop_probability: f64,
    pub latency: f64,
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub backbone_length: f64,
    pub cable_pitch_radius: f64,
    pub spacer_count: u32,
    pub phi_max_deg: f64,
    pub steps_per_meter: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = RobotGeometry::default();
        Self {
            backbone_length: g.backbone_length,
            cable_pitch_radius: g.cable_pitch_radius,
            spacer_count: g.spacer_count,
            phi_max_deg: g.phi_max.to_degrees(),
            steps_per_meter: Stepper::DEFAULT_STEPS_PER_METER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingSection {
    pub rotation_offset_deg: f64,
    pub gain: f64,
    pub theta_source: ThetaSource,
}

impl Default for MappingSection {
    fn default() -> Self {
        Self { rotation_offset_deg: 10.0, gain: 1.0, theta_source: ThetaSource::Heading }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatternSection {
    pub simple_amplitude_deg: f64,
    pub simple_frequency: f64,
    pub simple_direction_deg: f64,
    pub ou_theta: f64,
    pub ou_sigma: f64,
}

impl Default for PatternSection {
    fn default() -> Self {
        let p = PatternConfig::default();
        Self {
            simple_amplitude_deg: p.simple_amplitude.to_degrees(),
            simple_frequency: p.simple_frequency,
            simple_direction_deg: p.simple_direction.to_degrees(),
            ou_theta: p.ou_theta,
            ou_sigma: p.ou_sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    #[default]
    PlusOne,
    Multiplier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameSection {
    pub policy: PolicyKind,
    pub factor: f64,
    pub variance: f64,
    /// Insert times in seconds after the game stage starts; empty declines.
    pub coins: Vec<f64>,
    /// Seconds recorded after the payout.
    pub tail: f64,
    /// Hard stop for the game stage, seconds.
    pub max_duration: f64,
}

impl Default for GameSection {
    fn default() -> Self {
        Self {
            policy: PolicyKind::PlusOne,
            factor: 1.5,
            variance: 0.1,
            coins: vec![2.0, 4.0],
            tail: 2.0,
            max_duration: 120.0,
        }
    }
}

impl GameSection {
    pub fn policy(&self) -> PayoutPolicy {
        match self.policy {
            PolicyKind::PlusOne => PayoutPolicy::PlusOne,
            PolicyKind::Multiplier => PayoutPolicy::Multiplier { factor: self.factor, variance: self.variance },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub participants_per_condition: usize,
    pub conditions: Vec<PatternKind>,
    /// Exploration length per participant session, seconds.
    pub session_duration: f64,
    /// 1-based questionnaire items the synthetic responses shift for the
    /// synchronized group.
    pub shifted_items: Vec<usize>,
    /// Shift in scale points (towards trust).
    pub shift: f64,
    /// Standard deviation of the synthetic answers, scale points.
    pub noise: f64,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            participants_per_condition: 17,
            conditions: vec![PatternKind::Simple, PatternKind::Random, PatternKind::Synchronized],
            session_duration: 20.0,
            shifted_items: vec![9, 12],
            shift: 2.0,
            noise: 1.0,
        }
    }
}

/// Scene annotations for the UI; no effect on the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub start_distance_cm: f64,
    pub notes: String,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self { start_distance_cm: 130.0, notes: String::new() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub session: SessionSection,
    pub sensor: SensorSection,
    pub link: LinkSection,
    pub geometry: GeometrySection,
    pub limits: MotionLimits,
    pub mapping: MappingSection,
    pub pattern: PatternSection,
    pub sway: SwayConfig,
    pub game: GameSection,
    pub study: StudySection,
    pub scene: SceneSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path` and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.apply_seed_override(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.session.seed =
                v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not a u64")))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Robot parameters with the pattern seed derived from `seed`.
    pub fn robot_config(&self, condition: PatternKind, seed: u64) -> RobotConfig {
        let phi_max = self.geometry.phi_max_deg.to_radians();
        RobotConfig {
            geometry: RobotGeometry {
                backbone_length: self.geometry.backbone_length,
                cable_pitch_radius: self.geometry.cable_pitch_radius,
                spacer_count: self.geometry.spacer_count,
                phi_max,
            },
            limits: self.limits,
            mapping: MappingConfig {
                rotation_offset: self.mapping.rotation_offset_deg.to_radians(),
                gain: self.mapping.gain,
                phi_max,
                theta_source: self.mapping.theta_source,
                ..MappingConfig::default()
            },
            pattern: PatternConfig {
                kind: condition,
                seed: seed::derive(seed, stream::PATTERN),
                simple_amplitude: self.pattern.simple_amplitude_deg.to_radians(),
                simple_frequency: self.pattern.simple_frequency,
                simple_direction: self.pattern.simple_direction_deg.to_radians(),
                ou_theta: self.pattern.ou_theta,
                ou_sigma: self.pattern.ou_sigma,
                phi_max,
            },
            staleness_timeout: self.sensor.staleness_timeout,
            steps_per_meter: self.geometry.steps_per_meter,
        }
    }

    fn load_trace(&self, seed: u64, duration: f64) -> Result<Option<Vec<OrientationSample>>> {
        match self.session.trace.trim() {
            "" => Ok(None),
            SYNTHETIC_TRACE => {
                let sway = SwayConfig { seed: seed::derive(seed, stream::SWAY), ..self.sway };
                synthetic_sway(&sway, duration, self.sensor.rate).map(Some)
            }
            path => {
                let full = self.base_dir.join(path);
                let file = std::fs::File::open(&full)
                    .map_err(|e| Error::Config(format!("cannot open trace {}: {e}", full.display())))?;
                read_trace(file).map(Some)
            }
        }
    }

    /// The session described by the `[session]` section.
    pub fn session(&self) -> Result<SessionConfig> {
        self.session_for(self.session.condition, self.session.seed, self.session.duration)
    }

    pub fn session_for(&self, condition: PatternKind, seed: u64, duration: f64) -> Result<SessionConfig> {
        let total = duration + self.session.questionnaire_duration + self.game.max_duration;
        let cfg = SessionConfig {
            seed,
            robot: self.robot_config(condition, seed),
            duration,
            questionnaire_duration: self.session.questionnaire_duration,
            trace: self.load_trace(seed, total)?,
            link: LinkModel {
                drop_probability: self.link.drop_probability,
                latency: self.link.latency,
                jitter: self.link.jitter,
                seed: seed::derive(seed, stream::LINK),
            },
            sensor_rate: self.sensor.rate,
            game: self.game.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything one simulated participant session needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub seed: u64,
    pub robot: RobotConfig,
    pub duration: f64,
    pub questionnaire_duration: f64,
    pub trace: Option<Vec<OrientationSample>>,
    pub link: LinkModel,
    pub sensor_rate: f64,
    pub game: GameSection,
}

impl SessionConfig {
    /// Defaults for `condition` with the given trace; handy in code and tests.
    pub fn new(condition: PatternKind, seed: u64, duration: f64, trace: Option<Vec<OrientationSample>>) -> Self {
        let file = ConfigFile::default();
        Self {
            seed,
            robot: file.robot_config(condition, seed),
            duration,
            questionnaire_duration: file.session.questionnaire_duration,
            trace,
            link: LinkModel { seed: seed::derive(seed, stream::LINK), ..LinkModel::default() },
            sensor_rate: file.sensor.rate,
            game: file.game,
        }
    }

    pub fn condition(&self) -> PatternKind {
        self.robot.pattern.kind
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.link.validate()?;
        self.game.policy().validate()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration must be > 0"));
        }
        if !(self.questionnaire_duration >= 0.0 && self.questionnaire_duration.is_finite()) {
            return Err(invalid("questionnaire_duration must be >= 0"));
        }
        if !(self.sensor_rate > 0.0 && self.sensor_rate.is_finite()) {
            return Err(invalid("sensor rate must be > 0"));
        }
        if !(self.game.max_duration > 0.0 && self.game.tail >= 0.0) {
            return Err(invalid("game max_duration must be > 0 and tail >= 0"));
        }
        if self.game.coins.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(invalid("coin times must be finite and >= 0"));
        }
        if self.game.coins.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("coin times must be non-decreasing"));
        }
        let kind = self.condition();
        if matches!(kind, PatternKind::Synchronized | PatternKind::Replay) && self.trace.is_none() {
            return Err(Error::MissingInput(format!("condition {kind} needs a trace")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ConfigFile::parse("").unwrap();
        assert_eq!(cfg, ConfigFile::default());
        let s = cfg.session().unwrap();
        assert_eq!(s.duration, 180.0);
        assert_eq!(s.robot.limits, MotionLimits::default());
        assert_eq!(s.robot.staleness_timeout, 0.5);
        assert!((s.robot.mapping.rotation_offset - 10f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn sections_parse() {
        let cfg = ConfigFile::parse(
            "[session]\nseed = 9\ncondition = \"random\"\nduration = 60\ntrace = \"\"\n\
             [link]\ndrop_probability = 0.2\n[game]\npolicy = \"multiplier\"\ncoins = [1.0]\n",
        )
        .unwrap();
        let s = cfg.session().unwrap();
        assert_eq!(s.condition(), PatternKind::Random);
        assert_eq!(s.link.drop_probability, 0.2);
        assert!(s.trace.is_none());
        assert_eq!(s.game.policy(), PayoutPolicy::Multiplier { factor: 1.5, variance: 0.1 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("[session]\nspeed = 1\n").is_err());
    }

    #[test]
    fn env_override_replaces_seed() {
        let mut cfg = ConfigFile::default();
        cfg.apply_seed_override(Some("42")).unwrap();
        assert_eq!(cfg.session.seed, 42);
        assert!(cfg.apply_seed_override(Some("x")).is_err());
        cfg.apply_seed_override(None).unwrap();
        assert_eq!(cfg.session.seed, 42);
    }

    #[test]
    fn synchronized_needs_a_trace() {
        let cfg = ConfigFile::parse("[session]\ntrace = \"\"\n").unwrap();
        assert!(matches!(cfg.session(), Err(Error::MissingInput(_))));
    }

    #[test]
    fn bundled_config_matches_the_defaults() {
        let text = include_str!("../../../../configs/default.toml");
        let mut cfg = ConfigFile::parse(text).unwrap();
        assert!((cfg.pattern.simple_amplitude_deg - 15.0).abs() < 1e-12);
        cfg.pattern.simple_amplitude_deg = PatternSection::default().simple_amplitude_deg;
        cfg.scene.notes.clear();
        assert_eq!(cfg, ConfigFile::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ConfigFile::default();
        assert_eq!(ConfigFile::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
