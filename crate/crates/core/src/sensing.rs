//! Body-worn orientation samples and their mapping onto robot bend targets.
//!
//! Heading drives the bend direction; pitch and roll combine into the body
//! tilt, the angle between the body's vertical axis and the world vertical.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::kinematics::{wrap_angle, BendState};
use crate::seed;

/// Slack on the angle range checks, absorbing degree/radian round trips.
const RANGE_SLACK: f64 = 1e-9;

/// One heading/pitch/roll reading in radians, stamped in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientationSample {
    pub t: f64,
    pub heading: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl OrientationSample {
    pub fn new(t: f64, heading: f64, pitch: f64, roll: f64) -> Result<Self> {
        let s = Self { t, heading, pitch, roll };
        s.validate()?;
        Ok(s)
    }

    pub fn from_degrees(t: f64, heading: f64, pitch: f64, roll: f64) -> Result<Self> {
        Self::new(t, heading.to_radians(), pitch.to_radians(), roll.to_radians())
    }

    pub fn level(t: f64) -> Self {
        Self { t, heading: 0.0, pitch: 0.0, roll: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("t", self.t)?;
        ensure_finite("heading", self.heading)?;
        ensure_finite("pitch", self.pitch)?;
        ensure_finite("roll", self.roll)?;
        let check = |name: &str, v: f64, bound: f64| {
            if v.abs() > bound + RANGE_SLACK {
                Err(invalid(format!("{name} {v} rad outside [-{bound}, {bound}]")))
            } else {
                Ok(())
            }
        };
        check("heading", self.heading, PI)?;
        check("pitch", self.pitch, FRAC_PI_2)?;
        check("roll", self.roll, PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSource {
    #[default]
    Heading,
    TiltDirection,
}

/// Offsets subtracted from raw readings before mapping (session leveling).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ZeroReference {
    pub heading: f64,
    pub pitch: f64,
    pub roll: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    /// Added to the bend direction, radians.
    pub rotation_offset: f64,
    /// Scale from body tilt to bend angle.
    pub gain: f64,
    pub phi_max: f64,
    pub theta_source: ThetaSource,
    pub reference: ZeroReference,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            rotation_offset: 10f64.to_radians(),
            gain: 1.0,
            phi_max: 20f64.to_radians(),
            theta_source: ThetaSource::Heading,
            reference: ZeroReference::default(),
        }
    }
}

impl MappingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_finite("rotation_offset", self.rotation_offset)?;
        ensure_finite("gain", self.gain)?;
        ensure_finite("phi_max", self.phi_max)?;
        if self.gain <= 0.0 {
            return Err(invalid("gain must be > 0"));
        }
        if !(self.phi_max > 0.0 && self.phi_max <= FRAC_PI_2) {
            return Err(invalid("phi_max must lie in (0, pi/2]"));
        }
        Ok(())
    }
}

/// Angle between the body's vertical axis and the world vertical.
pub fn body_tilt(pitch: f64, roll: f64) -> f64 {
    (pitch.cos() * roll.cos()).clamp(-1.0, 1.0).acos()
}

pub fn map_orientation(sample: &OrientationSample, cfg: &MappingConfig) -> Result<BendState> {
    sample.validate()?;
    cfg.validate()?;
    let heading = wrap_angle(sample.heading - cfg.reference.heading);
    let pitch = sample.pitch - cfg.reference.pitch;
    let roll = wrap_angle(sample.roll - cfg.reference.roll);

    let phi = (cfg.gain * body_tilt(pitch, roll)).min(cfg.phi_max);
    let direction = match cfg.theta_source {
        ThetaSource::Heading => heading,
        ThetaSource::TiltDirection => {
            // Body z-axis expressed in the heading-aligned frame.
            let x = roll.cos() * pitch.sin();
            let y = -roll.sin();
            heading + y.atan2(x)
        }
    };
    BendState::new(direction + cfg.rotation_offset, phi)
}

fn circular_mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = values.fold((0.0, 0.0), |(s, c), v| (s + v.sin(), c + v.cos()));
    if s == 0.0 && c == 0.0 {
        0.0
    } else {
        s.atan2(c)
    }
}

/// Leveling offsets: the component-wise circular mean of the samples.
pub fn zero_reference(samples: &[OrientationSample]) -> Result<ZeroReference> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("zero_reference needs at least one sample".into()));
    }
    for s in samples {
        s.validate()?;
    }
    Ok(ZeroReference {
        heading: circular_mean(samples.iter().map(|s| s.heading)),
        pitch: circular_mean(samples.iter().map(|s| s.pitch)),
        roll: circular_mean(samples.iter().map(|s| s.roll)),
    })
}

/// A row of the trace CSV: `t,heading,pitch,roll`, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub heading: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl From<&OrientationSample> for TraceRow {
    fn from(s: &OrientationSample) -> Self {
        Self {
            t: s.t,
            heading: s.heading.to_degrees(),
            pitch: s.pitch.to_degrees(),
            roll: s.roll.to_degrees(),
        }
    }
}

impl TryFrom<TraceRow> for OrientationSample {
    type Error = Error;

    fn try_from(r: TraceRow) -> Result<Self> {
        OrientationSample::from_degrees(r.t, r.heading, r.pitch, r.roll)
    }
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<OrientationSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "heading", "pitch", "roll"] {
        return Err(invalid(format!("trace header must be t,heading,pitch,roll; got {:?}", headers)));
    }
    let mut out: Vec<OrientationSample> = Vec::new();
    for row in rdr.deserialize::<TraceRow>() {
        let sample = OrientationSample::try_from(row?)?;
        if let Some(prev) = out.last() {
            if sample.t < prev.t {
                return Err(Error::TimeRegression { now: sample.t, last: prev.t });
            }
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn write_trace<W: Write>(writer: W, samples: &[OrientationSample]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    for s in samples {
        wtr.serialize(TraceRow::from(s))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Synthetic body sway standing in for a recorded participant.
///
/// Pitch and roll are sums of three sinusoids with seeded frequencies and
/// phases; heading wanders slowly. Used by demos and the bundled study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwayConfig {
    pub seed: u64,
    /// Peak pitch/roll excursion, degrees.
    pub tilt_amplitude_deg: f64,
    /// Peak heading excursion, degrees.
    pub heading_amplitude_deg: f64,
    pub min_frequency: f64,
    pub max_frequency: f64,
}

impl Default for SwayConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tilt_amplitude_deg: 15.0,
            heading_amplitude_deg: 90.0,
            min_frequency: 0.05,
            max_frequency: 0.5,
        }
    }
}

pub fn synthetic_sway(cfg: &SwayConfig, duration: f64, rate: f64) -> Result<Vec<OrientationSample>> {
    if !(duration > 0.0 && rate > 0.0) {
        return Err(invalid("duration and rate must be > 0"));
    }
    if !(cfg.tilt_amplitude_deg >= 0.0 && cfg.tilt_amplitude_deg < 90.0) {
        return Err(invalid("tilt amplitude must lie in [0, 90) degrees"));
    }
    if !(cfg.heading_amplitude_deg >= 0.0 && cfg.heading_amplitude_deg <= 180.0) {
        return Err(invalid("heading amplitude must lie in [0, 180] degrees"));
    }
    if !(cfg.min_frequency > 0.0 && cfg.max_frequency >= cfg.min_frequency) {
        return Err(invalid("sway frequencies must satisfy 0 < min <= max"));
    }
    let mut rng = seed::rng(cfg.seed);
    let mut components = |amplitude: f64, slow: bool| -> Vec<(f64, f64, f64)> {
        // Weights 0.5/0.3/0.2 keep the sum within the requested amplitude.
        [0.5, 0.3, 0.2]
            .iter()
            .map(|w| {
                let f = if slow {
                    rng.random_range(cfg.min_frequency * 0.2..=cfg.min_frequency)
                } else {
                    rng.random_range(cfg.min_frequency..=cfg.max_frequency)
                };
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amplitude * w, f, phase)
            })
            .collect()
    };
    let pitch = components(cfg.tilt_amplitude_deg.to_radians(), false);
    let roll = components(cfg.tilt_amplitude_deg.to_radians(), false);
    let heading = components(cfg.heading_amplitude_deg.to_radians(), true);
    let eval = |parts: &[(f64, f64, f64)], t: f64| {
        parts
            .iter()
            .map(|(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin())
            .sum::<f64>()
    };
    let n = (duration * rate).round() as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 / rate;
            OrientationSample::new(
                t,
                eval(&heading, t).clamp(-PI, PI),
                eval(&pitch, t).clamp(-FRAC_PI_2, FRAC_PI_2),
                eval(&roll, t),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{Rotation3, Vector3};

    fn no_offset() -> MappingConfig {
        MappingConfig { rotation_offset: 0.0, ..MappingConfig::default() }
    }

    #[test]
    fn upright_body_maps_straight() {
        let b = map_orientation(&OrientationSample::level(0.0), &no_offset()).unwrap();
        assert_eq!(b, BendState::STRAIGHT);
    }

    #[test]
    fn pure_pitch_maps_to_equal_bend() {
        let s = OrientationSample::new(0.0, 0.3, 20f64.to_radians(), 0.0).unwrap();
        let b = map_orientation(&s, &no_offset()).unwrap();
        assert_abs_diff_eq!(b.theta(), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(b.phi(), 20f64.to_radians(), epsilon = 1e-12);
    }

    #[test]
    fn combined_pitch_and_roll_tilt() {
        let (p, r) = (10f64.to_radians(), 10f64.to_radians());
        // Rotate the body z-axis and measure its angle to the vertical.
        let z = Rotation3::from_axis_angle(&Vector3::y_axis(), p)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), r)
            * Vector3::z();
        let oracle = z.angle(&Vector3::z());
        let s = OrientationSample::new(0.0, 0.0, p, r).unwrap();
        let b = map_orientation(&s, &no_offset()).unwrap();
        assert_abs_diff_eq!(b.phi(), oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(b.phi().to_degrees(), 14.106044, epsilon = 1e-6);
    }

    #[test]
    fn tilt_direction_follows_the_lean() {
        let cfg = MappingConfig { theta_source: ThetaSource::TiltDirection, ..no_offset() };
        let s = OrientationSample::new(0.0, 0.0, 10f64.to_radians(), 0.0).unwrap();
        assert_abs_diff_eq!(map_orientation(&s, &cfg).unwrap().theta(), 0.0, epsilon = 1e-12);
        let s = OrientationSample::new(0.0, 0.5, 0.0, 10f64.to_radians()).unwrap();
        assert_abs_diff_eq!(map_orientation(&s, &cfg).unwrap().theta(), 0.5 - FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn rejects_out_of_range_angles() {
        assert!(OrientationSample::new(0.0, 0.0, 2.0, 0.0).is_err());
        assert!(OrientationSample::new(0.0, 4.0, 0.0, 0.0).is_err());
        assert!(OrientationSample::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
        assert!(OrientationSample::from_degrees(0.0, 180.0, -90.0, -180.0).is_ok());
    }

    #[test]
    fn rotation_offset_is_applied() {
        let s = OrientationSample::new(0.0, 0.2, 0.1, 0.0).unwrap();
        let b = map_orientation(&s, &MappingConfig::default()).unwrap();
        assert_abs_diff_eq!(b.theta(), 0.2 + 10f64.to_radians(), epsilon = 1e-12);
    }

    #[test]
    fn single_sample_reference_levels_it() {
        let s = OrientationSample::new(0.0, 0.4, 0.2, -0.1).unwrap();
        let reference = zero_reference(&[s]).unwrap();
        assert_abs_diff_eq!(reference.heading, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(reference.pitch, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(reference.roll, -0.1, epsilon = 1e-12);
        let cfg = MappingConfig { reference, ..MappingConfig::default() };
        assert_abs_diff_eq!(map_orientation(&s, &cfg).unwrap().phi(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_samples_give_zero_reference() {
        let a = OrientationSample::new(0.0, 0.3, 0.1, -0.2).unwrap();
        let b = OrientationSample::new(0.1, -0.3, -0.1, 0.2).unwrap();
        let r = zero_reference(&[a, b]).unwrap();
        assert_abs_diff_eq!(r.heading, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.pitch, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.roll, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_forward_lean_is_cancelled() {
        let stream: Vec<_> = (0..50)
            .map(|i| OrientationSample::new(i as f64 * 0.02, 0.0, 5f64.to_radians(), 0.0).unwrap())
            .collect();
        let reference = zero_reference(&stream).unwrap();
        let cfg = MappingConfig { reference, ..MappingConfig::default() };
        for s in &stream {
            assert_abs_diff_eq!(map_orientation(s, &cfg).unwrap().phi(), 0.0, epsilon = 1e-12);
        }
        assert!(zero_reference(&[]).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let samples = synthetic_sway(&SwayConfig::default(), 2.0, 50.0).unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,heading,pitch,roll\n"));
        assert!(!text.contains('\r'));
        let back = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_abs_diff_eq!(a.heading, b.heading, epsilon = 1e-12);
            assert_abs_diff_eq!(a.pitch, b.pitch, epsilon = 1e-12);
        }
    }

    #[test]
    fn trace_rejects_bad_header_and_time_regression() {
        assert!(read_trace("a,b,c,d\n1,2,3,4\n".as_bytes()).is_err());
        let back = "t,heading,pitch,roll\n1,0,0,0\n0.5,0,0,0\n";
        assert!(matches!(read_trace(back.as_bytes()), Err(Error::TimeRegression { .. })));
    }

    #[test]
    fn sway_is_seeded() {
        let a = synthetic_sway(&SwayConfig { seed: 3, ..Default::default() }, 5.0, 50.0).unwrap();
        let b = synthetic_sway(&SwayConfig { seed: 3, ..Default::default() }, 5.0, 50.0).unwrap();
        let c = synthetic_sway(&SwayConfig { seed: 4, ..Default::default() }, 5.0, 50.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 251);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn doubling_gain_doubles_the_bend(h in -PI..PI, p in -0.3f64..0.3, r in -0.3f64..0.3) {
                let s = OrientationSample::new(0.0, h, p, r).unwrap();
                let wide = MappingConfig { phi_max: FRAC_PI_2, ..no_offset() };
                let one = map_orientation(&s, &wide).unwrap();
                let two = map_orientation(&s, &MappingConfig { gain: 2.0, ..wide }).unwrap();
                prop_assert_eq!(two.phi(), 2.0 * one.phi());
            }

            #[test]
            fn bend_never_exceeds_the_limit(
                h in -PI..=PI, p in -FRAC_PI_2..=FRAC_PI_2, r in -PI..=PI, gain in 0.01f64..100.0,
                source in prop_oneof![Just(ThetaSource::Heading), Just(ThetaSource::TiltDirection)],
            ) {
                let s = OrientationSample::new(0.0, h, p, r).unwrap();
                let cfg = MappingConfig { gain, theta_source: source, ..MappingConfig::default() };
                let b = map_orientation(&s, &cfg).unwrap();
                prop_assert!(b.phi() >= 0.0 && b.phi() <= cfg.phi_max);
            }

            #[test]
            fn heading_shift_equals_offset_shift(
                h in -PI..PI, d in -PI..PI, o in -PI..PI, p in -0.3f64..0.3, r in -0.3f64..0.3,
            ) {
                let cfg = |offset| MappingConfig { rotation_offset: offset, ..MappingConfig::default() };
                let a = map_orientation(&OrientationSample::new(0.0, wrap_angle(h + d), p, r).unwrap(), &cfg(o)).unwrap();
                let b = map_orientation(&OrientationSample::new(0.0, h, p, r).unwrap(), &cfg(o + d)).unwrap();
                prop_assert_eq!(a.phi(), b.phi());
                if a.phi() > 0.0 {
                    prop_assert!(wrap_angle(a.theta() - b.theta()).abs() < 1e-12);
                }
            }
        }
    }
}
