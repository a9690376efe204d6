//! Record schemas shared by the fabric, the recorder and the gateway.
//!
//! Angles are degrees and cable deltas millimeters in every record; the
//! simulation itself works in radians and meters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::patterns::PatternKind;
pub use crate::sensing::TraceRow;

/// Experiment stage; transitions only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Explore,
    Questionnaire,
    Game,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Explore => "explore",
            Stage::Questionnaire => "questionnaire",
            Stage::Game => "game",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explore" => Ok(Stage::Explore),
            "questionnaire" => Ok(Stage::Questionnaire),
            "game" => Ok(Stage::Game),
            _ => Err(invalid(format!("unknown stage '{s}'"))),
        }
    }
}

/// Per-tick robot telemetry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Telemetry {
    pub t: f64,
    pub dl1: f64,
    pub dl2: f64,
    pub dl3: f64,
    pub theta: f64,
    pub phi: f64,
    pub steps1: i64,
    pub steps2: i64,
    pub steps3: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoinEvent {
    Inserted,
    Rejected,
    Payout,
    /// Periodic restatement of the counters, so a lost event heals.
    Tally,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoinRecord {
    pub t: f64,
    pub event: CoinEvent,
    pub coins_inserted: u32,
    pub coins_returned: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub t: f64,
    pub stage: Stage,
    pub condition: PatternKind,
}

/// One recorder log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecorderRecord {
    pub t: f64,
    pub heading: Option<f64>,
    pub pitch: Option<f64>,
    pub roll: Option<f64>,
    pub theta: f64,
    pub phi: f64,
    pub dl1: f64,
    pub dl2: f64,
    pub dl3: f64,
    pub condition: PatternKind,
    pub stage: Stage,
    pub coins_inserted: u32,
    pub coins_returned: u32,
}

pub const RECORDER_HEADER: &str =
    "t,heading,pitch,roll,theta,phi,dl1,dl2,dl3,condition,stage,coins_inserted,coins_returned";

pub fn write_recorder_csv<W: std::io::Write>(writer: W, rows: &[RecorderRecord]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    if rows.is_empty() {
        wtr.write_record(RECORDER_HEADER.split(','))?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_recorder_csv<R: std::io::Read>(reader: R) -> Result<Vec<RecorderRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != RECORDER_HEADER {
        return Err(invalid(format!("recorder header mismatch: {}", header.join(","))));
    }
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Reads `t`, `theta` and `phi` (degrees) from any CSV that has those
/// columns, such as a recorder log. Returns the bends and the sample rate.
pub fn read_bend_series<R: std::io::Read>(reader: R) -> Result<(Vec<crate::kinematics::BendState>, f64)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| invalid(format!("reference CSV has no '{name}' column")))
    };
    let (ct, ctheta, cphi) = (col("t")?, col("theta")?, col("phi")?);
    let mut times = Vec::new();
    let mut bends = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .unwrap_or("")
                .parse()
                .map_err(|_| invalid(format!("row {}: column {} is not a number", i + 2, header.get(c).unwrap_or("?"))))
        };
        times.push(num(ct)?);
        bends.push(crate::kinematics::BendState::new(num(ctheta)?.to_radians(), num(cphi)?.to_radians())?);
    }
    if times.len() < 2 {
        return Err(Error::InsufficientData("reference needs at least two rows".into()));
    }
    let span = times[times.len() - 1] - times[0];
    if span.is_nan() || span <= 0.0 {
        return Err(invalid("reference times must increase"));
    }
    Ok((bends, (times.len() - 1) as f64 / span))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recorder_csv_round_trip() {
        let rows = vec![RecorderRecord {
            t: 0.01,
            heading: Some(12.5),
            pitch: None,
            roll: Some(-3.0),
            theta: 10.0,
            phi: 1.25,
            dl1: -0.5,
            dl2: 0.25,
            dl3: 0.25,
            condition: PatternKind::Synchronized,
            stage: Stage::Explore,
            coins_inserted: 0,
            coins_returned: 0,
        }];
        let mut buf = Vec::new();
        write_recorder_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(RECORDER_HEADER));
        assert_eq!(read_recorder_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn bend_series_from_a_recorder_log() {
        let text = format!("{RECORDER_HEADER}\n0,,,,0,1,0,0,0,random,explore,0,0\n0.5,,,,90,2,0,0,0,random,explore,0,0\n1,,,,180,3,0,0,0,random,explore,0,0\n");
        let (bends, rate) = read_bend_series(text.as_bytes()).unwrap();
        assert_eq!(rate, 2.0);
        assert!((bends[1].theta() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((bends[2].phi() - 3f64.to_radians()).abs() < 1e-15);
        assert!(read_bend_series("t,phi\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn stage_order_is_monotone() {
        assert!(Stage::Explore < Stage::Questionnaire && Stage::Questionnaire < Stage::Game);
        assert_eq!("game".parse::<Stage>().unwrap(), Stage::Game);
    }
}
