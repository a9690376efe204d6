//! A whole simulated study: participants, balanced assignment, one session
//! each, injected questionnaire answers and the comparison report.
//!
//! Questionnaire answers are not simulated behavior. They are drawn from a
//! documented synthetic distribution: every item is a rounded normal around
//! a neutral baseline, and the synchronized group is shifted towards trust
//! on the configured items. Coin counts are the ones the sessions played.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::assign::{assign_conditions, balance, Balance, Participant};
use super::config::ConfigFile;
use super::plot;
use super::session::{run_session, SessionOutput, SessionSummary};
use crate::analysis::{report_table, write_responses, Report};
use crate::analysis::{LikertResponse, DISTRUST_ITEMS, ITEMS, LIKERT_MAX};
use crate::error::{invalid, Error, Result};
use crate::patterns::PatternKind;
use crate::records::write_recorder_csv;
use crate::seed::{self, stream};
use crate::trustgame::MAX_COINS;

/// Baseline answer for distrust items and for trust items.
const DISTRUST_BASE: f64 = 2.5;
const TRUST_BASE: f64 = 4.5;
/// Seconds between a participant's coin inserts.
const COIN_SPACING: f64 = 2.0;

#[derive(Debug, Clone, Serialize)]
pub struct StudySession {
    pub participant: Participant,
    pub condition: PatternKind,
    pub seed: u64,
    pub summary: SessionSummary,
}

#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub sessions: Vec<StudySession>,
    pub outputs: Vec<SessionOutput>,
    pub responses: Vec<LikertResponse>,
    pub balance: Balance,
    pub report: Report,
}

fn participant_seed(study_seed: u64, index: usize) -> u64 {
    seed::derive(study_seed, 1000 + index as u64)
}

/// Synthetic roster: ages 19 to 65, two genders in equal proportion.
pub fn synthetic_participants(n: usize, study_seed: u64) -> Vec<Participant> {
    let mut rng = seed::rng(seed::derive(study_seed, stream::RESPONSES));
    (0..n)
        .map(|i| Participant {
            id: format!("P{:02}", i + 1),
            age: f64::from(rng.random_range(19u32..=65)),
            gender: if rng.random_bool(0.5) { "f".into() } else { "m".into() },
        })
        .collect()
}

/// Answers for one participant; `shift` moves the listed items towards trust.
pub fn synthetic_answers<R: Rng>(rng: &mut R, shifted: &[usize], shift: f64, noise: f64) -> Result<[u8; ITEMS]> {
    let normal = Normal::new(0.0, noise).map_err(|e| invalid(format!("noise: {e}")))?;
    let mut items = [0u8; ITEMS];
    for (k, item) in items.iter_mut().enumerate() {
        let number = k + 1;
        let distrust = number <= DISTRUST_ITEMS;
        let mut mean = if distrust { DISTRUST_BASE } else { TRUST_BASE };
        if shifted.contains(&number) {
            mean += if distrust { -shift } else { shift };
        }
        let v = (mean + normal.sample(rng)).round().clamp(1.0, f64::from(LIKERT_MAX));
        *item = v as u8;
    }
    Ok(items)
}

fn coin_schedule<R: Rng>(rng: &mut R) -> Vec<f64> {
    let n = rng.random_range(0..=MAX_COINS);
    (1..=n).map(|i| f64::from(i) * COIN_SPACING).collect()
}

/// Runs every session in parallel (each is independent and seeded on its
/// own) and joins the injected answers.
pub fn run_study(cfg: &ConfigFile) -> Result<StudyOutput> {
    let study = &cfg.study;
    let conditions = &study.conditions;
    if study.participants_per_condition == 0 || conditions.is_empty() {
        return Err(Error::InsufficientData("study has no sessions".into()));
    }
    if let Some(&bad) = study.shifted_items.iter().find(|&&i| !(1..=ITEMS).contains(&i)) {
        return Err(invalid(format!("shifted item {bad} is outside 1..={ITEMS}")));
    }
    let root = cfg.session.seed;
    let participants = synthetic_participants(study.participants_per_condition * conditions.len(), root);
    let groups = if conditions.len() >= 2 { assign_conditions(&participants, conditions.len())? } else { vec![0; participants.len()] };

    let mut plans = Vec::with_capacity(participants.len());
    for (i, p) in participants.iter().enumerate() {
        let seed = participant_seed(root, i);
        let condition = conditions[groups[i]];
        let mut session = cfg.session_for(condition, seed, study.session_duration)?;
        session.game.coins = coin_schedule(&mut seed::rng(seed::derive(seed, stream::GAME)));
        plans.push((p.clone(), condition, seed, session));
    }

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(plans.len());
    let chunk = plans.len().div_ceil(workers);
    let outputs: Vec<SessionOutput> = std::thread::scope(|scope| {
        let handles: Vec<_> = plans
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|(.., s)| run_session(s)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut all = Vec::with_capacity(plans.len());
        for h in handles {
            all.extend(h.join().map_err(|_| invalid("session worker panicked"))??);
        }
        Ok::<_, Error>(all)
    })?;

    let mut sessions = Vec::with_capacity(plans.len());
    let mut responses = Vec::with_capacity(plans.len());
    for ((participant, condition, seed, _), out) in plans.into_iter().zip(&outputs) {
        let mut rng = seed::rng(seed::derive(seed, stream::RESPONSES));
        let shift = if condition == PatternKind::Synchronized { study.shift } else { 0.0 };
        let items = synthetic_answers(&mut rng, &study.shifted_items, shift, study.noise)?;
        responses.push(LikertResponse {
            participant: participant.id.clone(),
            condition,
            items,
            coins: Some(out.summary.coins_inserted),
        });
        sessions.push(StudySession { participant, condition, seed, summary: out.summary.clone() });
    }
    let report = report_table(&responses, true)?;
    let balance = balance(&sessions.iter().map(|s| s.participant.clone()).collect::<Vec<_>>(), &groups, conditions.len().max(2))?;
    Ok(StudyOutput { sessions, outputs, responses, balance, report })
}

#[derive(Serialize)]
struct StudySummary<'a> {
    seed: u64,
    balance: &'a Balance,
    sessions: &'a [StudySession],
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Writes one session's recorder CSV, plots and summary into `dir`.
pub fn write_session(dir: &Path, out: &SessionOutput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut csv = Vec::new();
    write_recorder_csv(&mut csv, &out.rows)?;
    write(&dir.join("recorder.csv"), &csv)?;
    let title = format!("{} (seed {})", out.summary.condition, out.summary.seed);
    write(&dir.join("phi.svg"), plot::phi_chart(&out.ticks, &title)?.as_bytes())?;
    write(&dir.join("cables.svg"), plot::cable_velocity_chart(&out.ticks, &title)?.as_bytes())?;
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&out.summary)?.as_bytes())
}

/// Writes the study artifacts: per-session recorder CSVs, the responses,
/// the report as text, CSV and SVG, and a JSON summary.
pub fn write_study(dir: &Path, cfg: &ConfigFile, out: &StudyOutput) -> Result<()> {
    let sessions_dir = dir.join("sessions");
    fs::create_dir_all(&sessions_dir).map_err(|e| io_err(&sessions_dir, e))?;
    for (s, o) in out.sessions.iter().zip(&out.outputs) {
        let mut csv = Vec::new();
        write_recorder_csv(&mut csv, &o.rows)?;
        write(&sessions_dir.join(format!("{}_{}.csv", s.participant.id, s.condition)), &csv)?;
    }
    let mut responses = Vec::new();
    write_responses(&mut responses, &out.responses)?;
    write(&dir.join("responses.csv"), &responses)?;
    write_report(dir, &out.report)?;
    for kind in [PatternKind::Synchronized, PatternKind::Simple, PatternKind::Random] {
        if let Some((s, o)) = out.sessions.iter().zip(&out.outputs).find(|(s, _)| s.condition == kind) {
            let title = format!("{} {}", s.participant.id, kind);
            write(&dir.join(format!("phi_{kind}.svg")), plot::phi_chart(&o.ticks, &title)?.as_bytes())?;
            write(&dir.join(format!("cables_{kind}.svg")), plot::cable_velocity_chart(&o.ticks, &title)?.as_bytes())?;
        }
    }
    let summary = StudySummary { seed: cfg.session.seed, balance: &out.balance, sessions: &out.sessions };
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())
}

pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write(&dir.join("report.txt"), report.to_text().as_bytes())?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write(&dir.join("report.csv"), &csv)?;
    write(&dir.join("report.svg"), plot::report_table_svg(report)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::read_responses;

    fn small_study(per_condition: usize) -> ConfigFile {
        let mut cfg = ConfigFile::default();
        cfg.session.seed = 2024;
        cfg.session.questionnaire_duration = 1.0;
        cfg.study.participants_per_condition = per_condition;
        cfg.study.session_duration = 3.0;
        cfg
    }

    #[test]
    fn empty_study_is_an_error() {
        let mut cfg = small_study(0);
        assert!(run_study(&cfg).is_err());
        cfg.study.participants_per_condition = 2;
        cfg.study.conditions.clear();
        assert!(run_study(&cfg).is_err());
    }

    #[test]
    fn demo_study_flags_the_shifted_items() {
        let out = run_study(&small_study(17)).unwrap();
        assert_eq!(out.sessions.len(), 51);
        for c in [PatternKind::Simple, PatternKind::Random, PatternKind::Synchronized] {
            assert_eq!(out.sessions.iter().filter(|s| s.condition == c).count(), 17);
        }
        for label in ["i9", "i12"] {
            let row = out.report.rows.iter().find(|r| r.label == label).unwrap();
            assert!(row.test.p_value < 0.05, "{label} p={}", row.test.p_value);
            // simp-sync and rand-sync carry the shift
            assert!(!row.pair_stars(1).is_empty() && !row.pair_stars(2).is_empty(), "{label}");
        }
        let coins = out.report.rows.iter().find(|r| r.label == "coins").unwrap();
        assert_eq!(coins.medians.len(), 3);
        for (r, s) in out.responses.iter().zip(&out.sessions) {
            assert_eq!(r.coins, Some(s.summary.coins_inserted));
        }
    }

    #[test]
    fn responses_round_trip() {
        let out = run_study(&small_study(3)).unwrap();
        let mut buf = Vec::new();
        write_responses(&mut buf, &out.responses).unwrap();
        assert_eq!(read_responses(buf.as_slice()).unwrap(), out.responses);
    }

    #[test]
    fn artifacts_are_reproducible() {
        let cfg = small_study(2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_study(a.path(), &cfg, &run_study(&cfg).unwrap()).unwrap();
        write_study(b.path(), &cfg, &run_study(&cfg).unwrap()).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path().join("sessions")).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 6);
        for n in names {
            let p = Path::new("sessions").join(n);
            assert_eq!(fs::read(a.path().join(&p)).unwrap(), fs::read(b.path().join(&p)).unwrap());
        }
        for f in ["responses.csv", "report.csv", "report.txt", "summary.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }
}
