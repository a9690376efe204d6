//! Study plumbing: configuration, batch sessions, participant assignment,
//! synthetic studies and their artifacts.

pub mod assign;
pub mod config;
pub mod plot;
pub mod session;
pub mod study;

pub use assign::{assign_conditions, balance, read_participants, Balance, Participant};
pub use config::{ConfigFile, SessionConfig, SEED_ENV};
pub use session::{run_session, Recorder, SessionOutput, SessionSummary};
pub use study::{run_study, write_report, write_session, write_study, StudyOutput};
