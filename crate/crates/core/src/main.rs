use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use syncbot::analysis::{read_responses, report_table};
use syncbot::gateway::{serve, ServeOptions, DEFAULT_BROADCAST_RATE};
use syncbot::harness::{
    assign_conditions, balance, read_participants, run_session, run_study, write_report, write_session, write_study,
    ConfigFile,
};
use syncbot::patterns::{calibrate_random, motion_stats, random_run, CALIBRATION_HORIZON};
use syncbot::records::read_bend_series;
use syncbot::{Error, Result};

#[derive(Parser)]
#[command(name = "syncbot", version, about = "Continuum robot study simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the session in [session], or the whole study with --study.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        study: bool,
    },
    /// Per-item comparison report from a responses CSV.
    Analyze {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Exit nonzero if any row is degenerate.
        #[arg(long)]
        strict: bool,
        /// Use the untied Dunn variance.
        #[arg(long)]
        no_tie_correction: bool,
    },
    /// Balanced condition assignment; prints id,age,gender,group.
    Assign {
        #[arg(long)]
        participants: PathBuf,
        #[arg(short, default_value_t = 3)]
        k: usize,
    },
    /// Fit the random pattern to a recorded t,theta,phi series.
    CalibrateRandom {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Live sessions over newline-delimited JSON on TCP.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        record: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BROADCAST_RATE)]
        broadcast_rate: f64,
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
    },
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => {
            let mut cfg = ConfigFile::default();
            cfg.apply_seed_override(std::env::var(syncbot::harness::SEED_ENV).ok().as_deref())?;
            Ok(cfg)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, out, study } => {
            let cfg = ConfigFile::load(&config)?;
            if study {
                let result = run_study(&cfg)?;
                write_study(&out, &cfg, &result)?;
                println!("{}", result.report.to_text());
                println!("{} sessions written to {}", result.sessions.len(), out.display());
            } else {
                let session = cfg.session()?;
                let result = run_session(&session)?;
                write_session(&out, &result)?;
                println!("{}", serde_json::to_string_pretty(&result.summary)?);
            }
        }
        Command::Analyze { responses, out, strict, no_tie_correction } => {
            let rows = read_responses(open(&responses)?)?;
            let report = report_table(&rows, !no_tie_correction)?;
            write_report(&out, &report)?;
            println!("{}", report.to_text());
            let degenerate = report.degenerate_rows();
            if !degenerate.is_empty() {
                eprintln!("degenerate rows: {}", degenerate.join(", "));
                if strict {
                    return Ok(ExitCode::from(2));
                }
            }
        }
        Command::Assign { participants, k } => {
            let people = read_participants(open(&participants)?)?;
            let groups = assign_conditions(&people, k)?;
            let mut wtr = csv::Writer::from_writer(std::io::stdout());
            wtr.write_record(["id", "age", "gender", "group"])?;
            for (p, g) in people.iter().zip(&groups) {
                wtr.write_record([p.id.clone(), p.age.to_string(), p.gender.clone(), g.to_string()])?;
            }
            wtr.flush()?;
            eprintln!("{:?}", balance(&people, &groups, k)?);
        }
        Command::CalibrateRandom { reference, config } => {
            let cfg = load_config(config.as_deref())?;
            let pattern = cfg.robot_config(syncbot::patterns::PatternKind::Random, cfg.session.seed).pattern;
            let (bends, rate) = read_bend_series(open(&reference)?)?;
            let fitted = calibrate_random(&bends, rate, &pattern)?;
            let want = motion_stats(&bends, rate);
            let got = motion_stats(&random_run(&fitted, rate, CALIBRATION_HORIZON), rate);
            println!("[pattern]\nou_theta = {}\nou_sigma = {}", fitted.ou_theta, fitted.ou_sigma);
            eprintln!(
                "reference rms {:.3} deg, {:.3} crossings/s; fitted rms {:.3} deg, {:.3} crossings/s",
                want.rms_phi.to_degrees(),
                want.zero_crossing_rate,
                got.rms_phi.to_degrees(),
                got.zero_crossing_rate
            );
        }
        Command::Serve { port, config, record, broadcast_rate, time_scale } => {
            let cfg = load_config(config.as_deref())?;
            serve(port, cfg.session()?, ServeOptions { broadcast_rate, time_scale, record })?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
