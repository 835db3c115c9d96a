use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kawasaki_core::harness::{run, ExperimentConfig, ExperimentReport, RunOptions, StudyKind};
use kawasaki_core::{Error, ModelSpec};

const EXIT_CRITERION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Multiscale experiments for 1-D lattice spin systems under Kawasaki dynamics.
#[derive(Parser, Debug)]
#[command(name = "kawasaki", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model file (or the model of a config).
    Validate(Common),
    /// Finite-N free energies against the transfer-operator limit.
    FreeEnergy(Common),
    /// Legendre table of the limit free energy.
    Phi(Common),
    /// Cramér gap of the single-block coarse-grained Hamiltonian.
    Cramer(Common),
    /// Monte-Carlo off-diagonal Hessian entries along the ladder.
    Hessian(Common),
    /// One ensemble at the first rung, with per-trajectory scalars.
    Simulate(Common),
    /// Micro, meso and macro errors along the ladder.
    Converge(Common),
    /// LSI certificates for the model.
    Certify(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (JSON). `validate` also accepts a bare model file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Log records as JSON lines on stderr.
    #[arg(long)]
    json_logs: bool,
}

impl Command {
    fn split(&self) -> (StudyKind, &Common) {
        match self {
            Command::Validate(c) => (StudyKind::Validate, c),
            Command::FreeEnergy(c) => (StudyKind::FreeEnergy, c),
            Command::Phi(c) => (StudyKind::Phi, c),
            Command::Cramer(c) => (StudyKind::Cramer, c),
            Command::Hessian(c) => (StudyKind::Hessian, c),
            Command::Simulate(c) => (StudyKind::Simulate, c),
            Command::Converge(c) => (StudyKind::Converge, c),
            Command::Certify(c) => (StudyKind::Certify, c),
        }
    }
}

fn init_logging(json: bool) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if json {
        b.format(|buf, record| {
            let line = serde_json::json!({
                "level": record.level().to_string(),
                "target": record.target(),
                "message": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    let _ = b.try_init();
}

fn load_config(study: StudyKind, common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match ExperimentConfig::load(&common.config) {
        Ok(cfg) => cfg,
        Err(e) if study == StudyKind::Validate => match ModelSpec::load(&common.config) {
            Ok(model) => ExperimentConfig::new(&model, study, Vec::new()),
            Err(_) => return Err(e),
        },
        Err(e) => return Err(e),
    };
    cfg.study = Some(study);
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_summary(report: &ExperimentReport) {
    for c in &report.criteria {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!(
        "{} study {} (config {}) in {:.1}s",
        if report.passed() { "passed" } else { "failed" },
        report.study.name(),
        &report.config_hash[..12],
        report.wall_clock_seconds
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (study, common) = cli.command.split();
    init_logging(common.json_logs);
    let cfg = match load_config(study, common).and_then(|c| c.validate().map(|_| c)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let opts = RunOptions {
        workers: common.workers,
        out: common.out.clone(),
    };
    match run(&cfg, &opts) {
        Ok(report) => {
            print_summary(&report);
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CRITERION)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
