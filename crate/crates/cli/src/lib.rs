//! `loggas` command-line driver: one subcommand per pipeline stage.
//!
//! Exit codes: 0 success, 1 validation failure (bad config, arguments or
//! input files), 2 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use loggas::config::{ExperimentConfig, RunManifest, StepState, StepStatus};
use loggas::persist;
use loggas::{Error, Result};

mod stages;
mod verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(
    name = "loggas",
    version,
    about = "Numerical laboratory for one-cut log-gases"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true, value_name = "DIR", env = "LOGGAS_OUT")]
    out: Option<PathBuf>,
    /// Master seed (overrides experiment.seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads, 0 = all cores (overrides threads.count).
    #[arg(long, global = true, value_name = "N", env = "LOGGAS_THREADS")]
    threads: Option<usize>,
    /// Working precision in significant digits (overrides precision.digits).
    #[arg(long, global = true, value_name = "DIGITS")]
    precision: Option<u32>,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Equilibrium density, effective potential and one-cut conditions.
    Equilibrium,
    /// Recurrence tables, string equations and Toeplitz limit checks.
    Orthopoly,
    /// Kernel variances, p11 marginals and the perturbation scan (even n only).
    Kernels,
    /// Run the invariant suite and write a pass/fail report.
    Verify,
    /// Draw log-gas samples for every n of the ladder.
    Sample,
    /// Fluctuation statistics along the n ladder.
    Clt,
    /// Merge the clt results of several run directories.
    Report {
        /// Output directories of earlier `clt` runs.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Equilibrium => "equilibrium",
            Command::Orthopoly => "orthopoly",
            Command::Kernels => "kernels",
            Command::Verify => "verify",
            Command::Sample => "sample",
            Command::Clt => "clt",
            Command::Report { .. } => "report",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERIC
    }
}

/// Parse `argv` (program name first), run the stage and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_VALIDATION
            } else {
                EXIT_OK
            };
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.count)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_NUMERIC;
        }
    };
    match pool.install(|| execute(&cli.command, &cfg)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.experiment.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads.count = t;
    }
    if let Some(p) = cli.precision {
        cfg.precision.digits = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Records step status and outputs; the manifest is written last.
pub(crate) struct Run<'a> {
    pub cfg: &'a ExperimentConfig,
    pub out: PathBuf,
    manifest: RunManifest,
}

impl Run<'_> {
    pub fn step(&mut self, name: &str, f: impl FnOnce(&Path) -> Result<Vec<String>>) -> Result<()> {
        let start = Instant::now();
        let res = f(&self.out);
        let seconds = start.elapsed().as_secs_f64();
        let (status, message, out) = match res {
            Ok(files) => (StepState::Ok, None, Ok(files)),
            Err(e) => (StepState::Failed, Some(e.to_string()), Err(e)),
        };
        println!(
            "{:<6} {name} ({seconds:.2} s)",
            if status == StepState::Ok {
                "ok"
            } else {
                "FAILED"
            }
        );
        self.manifest.steps.push(StepStatus {
            name: name.into(),
            status,
            message,
            seconds,
        });
        let files = out?;
        self.manifest.outputs.extend(files);
        Ok(())
    }
}

fn execute(cmd: &Command, cfg: &ExperimentConfig) -> Result<()> {
    let out = cfg.output.dir.clone();
    std::fs::create_dir_all(&out)?;
    let start = Instant::now();
    persist::write_atomic(&out.join(RESOLVED_CONFIG), cfg.to_toml().as_bytes())?;
    let mut run = Run {
        cfg,
        out: out.clone(),
        manifest: RunManifest::new(cmd.name(), cfg),
    };
    run.manifest.outputs.push(RESOLVED_CONFIG.into());
    let res = match cmd {
        Command::Equilibrium => stages::equilibrium(&mut run),
        Command::Orthopoly => stages::orthopoly(&mut run),
        Command::Kernels => stages::kernels(&mut run),
        Command::Verify => verify::verify(&mut run),
        Command::Sample => stages::sample(&mut run),
        Command::Clt => stages::clt(&mut run),
        Command::Report { runs } => stages::report(&mut run, runs),
    };
    run.manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    persist::save(&out.join(MANIFEST), &run.manifest)?;
    res
}
