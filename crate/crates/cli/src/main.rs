//! `noma`: capacity regions, γ-parameterized rates, γ search, variance
//! tracks and estimator checks for uplink MIMO-NOMA systems.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mimo_noma::export::{LogBase, Metadata};
use mimo_noma::selftest;
use thiserror::Error;

use crate::commands::{Context, Outcome};
use crate::config::Format;

pub const EXIT_FAILED_VERDICT: u8 = 2;
pub const EXIT_INVALID_CONFIG: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Compute(#[from] mimo_noma::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use mimo_noma::Error as E;
        match self {
            CliError::Config(_) => EXIT_INVALID_CONFIG,
            CliError::Compute(
                E::InvalidConfig { .. }
                | E::Dimension(_)
                | E::InvalidArgument(_)
                | E::OutOfRange { .. }
                | E::TooManyUsers { .. },
            ) => EXIT_INVALID_CONFIG,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "noma",
    version,
    about = "Uplink MIMO-NOMA capacity and iterative LMMSE rate analysis"
)]
struct Cli {
    /// Override the command's numerical tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Override the Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the result here instead of the config's output path or stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    /// Output format; defaults to the config's choice or the command's natural one.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Report rates in bits instead of nats.
    #[arg(long, global = true)]
    bits: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sum capacity, all extreme points and an optional membership test.
    Capacity { config: PathBuf },
    /// Closed-form rates at one γ or over a γ grid.
    Rates { config: PathBuf },
    /// Find γ achieving a target rate tuple.
    Search { config: PathBuf },
    /// Iterate estimator and decoder transfer functions from v = 1.
    Track { config: PathBuf },
    /// Monte Carlo check of the estimator's AWGN output model.
    ValidateEse { config: PathBuf },
    /// Run the acceptance criteria.
    Selftest {
        /// List criteria without running them.
        #[arg(long)]
        list: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Capacity { .. } => "capacity",
            Command::Rates { .. } => "rates",
            Command::Search { .. } => "search",
            Command::Track { .. } => "track",
            Command::ValidateEse { .. } => "validate-ese",
            Command::Selftest { .. } => "selftest",
        }
    }

    fn default_format(&self) -> Format {
        match self {
            Command::Rates { .. } | Command::Track { .. } => Format::Csv,
            _ => Format::Json,
        }
    }
}

fn write_output(path: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

fn run_selftest(list: bool, output: Option<&PathBuf>) -> Result<u8, CliError> {
    let mut text = String::new();
    if list {
        for c in selftest::criteria() {
            text.push_str(&format!(
                "{:<3} {} (tolerance {:e}: {})\n",
                c.id, c.title, c.tolerance, c.tolerance_meaning
            ));
        }
        write_output(output, &text)?;
        return Ok(0);
    }
    let overrides =
        selftest::overrides_from_env().map_err(|e| CliError::Config(format!("{}: {e}", selftest::OVERRIDE_ENV)))?;
    let reports = selftest::run_all(&overrides);
    let failed = reports.iter().filter(|r| !r.passed).count();
    for r in &reports {
        text.push_str(&r.line());
        text.push('\n');
    }
    text.push_str(&format!(
        "{} of {} criteria passed\n",
        reports.len() - failed,
        reports.len()
    ));
    write_output(output, &text)?;
    Ok(if failed == 0 { 0 } else { EXIT_FAILED_VERDICT })
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Io(format!("thread pool: {e}")))?;
    }
    if let Some(t) = cli.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Config(format!("--tol {t} must be positive and finite")));
        }
    }
    let path = match &cli.command {
        Command::Selftest { list } => return run_selftest(*list, cli.output.as_ref()),
        Command::Capacity { config }
        | Command::Rates { config }
        | Command::Search { config }
        | Command::Track { config }
        | Command::ValidateEse { config } => config,
    };
    let cfg = config::load(path)?;
    let out_block = cfg.output.clone().unwrap_or_default();
    let format = cli
        .format
        .or(out_block.format)
        .unwrap_or_else(|| cli.command.default_format());
    let output = cli.output.clone().or(out_block.path);
    let log_base = if cli.bits { LogBase::Bits } else { LogBase::Nats };
    let name = cli.command.name();
    let ctx = Context {
        meta: Metadata::new(log_base, config::config_hash(name, &cfg, cli.tol, cli.seed)),
        format,
        tol: cli.tol,
        seed: cli.seed,
    };
    log::info!("running {name} (config hash {})", ctx.meta.config_hash);
    let Outcome { text, ok } = match &cli.command {
        Command::Capacity { .. } => commands::capacity(&ctx, &cfg)?,
        Command::Rates { .. } => commands::rates(&ctx, &cfg)?,
        Command::Search { .. } => commands::search(&ctx, &cfg)?,
        Command::Track { .. } => commands::track(&ctx, &cfg)?,
        Command::ValidateEse { .. } => commands::validate_ese(&ctx, &cfg)?,
        Command::Selftest { .. } => unreachable!("handled above"),
    };
    write_output(output.as_ref(), &text)?;
    Ok(if ok { 0 } else { EXIT_FAILED_VERDICT })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
