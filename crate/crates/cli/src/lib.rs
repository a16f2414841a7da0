//! Command-line driver: every experiment of the `elastoplast` library behind
//! one binary, configured by a JSON file plus flag overrides.
//!
//! Each invocation writes a run directory `<out>/<id>/` holding the resolved
//! `config.json`, a `manifest.json` record and the experiment's CSV files.
//!
//! Exit codes: `0` success, `1` invalid input (argv, config, preconditions,
//! or a failed `validate`), `2` runtime failure.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use elastoplast::dynamics::State;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig};
pub use output::OutputRecord;

#[derive(Debug, Parser)]
#[command(name = "elastoplast", version, about = "Randomly forced elasto-plastic oscillator experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate one forced trajectory.
    Simulate,
    /// Synthesise and verify a control steering `from` to `to` in time `T`.
    Control,
    /// Controls of the linearised system around the smooth point.
    Lincontrol,
    /// Monte Carlo check of the Lyapunov drift bound.
    Lyapunov,
    /// Hitting times of the ball `B(p, delta)`.
    Recur,
    /// Total variation between the one-period kernels at `x` and `x_prime`.
    KernelTv,
    /// Coupling times of two chains started at `x` and `x_prime`.
    Couple,
    /// Convergence of the law started at `from` to the empirical invariant measure.
    Mix,
    /// Empirical invariant measure.
    Invariant,
    /// Projection error of Brownian paths onto truncated bases.
    NoiseCheck,
    /// Structural checks of the configured model.
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Control => "control",
            Command::Lincontrol => "lincontrol",
            Command::Lyapunov => "lyapunov",
            Command::Recur => "recur",
            Command::KernelTv => "kernel-tv",
            Command::Couple => "couple",
            Command::Mix => "mix",
            Command::Invariant => "invariant",
            Command::NoiseCheck => "noise-check",
            Command::Validate => "validate",
        }
    }
}

fn parse_state(s: &str) -> Result<[f64; 2], String> {
    let (y, z) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `y,z`, got `{s}`"))?;
    let y: f64 = y.trim().parse().map_err(|e| format!("y: {e}"))?;
    let z: f64 = z.trim().parse().map_err(|e| format!("z: {e}"))?;
    Ok([y, z])
}

/// Flags overriding fields of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root of the run directories.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Run directory name; defaults to `<command>-<config hash prefix>`.
    #[arg(long, global = true)]
    pub id: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub drift: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, value_parser = parse_state, allow_hyphen_values = true)]
    pub from: Option<[f64; 2]>,
    #[arg(long, global = true, value_parser = parse_state, allow_hyphen_values = true)]
    pub to: Option<[f64; 2]>,
    #[arg(long = "T", global = true)]
    pub t: Option<f64>,
    #[arg(long, global = true, value_parser = parse_state, allow_hyphen_values = true)]
    pub x: Option<[f64; 2]>,
    #[arg(long = "x-prime", global = true, value_parser = parse_state, allow_hyphen_values = true)]
    pub x_prime: Option<[f64; 2]>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub k: Option<u64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    #[arg(long = "delta-hat", global = true)]
    pub delta_hat: Option<f64>,
    /// Solver step, also the kernel substep.
    #[arg(long, global = true)]
    pub h: Option<f64>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long = "burn-in", global = true)]
    pub burn_in: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub noise: Option<NoiseArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NoiseArg {
    White,
    Decomposable,
    None,
}

impl Overrides {
    /// Applies the flags to an unresolved config.
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        let e = &mut cfg.experiment;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.drift {
            if *d != cfg.model.drift {
                cfg.model.drift = d.clone();
                cfg.model.params.clear();
                cfg.model.alpha = None;
                cfg.model.c = None;
            }
        }
        if let Some(a) = self.alpha {
            cfg.model.alpha = Some(a);
        }
        if let Some(v) = self.from {
            e.from = v;
        }
        if let Some(v) = self.to {
            e.to = v;
        }
        if let Some(v) = self.t {
            e.t = v;
        }
        if let Some(v) = self.x {
            e.x = v;
        }
        if let Some(v) = self.x_prime {
            e.x_prime = v;
        }
        if let Some(v) = self.n {
            e.n = v;
        }
        if let Some(v) = self.k {
            e.k = v;
        }
        if let Some(v) = self.delta {
            e.delta = v;
        }
        if let Some(v) = self.delta_hat {
            e.delta_hat = v;
        }
        if let Some(v) = self.samples {
            e.invariant.samples = v;
        }
        if let Some(v) = self.burn_in {
            e.invariant.burn_in = v;
        }
        if let Some(v) = self.h {
            cfg.solver.h = Some(v);
        }
        if let Some(v) = self.noise {
            cfg.noise.kind = match v {
                NoiseArg::White => config::NoiseKind::White,
                NoiseArg::Decomposable => config::NoiseKind::Decomposable,
                NoiseArg::None => config::NoiseKind::None,
            };
        }
    }
}

/// Failure of a CLI run, mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(elastoplast::Error),
    #[error("{0}")]
    Runtime(elastoplast::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("validation failed: {0}")]
    Failed(String),
}

impl From<elastoplast::Error> for CliError {
    fn from(e: elastoplast::Error) -> Self {
        use elastoplast::Error as E;
        match e {
            E::InvalidParameter { .. }
            | E::Precondition(_)
            | E::Infeasible { .. }
            | E::MismatchedBins
            | E::EmptyGrid(_) => CliError::Invalid(e),
            E::NonFinite(_) | E::ForcingTooShort { .. } | E::BlowUp { .. } | E::NoEvents(_) | E::Diagnostic(_) => {
                CliError::Runtime(e)
            }
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) | CliError::Failed(_) => 1,
            CliError::Runtime(_) | CliError::Io(_) => 2,
        }
    }
}

/// Resolves the config named by the flags, with overrides applied.
pub fn resolve_config(overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let mut raw: ExperimentConfig = match &overrides.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?
        }
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut raw);
    raw.resolve()
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(record) => {
            println!("{}", serde_json::to_string_pretty(&record).expect("record serialises"));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed invocation on a pool sized by `ELASTOPLAST_THREADS`.
pub fn run(cli: &Cli) -> Result<OutputRecord, CliError> {
    let cfg = resolve_config(&cli.overrides)?;
    let threads = elastoplast::ensemble::threads_from_env();
    elastoplast::ensemble::with_threads(threads, || commands::execute(cli.command, &cfg, &cli.overrides))
}

pub(crate) fn state(v: [f64; 2]) -> State {
    State::new(v[0], v[1])
}
