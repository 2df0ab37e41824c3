//! `t2l` command-line front end. [`run`] parses arguments, executes one
//! subcommand and maps the outcome to a stable exit code.

pub mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use t2l_core::config::{Preset, RunConfig};
use t2l_core::T2lError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "t2l", version, about = "Time-series to language-model embedding toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file overlaid on the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Named base configuration.
    #[arg(long, global = true, default_value = "desk", value_parser = Preset::NAMES)]
    pub preset: String,
    /// Overrides every data, training and evaluation seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic periodicity dataset.
    Generate(commands::GenerateArgs),
    /// Write a freshly initialized adapter checkpoint.
    Init(commands::InitArgs),
    /// Train the adapter on a generated dataset.
    Train(commands::TrainArgs),
    /// Pretext loss, accuracy and confusion matrix on one split.
    Eval(commands::EvalArgs),
    /// Extract one embedding per record of a labeled CSV.
    Embed(commands::EmbedArgs),
    /// Linear probe over extracted embeddings.
    Probe(commands::ProbeArgs),
    /// Correlate embedding dimensions with series autocorrelation.
    AnalyzeAcf(commands::AnalyzeAcfArgs),
    /// Latency and throughput of the full forward path.
    Bench(commands::BenchArgs),
    /// Write the bundled synthetic downstream benchmark as CSV.
    SynthDownstream(commands::SynthDownstreamArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: T2lError,
}

impl CliError {
    pub fn usage(error: T2lError) -> Self {
        CliError {
            code: EXIT_USAGE,
            error,
        }
    }
}

impl From<T2lError> for CliError {
    fn from(error: T2lError) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            error,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn load_config(global: &GlobalArgs) -> CliResult<RunConfig> {
    let preset = Preset::parse(&global.preset).map_err(CliError::usage)?;
    let mut config = RunConfig::load(preset, global.config.as_deref()).map_err(CliError::usage)?;
    if let Some(seed) = global.seed {
        config = config.with_seed(seed);
    }
    Ok(config)
}

/// Cap the worker pool from `T2L_THREADS`. Later calls are no-ops.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("T2L_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::usage(T2lError::invalid(format!("T2L_THREADS must be a positive integer, got `{v}`"))))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parse and execute; returns the process exit code. Results go to stdout,
/// diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = if cli.global.quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.error);
            e.code
        }
    }
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    let config = load_config(&cli.global)?;
    match &cli.command {
        Command::Generate(a) => commands::generate(&config, a),
        Command::Init(a) => commands::init(&config, a),
        Command::Train(a) => commands::train(&config, a),
        Command::Eval(a) => commands::eval(&config, a),
        Command::Embed(a) => commands::embed(&config, a),
        Command::Probe(a) => commands::probe(&config, a),
        Command::AnalyzeAcf(a) => commands::analyze_acf(&config, a),
        Command::Bench(a) => commands::bench(&config, a),
        Command::SynthDownstream(a) => commands::synth_downstream(&config, a),
        Command::ShowConfig => {
            print!("{}", config.to_toml());
            Ok(())
        }
    }
}
