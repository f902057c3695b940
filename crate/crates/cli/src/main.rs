#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use satqkd::protocol::Mode;

#[derive(Debug, Parser)]
#[command(
    name = "satqkd",
    version,
    about = "Satellite decoy-BB84 pass simulator and key-rate analyzer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a pass and write rate series, tallies, records and the key report.
    Simulate(SimulateArgs),
    /// Fit extinction and channel efficiencies, or the noise model, to observed counts.
    Fit(FitArgs),
    /// Key lengths from recorded detections or a saved tally.
    Keyrate(KeyrateArgs),
    /// One-time-pad encryption against a consumable key file.
    Otp(OtpArgs),
    /// Write a synthetic ephemeris and observation set from the configuration.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Clone, Default)]
struct ConfigArgs {
    /// Configuration JSON; omitted fields take the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Chernoff failure probability.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Lower bound on the Z-basis detector efficiency ratio.
    #[arg(long)]
    eta_z: Option<f64>,
    /// Lower bound on the X-basis detector efficiency ratio.
    #[arg(long)]
    eta_x: Option<f64>,
    /// Error-correction inefficiency.
    #[arg(long)]
    f_ec: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Ephemeris CSV (t_s, elevation_deg, range_m); defaults to the configured synthetic pass.
    #[arg(long)]
    ephemeris: Option<PathBuf>,
    /// Receiver intrinsic error series CSV (t_s, e_H, e_V, e_D, e_A).
    #[arg(long)]
    errors: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = Mode::Analytic)]
    mode: Mode,
    /// Sample every pulse individually (slow; low pulse rates only).
    #[arg(long)]
    per_pulse: bool,
    /// Skip writing detections.csv in Monte Carlo mode.
    #[arg(long)]
    no_records: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitKind {
    /// ϰ and per-channel optical efficiency from channel counts.
    Counts,
    /// T, C and ϰ from the out-of-window noise rate.
    Noise,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Observation CSV (t_s, counts_H, counts_V, counts_D, counts_A[, noise]).
    #[arg(long)]
    observations: PathBuf,
    #[arg(long)]
    ephemeris: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FitKind::Counts)]
    kind: FitKind,
    /// Free parameters for the count fit: any of kappa, eta_H, eta_V, eta_D, eta_A.
    #[arg(long, value_delimiter = ',')]
    free: Option<Vec<String>>,
    /// Receiver-wide optical efficiency held fixed in the noise fit; defaults
    /// to the mean configured channel efficiency.
    #[arg(long)]
    eta_opt_total: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct KeyrateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Detection record CSV as written by `simulate --mode montecarlo`.
    #[arg(long, conflicts_with = "stats", required_unless_present = "stats")]
    detections: Option<PathBuf>,
    /// Total pulses sent while the detections were recorded.
    #[arg(long, requires = "detections")]
    sent_pulses: Option<f64>,
    /// Tally JSON as written by `simulate`.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Replace the signal and decoy QBER with this value in both bases.
    #[arg(long)]
    qber: Option<f64>,
    /// Seed for resolving double clicks in recorded detections.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct OtpArgs {
    #[command(subcommand)]
    action: OtpAction,
}

#[derive(Debug, Subcommand)]
enum OtpAction {
    /// Create a key file of seeded random bits.
    Keygen {
        #[arg(long)]
        key_file: PathBuf,
        #[arg(long)]
        bits: usize,
        #[arg(long)]
        seed: u64,
    },
    Encrypt(OtpIo),
    Decrypt(OtpIo),
}

#[derive(Debug, Args)]
struct OtpIo {
    #[arg(long)]
    key_file: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Poisson-sample the counts; without a seed the expected rates are written.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Keyrate(a) => commands::keyrate(a),
        Command::Otp(a) => commands::otp(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
