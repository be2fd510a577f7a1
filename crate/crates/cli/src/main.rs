use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Routing of live streams through a three-tier overlay network.
#[derive(Debug, Parser)]
#[command(name = "overlay", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one instance and write solution.json and audit.json.
    Solve {
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = Alg::Approx)]
        alg: Alg,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Run several algorithms on one instance and print a CSV row for each.
    Compare {
        instance: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Alg::Approx, Alg::Hack, Alg::Ip])]
        algs: Vec<Alg>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Run Approx over a grid of multipliers and seeds.
    Sweep {
        instance: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        multipliers: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Generate a random instance.
    Gen {
        /// Sources x reflectors x sinks, e.g. 8x6x16.
        #[arg(long, value_parser = commands::parse_size)]
        size: (usize, usize, usize),
        #[arg(long, default_value = "avg")]
        regime: overlay_core::gen::Regime,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        density: f64,
        /// Assign each reflector one of this many colors.
        #[arg(long)]
        colors: Option<u32>,
        /// Give reflectors bandwidth caps.
        #[arg(long)]
        bandwidth: bool,
        /// Output file; stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Audit a solution file against its instance.
    Verify {
        instance: PathBuf,
        solution: PathBuf,
        #[arg(long, value_enum, default_value_t = Profile::Exact)]
        profile: Profile,
        #[arg(long)]
        cost_bound: Option<f64>,
        /// Packets per sink for the loss simulation; 0 skips it.
        #[arg(long, default_value_t = 0)]
        packets: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        mode: ModeFlags,
    },
    /// Write the program in CPLEX LP format.
    ExportLp {
        instance: PathBuf,
        /// Declare the variables binary.
        #[arg(long)]
        integer: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[command(flatten)]
        mode: ModeFlags,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Alg {
    Approx,
    Hack,
    Ip,
}

impl Alg {
    fn name(self) -> &'static str {
        match self {
            Alg::Approx => "approx",
            Alg::Hack => "hack",
            Alg::Ip => "ip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    Exact,
    Approx,
    Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Full,
    Transmission,
}

#[derive(Debug, Clone, Args)]
struct ModeFlags {
    /// Cost mode; overrides the instance file.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Enforce at most one copy per (sink, color).
    #[arg(long)]
    colors: bool,
    /// Use bandwidth caps instead of fan-out counts.
    #[arg(long)]
    bandwidth: bool,
}

#[derive(Debug, Clone, Args)]
struct RunFlags {
    #[command(flatten)]
    mode: ModeFlags,
    /// Rounding multiplier M; defaults to 64 log2 n.
    #[arg(long)]
    multiplier: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = overlay_core::rounding::DEFAULT_MAX_RETRIES)]
    max_retries: u32,
    /// Budget for the integer solvers.
    #[arg(long)]
    time_budget_secs: Option<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
