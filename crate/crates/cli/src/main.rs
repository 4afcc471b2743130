//! `sfgame` command-line front end.
//!
//! Exit codes: 0 on success, 1 when the instance is infeasible, outside a
//! supported regime or fails verification, 2 on malformed input.

mod commands;
mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "sfgame", version, about = "Supply-function equilibria and market-power bounds on DC networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Output encoding.
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    pub format: Format,
    /// Write to this file (atomically) instead of stdout.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    /// Largest admissible deviation gain and operator objective gap [default: 1e-6].
    #[arg(long, global = true)]
    pub eps_nash: Option<f64>,
    /// Slack on network and capacity constraints [default: 1e-8].
    #[arg(long, global = true)]
    pub tol_feas: Option<f64>,
    /// Largest KKT residual accepted from a solve before a warning [default: 1e-7].
    #[arg(long, global = true)]
    pub tol_kkt: Option<f64>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Efficient dispatch, or the operator's dispatch under submitted bids.
    Dispatch {
        scenario: PathBuf,
        /// Comma-separated bid parameters, one per producer.
        #[arg(long, value_delimiter = ',')]
        bids: Option<Vec<f64>>,
    },
    /// Competitive equilibrium.
    Ce { scenario: PathBuf },
    /// Nash equilibrium of the bidding game.
    Nash { scenario: PathBuf },
    /// Market shares, residual supply indices and bounds.
    Indices {
        scenario: PathBuf,
        /// Also compute the Nash equilibrium for Lerner indices and the price of anarchy.
        #[arg(long)]
        nash: bool,
    },
    /// Equilibrium cost across line capacities on the two-node network.
    Braess(commands::BraessArgs),
    /// Checks observed prices against the worst-case markup envelope.
    Envelope {
        /// CSV with header rsi,price and optional mc,ms columns.
        input: PathBuf,
    },
    /// Two-node instance whose price of anarchy grows without bound.
    PoaExample(commands::PoaArgs),
    /// Re-checks an equilibrium file emitted by `nash` or `ce`.
    Verify { scenario: PathBuf, equilibrium: PathBuf },
}

pub enum Failure {
    Input(String),
    Regime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Regime(_) => 1,
        }
    }
}

impl From<sfgame::Error> for Failure {
    fn from(e: sfgame::Error) -> Self {
        if e.is_regime() || matches!(e, sfgame::Error::NoConvergence(_)) {
            Failure::Regime(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

/// Bytes to emit and whether the command succeeded on its own terms.
pub struct Output {
    pub bytes: Vec<u8>,
    pub ok: bool,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn run(cli: Cli) -> Result<Output, Failure> {
    let c = &cli.common;
    match cli.command {
        Command::Dispatch { scenario, bids } => commands::dispatch(&scenario, bids, c),
        Command::Ce { scenario } => commands::equilibrium(&scenario, false, c),
        Command::Nash { scenario } => commands::equilibrium(&scenario, true, c),
        Command::Indices { scenario, nash } => commands::indices(&scenario, nash, c),
        Command::Braess(args) => commands::braess(&args, c),
        Command::Envelope { input } => commands::envelope(&input, c),
        Command::PoaExample(args) => commands::poa_example(&args, c),
        Command::Verify { scenario, equilibrium } => commands::verify(&scenario, &equilibrium, c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let output_path = cli.common.output.clone();
    match run(cli) {
        Ok(out) => {
            let written = match &output_path {
                Some(p) => write_atomic(p, &out.bytes),
                None => std::io::stdout().write_all(&out.bytes),
            };
            if let Err(e) = written {
                eprintln!("error: cannot write output: {e}");
                return ExitCode::from(2);
            }
            ExitCode::from(if out.ok { 0 } else { 1 })
        }
        Err(f) => {
            match &f {
                Failure::Input(m) => eprintln!("error: {m}"),
                Failure::Regime(m) => eprintln!("refused: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
