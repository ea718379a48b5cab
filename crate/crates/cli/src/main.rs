//! `kl-erasure`: solve, simulate, verify and sweep finite-time bit erasure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, ProtocolKind, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "kl-erasure", version, about = "KL-optimal erasure of a two-state bit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Optimal protocol and cost: solve.json and solve.csv.
    Solve,
    /// Sampled paths under `--protocol`, one JSON object per line: paths.jsonl.
    Simulate,
    /// Run the identity suite; exit 1 naming any failed check: verify.json.
    Verify,
    /// Cost against tau_e / tau_r over `--ratios`: sweep.csv.
    Sweep,
    /// Work, heat and entropy ledger under `--protocol`: thermo.json and thermo.csv.
    ThermoReport,
}

/// Every flag overrides the matching key of `--config`.
#[derive(Args, Debug, Default)]
struct Flags {
    /// Flat TOML file with any of the keys below (tau_r, tau_e, k01, ...).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Reliability timescale 1/(k01 + k10) [default: 1].
    #[arg(long, global = true)]
    tau_r: Option<f64>,
    /// Erasure horizon; required by solve, simulate and thermo-report [verify default: tau_r].
    #[arg(long, global = true)]
    tau_e: Option<f64>,
    /// Passive rate 0 -> 1; give with --k10 [default: 1/(2 tau_r)].
    #[arg(long, global = true)]
    k01: Option<f64>,
    /// Passive rate 1 -> 0; give with --k01 [default: 1/(2 tau_r)].
    #[arg(long, global = true)]
    k10: Option<f64>,
    /// Initial probability of state 0 [default: equilibrium].
    #[arg(long, global = true)]
    p0: Option<f64>,
    /// Monte Carlo paths [default: 100000].
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// RNG seed [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Steps N of the coarse discrete grid; checks also use 2N [default: 12].
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Worker threads, 0 for all cores [default: 0].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory [default: .].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Temperature for reports in energy units; internal values are nats [default: 1].
    #[arg(long, global = true)]
    kt: Option<f64>,
    /// Thermal conductance for the finite-time bound in `sweep` [default: 1].
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Comma-separated tau_e / tau_r values for `sweep` [default: 0.01,0.1,0.5,1,2,10].
    #[arg(long, global = true, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Protocol for `simulate` and `thermo-report` [default: optimal].
    #[arg(long, global = true, value_enum)]
    protocol: Option<ProtocolKind>,
    /// Time points in solve.csv and thermo.csv, excluding t = 0 [default: 200].
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    /// Swap the marginal ratio in the discrete reversal (negative control).
    #[arg(long, global = true, hide = true)]
    corrupt_reversal: bool,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            tau_r: self.tau_r,
            tau_e: self.tau_e,
            k01: self.k01,
            k10: self.k10,
            p0: self.p0,
            samples: self.samples,
            seed: self.seed,
            steps: self.steps,
            threads: self.threads,
            out: self.out.clone(),
            kt: self.kt,
            sigma: self.sigma,
            ratios: self.ratios.clone(),
            protocol: self.protocol,
            grid_points: self.grid_points,
        }
    }
}

fn resolve(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(cli.flags.overrides());
    cfg.validate()?;
    match cli.command {
        Command::Sweep => {}
        // The identity suite runs at tau_e = tau_r unless told otherwise.
        Command::Verify if cfg.tau_e.is_none() => {
            cfg.tau_e = Some(kl_erasure::chain::reliability_timescale(&cfg.rates()?))
        }
        _ => {
            cfg.tau_e()?;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            eprintln!("run `kl-erasure --help` for usage");
            return ExitCode::from(2);
        }
    };
    if cfg.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Solve => commands::solve(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Verify => commands::verify(&cfg, cli.flags.corrupt_reversal),
        Command::Sweep => commands::sweep(&cfg),
        Command::ThermoReport => commands::thermo_report(&cfg),
    };
    match result {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Failed(names)) => {
            eprintln!("verification failed: {}", names.join(", "));
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
