mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::Value;

use commands::{
    ClusterExpand, Decompose, EffMinimize, EnsembleGapArgs, Experiment, GammaSweep, KpCheck, McRun,
    PhaseDiagram, SpontaneousMag, ThetaScanArgs,
};
use error::CliError;
use report::{emit_manifest, write_outputs, Manifest, GIT_DESCRIBE};

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("KAC_ISING_GIT_DESCRIBE"), ")");

/// Layered Kac-Ising experiments: phase diagram, cluster expansion,
/// effective hamiltonian and Monte Carlo.
#[derive(Debug, Parser)]
#[command(name = "kac-ising", version = VERSION)]
struct Cli {
    /// TOML file with parameters; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Manifest file; standard error when absent.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean-field free energy and its convex envelope on a magnetization grid.
    PhaseDiagram(PhaseDiagram),
    /// Spontaneous magnetization for a list of couplings.
    SpontaneousMag(SpontaneousMag),
    /// Cluster coefficients of the ring partition function.
    ClusterExpand(ClusterExpand),
    /// Kotecký-Preiss condition for the polymer gas.
    KpCheck(KpCheck),
    /// Gradient-squared decomposition of a monomial.
    Decompose(Decompose),
    /// Minimizers of the effective hamiltonian.
    EffMinimize(EffMinimize),
    /// Canonical versus grand-canonical free energy of a block.
    EnsembleGap(EnsembleGapArgs),
    /// Grid scan of the θ function.
    ThetaScan(ThetaScanArgs),
    /// Metropolis simulation of the two-dimensional model.
    McRun(McRun),
    /// Monte Carlo magnetization against γ at a fixed lattice side in ranges.
    GammaSweep(GammaSweep),
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn execute<E: Experiment>(flags: &E, cli: &Cli) -> i32 {
    let started_at_unix = unix_now();
    let clock = Instant::now();
    let mut manifest = Manifest {
        tool: "kac-ising",
        version: env!("CARGO_PKG_VERSION"),
        git: GIT_DESCRIBE,
        subcommand: E::NAME.to_string(),
        status: "ok",
        exit_code: 0,
        error: None,
        config_file: cli.config.as_ref().map(|p| p.display().to_string()),
        out: cli.out.as_ref().map(|p| p.display().to_string()),
        params: report::to_value(flags),
        outputs: Vec::new(),
        checks: Default::default(),
        results: Value::Null,
        started_at_unix,
        wall_time_s: 0.0,
    };
    let outcome = config::resolve(flags, cli.config.as_deref()).and_then(|mut params| {
        params.fill_defaults();
        manifest.params = report::to_value(&params);
        let report = params.run()?;
        manifest.outputs = write_outputs(&report, cli.out.as_deref())?;
        manifest.checks = report.checks;
        manifest.results = report.results;
        Ok(())
    });
    if let Err(e) = &outcome {
        eprintln!("kac-ising {}: {e}", E::NAME);
        manifest.status = e.status();
        manifest.exit_code = e.exit_code();
        manifest.error = Some(e.to_string());
    }
    manifest.wall_time_s = clock.elapsed().as_secs_f64();
    if let Err(e) = emit_manifest(&manifest, cli.manifest.as_deref()) {
        eprintln!("kac-ising: cannot write manifest: {e}");
        if manifest.exit_code == 0 {
            return CliError::exit_code(&e);
        }
    }
    manifest.exit_code
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let code = match &cli.command {
        Command::PhaseDiagram(a) => execute(a, &cli),
        Command::SpontaneousMag(a) => execute(a, &cli),
        Command::ClusterExpand(a) => execute(a, &cli),
        Command::KpCheck(a) => execute(a, &cli),
        Command::Decompose(a) => execute(a, &cli),
        Command::EffMinimize(a) => execute(a, &cli),
        Command::EnsembleGap(a) => execute(a, &cli),
        Command::ThetaScan(a) => execute(a, &cli),
        Command::McRun(a) => execute(a, &cli),
        Command::GammaSweep(a) => execute(a, &cli),
    };
    ExitCode::from(code as u8)
}
