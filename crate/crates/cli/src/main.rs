//! `jumplab` — scenario runner for the jump-process lattice laboratory.
//!
//! Every subcommand runs one experiment described by a TOML scenario file
//! and writes deterministic CSV/JSON artifacts plus a pass/fail summary.
//! Exit codes: 0 all checks passed, 1 at least one check failed,
//! 2 configuration error.

mod config;
mod output;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::ScenarioConfig;
use output::OutDir;
use runner::Scenario;

#[derive(Parser)]
#[command(
    name = "jumplab",
    version,
    about = "Lattice laboratory for symmetric jump processes"
)]
struct Cli {
    /// Scenario configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the declared kernel bound constants by sampling.
    KernelVerify,
    /// Exit-functional comparability table for a variable-order kernel.
    Functionals,
    /// Assemble and export the lattice conductances and generator.
    ChainBuild,
    /// Monte Carlo exit probabilities against the exit-bound functional.
    ExitMc,
    /// Monte Carlo mean exit times and their scaling exponent.
    MeanExitMc,
    /// Two-estimator jump-identity check.
    LevyCheck,
    /// Heat kernel slices and semigroup invariants.
    HeatKernel,
    /// Resolvent energy identity and contraction checks.
    ResolventCheck,
    /// Nonlocal harmonic solve with maximum-principle and martingale checks.
    Harmonic,
    /// Smoothness-exponent fit for harmonic / heat-kernel / resolvent targets.
    Holder,
    /// Uniform-integrability columns for a kernel sequence.
    UicCheck,
    /// Weak-convergence probe against the test-function dictionary.
    WeakProbe,
    /// Semigroup and resolvent convergence tables for a kernel sequence.
    Converge,
}

impl Command {
    fn experiment(&self) -> &'static str {
        match self {
            Command::KernelVerify => "kernel-verify",
            Command::Functionals => "functionals",
            Command::ChainBuild => "chain-build",
            Command::ExitMc => "exit-mc",
            Command::MeanExitMc => "mean-exit-mc",
            Command::LevyCheck => "levy-check",
            Command::HeatKernel => "heat-kernel",
            Command::ResolventCheck => "resolvent-check",
            Command::Harmonic => "harmonic",
            Command::Holder => "holder",
            Command::UicCheck => "uic-check",
            Command::WeakProbe => "weak-probe",
            Command::Converge => "converge",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    #[cfg(feature = "parallel")]
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure {threads} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some() {
        eprintln!("note: built without the parallel feature; --threads is ignored");
    }

    let experiment = cli.command.experiment();
    let Some(config_path) = cli.config else {
        eprintln!("error: --config <scenario.toml> is required");
        return ExitCode::from(2);
    };
    let cfg = match ScenarioConfig::load(&config_path) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let config_dir = config_path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let out_root = cli
        .out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
        .join(experiment);
    let out = match OutDir::create(&out_root) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot create output directory: {e}");
            return ExitCode::from(2);
        }
    };

    let started = Instant::now();
    let scenario = Scenario {
        cfg: &cfg,
        config_dir: &config_dir,
        seed,
        out: &out,
    };
    let result = runner::run_experiment(experiment, &scenario);
    let wall = started.elapsed().as_secs_f64();
    let _ = out.write_metadata(wall);

    match result {
        Ok(true) => {
            println!("{experiment}: all checks passed ({:.2}s)", wall);
            ExitCode::SUCCESS
        }
        Ok(false) => {
            println!("{experiment}: at least one check FAILED ({:.2}s)", wall);
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let _ = out.write_error_summary(experiment, seed, &format!("{e}"));
            ExitCode::from(2)
        }
    }
}
