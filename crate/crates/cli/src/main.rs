use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpnes_core::experiment::{
    self, aggregate_trajectories, output, run_accountant, run_attack, run_rate_fit, validation_report,
    ExperimentConfig, Setup, EXACT_INFERENCE_TOL, PRIVATE, TRANSPARENT,
};
use dpnes_core::Error;

/// Differentially private Nash-equilibrium seeking experiments.
#[derive(Debug, Parser)]
#[command(name = "dpnes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured seed and write the full report bundle.
    Run(Common),
    /// Write the per-iteration privacy budget and print the cumulative statement.
    Accountant(Common),
    /// Run the eavesdropper against the attack target with and without privacy.
    Attack(Common),
    /// Check the config, the schedules and the equilibrium without running.
    Validate(Common),
    /// Fit consensus and decision errors against the schedule ratio.
    RateFit(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

enum Failure {
    Error(Error),
    Invariant(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Invariant(_) | Error::NonFinite(_) => 3,
        Error::Io(_) => 1,
        _ => 2,
    }
}

fn load(c: &Common) -> Result<Setup, Error> {
    let mut cfg = ExperimentConfig::from_path(&c.config)?;
    if let Some(n) = c.seeds {
        cfg.run.seeds = n;
    }
    cfg.build()
}

fn say(c: &Common, text: &str) {
    if !c.quiet {
        print!("{text}");
        if !text.ends_with('\n') {
            println!();
        }
    }
}

fn ensure_dir(p: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(p).map_err(Error::from)
}

fn execute(cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Run(c) => {
            let setup = load(c)?;
            let bundle = experiment::run_experiment(&setup, &c.out)?;
            say(c, &bundle.report);
            if !bundle.violations.is_empty() {
                return Err(Failure::Invariant(bundle.violations));
            }
        }
        Command::Accountant(c) => {
            let setup = load(c)?;
            let acc = run_accountant(&setup)?;
            ensure_dir(&c.out)?;
            output::write_accountant(&c.out.join(output::ACCOUNTANT_CSV), &acc.ledger)?;
            say(c, &acc.statement());
        }
        Command::Attack(c) => {
            let setup = load(c)?;
            let att = run_attack(&setup)?;
            ensure_dir(&c.out)?;
            output::write_attack(
                &c.out.join(output::ATTACK_CSV),
                &[(PRIVATE, &att.private), (TRANSPARENT, &att.transparent)],
            )?;
            let (lo, hi) = att.window();
            say(
                c,
                &format!(
                    "median inference error over k in [{lo}, {hi}]: private {:.6e}, transparent {:.6e}",
                    att.private.median_error(lo, hi),
                    att.transparent.median_error(lo, hi)
                ),
            );
            let e = att.transparent.max_error_unprojected();
            if e > EXACT_INFERENCE_TOL {
                return Err(Failure::Invariant(vec![format!("no-privacy gradient inversion off by {e:.3e}")]));
            }
        }
        Command::Validate(c) => {
            let setup = load(c)?;
            say(c, &validation_report(&setup)?);
        }
        Command::RateFit(c) => {
            let setup = load(c)?;
            let runs = setup.run_seeker(setup.policy())?;
            let curve = aggregate_trajectories(PRIVATE, &runs, &setup.ne)?;
            let fits = run_rate_fit(&setup, &curve)?;
            for f in [&fits.consensus, &fits.distance] {
                say(
                    c,
                    &format!(
                        "{}: C = {:.6e}, residual {:.4}, ratio range [{:.4e}, {:.4e}] over {} points",
                        f.model.name(),
                        f.c,
                        f.residual,
                        f.min_ratio,
                        f.max_ratio,
                        f.points
                    ),
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Invariant(v)) => {
            for msg in v {
                eprintln!("invariant violated: {msg}");
            }
            ExitCode::from(3)
        }
    }
}
