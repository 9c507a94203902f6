use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use limper_cli::commands::{cmd_construct, cmd_spectrum, cmd_verify, parse_checks, VerifyOptions};
use limper_cli::CliError;

/// Staged construction of limit-periodic potentials with checkable certificates.
#[derive(Parser)]
#[command(name = "limper", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band spectrum of a periodic sampler.
    Spectrum {
        /// Sampler file: a JSON list of values, or a level sampler document.
        sampler: PathBuf,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-10, allow_negative_numbers = true)]
        tol: f64,
        /// Also write spectrum.csv and spectrum.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the staged construction and write ledger.json.
    Construct {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-check a ledger and write one report per check.
    Verify {
        ledger: PathBuf,
        /// Comma-separated subset of gordon, hausdorff, lyapunov, distance.
        #[arg(long)]
        checks: String,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, allow_negative_numbers = true)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 1e-10, allow_negative_numbers = true)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Spectrum { sampler, lambda, tol, out } => {
            cmd_spectrum(&sampler, lambda, tol, out.as_deref(), &mut stdout)
        }
        Command::Construct { config, out, seed } => cmd_construct(&config, out.as_deref(), seed, &mut stdout),
        Command::Verify {
            ledger,
            checks,
            alpha,
            lambda,
            tol,
            out,
        } => {
            let checks = parse_checks(&checks)?;
            let options = VerifyOptions { alpha, lambda, tol };
            cmd_verify(&ledger, &checks, &options, out.as_deref(), &mut stdout)
        }
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
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("limper: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
