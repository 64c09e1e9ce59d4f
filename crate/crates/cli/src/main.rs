use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use platoon_cli::commands::{self, Outcome};
use platoon_cli::scenario::Scenario;
use platoon_cli::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "platoon", version, about = "Gain tuning, MANSD certification and simulation of CACC platoons under DoS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Export the (kp, kd) locus meeting the performance constraint as CSV.
    GainLocus {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the maximum allowable number of successive drops for fixed gains.
    Mansd {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        kp: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        kd: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search the locus for the gains with the largest certified MANSD.
    Tune {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        locus_out: Option<PathBuf>,
        /// Worker thread cap.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Simulate the platoon and write trace, event and metrics files.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        kp: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        kd: Option<f64>,
        /// Overrides the scenario's attack seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace CSV; `<stem>_events.csv` and `<stem>_metrics.json` go alongside.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check a certificate from a `mansd` or `tune` report.
    Verify {
        /// JSON report holding a `certificate` object.
        certificate: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        kp: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        kd: Option<f64>,
        /// Check the certificate against this Delta instead of its own.
        #[arg(long)]
        mansd: Option<u32>,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::GainLocus { scenario, out } => commands::gain_locus(&Scenario::load(&scenario)?, out.as_deref()),
        Command::Mansd { scenario, kp, kd, out } => commands::mansd(&Scenario::load(&scenario)?, kp, kd, out.as_deref()),
        Command::Tune { scenario, out, locus_out, jobs } => {
            commands::tune_cmd(&Scenario::load(&scenario)?, jobs, out.as_deref(), locus_out.as_deref())
        }
        Command::Simulate { scenario, kp, kd, seed, out } => {
            commands::simulate_cmd(&Scenario::load(&scenario)?, kp, kd, seed, &out)
        }
        Command::Verify { certificate, scenario, kp, kd, mansd } => {
            commands::verify_cmd(&Scenario::load(&scenario)?, &certificate, kp, kd, mansd)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::INPUT } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(o) => {
            let _ = std::io::stdout().write_all(o.stdout.as_bytes());
            let _ = std::io::stderr().write_all(o.stderr.as_bytes());
            ExitCode::from(o.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
