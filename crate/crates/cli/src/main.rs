use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robgan_cli::verify::VerifyOptions;
use robgan_cli::{cmd_eval, cmd_sweep, cmd_train, cmd_verify, load_config, load_sweep, out_dir, CliError};
use robgan_core::ring::RingSpec;

/// Robust GAN objectives: certificates, training runs and sweeps.
/// Outputs go to $ROBGAN_OUT (default ./robgan_out).
#[derive(Parser)]
#[command(name = "robgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid certificates for the theory; exits 1 if any fails.
    Verify {
        #[arg(long, default_value_t = 0.02)]
        grid_step: f64,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// One of theorem2, theorem1, lemma1, lemma2, decomposition.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random cases per theorem.
        #[arg(long, default_value_t = 50)]
        cases: usize,
    },
    /// One training run from a JSON config or a preset name.
    Train { config: String },
    /// A grid of runs; writes runs.csv and aggregate.csv.
    Sweep {
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Use the 50k/100k/180k step budgets.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Scores a samples CSV (columns x,y) against the default ring.
    Eval { samples: PathBuf },
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Verify {
            grid_step,
            k,
            only,
            seed,
            cases,
        } => {
            let opts = VerifyOptions {
                grid_step,
                k,
                only,
                seed,
                cases,
            };
            let ok = cmd_verify(&opts, &mut std::io::stdout().lock())?;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Train { config } => {
            let config = load_config(&config)?;
            let metrics = cmd_train(&config, &out_dir())?;
            println!("{}", serde_json::to_string(&metrics)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            spec,
            parallel,
            paper_scale,
        } => {
            let spec = load_sweep(&spec)?;
            let (_, agg) = cmd_sweep(&spec, parallel, paper_scale, &out_dir())?;
            for row in agg {
                println!("{}", serde_json::to_string(&row)?);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { samples } => {
            let score = cmd_eval(&samples, &RingSpec::default())?;
            println!("{}", serde_json::to_string(&score)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
