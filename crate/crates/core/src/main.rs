use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use baryfair::barycenter::DEFAULT_ORACLE_CAP;
use baryfair::io::{
    parse_alphas, run_evaluate, run_fit, run_sweep, run_synth, run_transform, RunConfig,
};
use baryfair::postprocess::{Mode, Notion};
use baryfair::synth::Scenario;
use baryfair::Result;

/// Post-process model outputs toward distributional parity across groups.
#[derive(Parser)]
#[command(name = "baryfair", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a post-processor and save it as a model document.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "barycentric")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// plain, odds, or opportunity:<label>
        #[arg(long, default_value = "plain")]
        notion: Notion,
        /// Kernel bandwidth stored as the model default.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Apply a fitted model to every row of a CSV.
    Transform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Report unfairness, error and parity of processed outputs.
    Evaluate {
        /// Original outputs.
        #[arg(long)]
        input: PathBuf,
        /// Processed outputs, row-aligned with the input.
        #[arg(long)]
        processed: PathBuf,
        /// Report path; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        cap: OracleCap,
    },
    /// Evaluate a fitted model over a grid of alphas.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated, ascending.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
        alphas: String,
        #[arg(long)]
        h: Option<f64>,
        #[command(flatten)]
        cap: OracleCap,
    },
    /// Generate a synthetic dataset.
    Synth {
        /// figure1, multiclass or multilabel
        #[arg(long)]
        scenario: Scenario,
        /// Records per group.
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct OracleCap {
    /// Largest number of support tuples for which unfairness uses the exact barycenter.
    #[arg(long = "oracle-cap", default_value_t = DEFAULT_ORACLE_CAP)]
    oracle_cap: u128,
}

fn run(cli: Cli) -> Result<()> {
    let mut stderr = io::stderr();
    match cli.command {
        Command::Fit {
            input,
            model,
            mode,
            seed,
            notion,
            h,
        } => {
            let cfg = RunConfig {
                bandwidth: h,
                mode,
                seed,
                notion,
                ..RunConfig::default()
            };
            run_fit(&input, &model, &cfg, &mut stderr)?;
        }
        Command::Transform {
            input,
            model,
            output,
            alpha,
            h,
        } => run_transform(&input, &model, &output, alpha, h)?,
        Command::Evaluate {
            input,
            processed,
            output,
            cap,
        } => match output {
            Some(path) => {
                let mut w = BufWriter::new(File::create(path)?);
                run_evaluate(&input, &processed, cap.oracle_cap, &mut w)?;
                w.flush()?;
            }
            None => {
                run_evaluate(&input, &processed, cap.oracle_cap, &mut io::stdout().lock())?;
            }
        },
        Command::Sweep {
            input,
            model,
            output,
            alphas,
            h,
            cap,
        } => {
            let cfg = RunConfig {
                alphas: parse_alphas(&alphas)?,
                bandwidth: h,
                oracle_cap: cap.oracle_cap,
                ..RunConfig::default()
            };
            run_sweep(&input, &model, &output, &cfg)?;
        }
        Command::Synth {
            scenario,
            n,
            seed,
            output,
        } => {
            run_synth(scenario, n, seed, &output)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
