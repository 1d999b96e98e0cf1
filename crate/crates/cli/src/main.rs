use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cnnforge::harness::{
    exit_code, gradcheck, load_config, run_experiment, run_sweep, GradcheckOptions,
    GradcheckScale, DEFAULT_SMOOTHING_WINDOW, EXIT_OK, EXIT_VERIFICATION,
};
use cnnforge::mnist::{Dataset, Split};
use cnnforge::network::{canonical_config, evaluate, load_checkpoint, save_checkpoint, variant_config, Variant};
use cnnforge::optim::Hyperparams;
use cnnforge::Result;

#[derive(Parser)]
#[command(name = "cnnforge", version, about = "Train and compare small convolutional MNIST classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network from a JSON config and write its loss curve as CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mnist_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING_WINDOW)]
        window: usize,
        /// Check the data files against the official SHA-256 digests.
        #[arg(long)]
        verify_checksums: bool,
    },
    /// Train several layer-ordering variants with a shared seed and compare them.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "A,B,C,D")]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = Hyperparams::desk_scale().steps)]
        steps: usize,
        #[arg(long, default_value_t = Hyperparams::default().seed)]
        seed: u64,
        #[arg(long)]
        mnist_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING_WINDOW)]
        window: usize,
        #[arg(long)]
        verify_checksums: bool,
    },
    /// Report accuracy and mean quadratic cost of a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mnist_dir: PathBuf,
        #[arg(long)]
        verify_checksums: bool,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value = "reduced")]
        scale: GradcheckScale,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Print a built-in network config as JSON.
    Config {
        /// One of A, B, C, D; the canonical network when omitted.
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn load(dir: &Path, split: Split, verify: bool) -> Result<Dataset> {
    if verify {
        Dataset::load_verified(dir, split)
    } else {
        Dataset::load(dir, split)
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train { config, mnist_dir, out, checkpoint, window, verify_checksums } => {
            let config = load_config(&config)?;
            let data = load(&mnist_dir, Split::Train, verify_checksums)?;
            let run = run_experiment(&config, &data, &out, window)?;
            if let Some(last) = run.log.records().last() {
                println!("step {}: smoothed loss {:.6}", last.step, last.smoothed_loss);
            }
            if let Some(path) = checkpoint {
                save_checkpoint(&path, &run.network, &config)?;
                println!("checkpoint written to {}", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Sweep { variants, steps, seed, mnist_dir, out_dir, window, verify_checksums } => {
            let hyper = Hyperparams { steps, seed, ..Hyperparams::default() };
            let data = load(&mnist_dir, Split::Train, verify_checksums)?;
            let report = run_sweep(&variants, &hyper, &data, &out_dir, window)?;
            print!("{}", report.to_text());
            Ok(EXIT_OK)
        }
        Command::Eval { checkpoint, mnist_dir, verify_checksums } => {
            let (net, _) = load_checkpoint(&checkpoint)?;
            let data = load(&mnist_dir, Split::Test, verify_checksums)?;
            let e = evaluate(&net, &data)?;
            println!("accuracy {:.4}", e.accuracy);
            println!("cost {:.6}", e.cost);
            Ok(EXIT_OK)
        }
        Command::Gradcheck { scale, seed, corrupt_backward } => {
            let report = gradcheck(GradcheckOptions { scale, seed, corrupt_backward })?;
            println!("{report}");
            Ok(if report.passed() { EXIT_OK } else { EXIT_VERIFICATION })
        }
        Command::Config { variant, steps } => {
            let mut config = variant.map_or_else(canonical_config, variant_config);
            if let Some(steps) = steps {
                config.hyper.steps = steps;
            }
            // A closed pipe (e.g. `| head`) is not an error here.
            let _ = writeln!(std::io::stdout(), "{}", config.to_json());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
