use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use brcgan_cli::bench::{run_bench, DEFAULT_TIMED_STEPS};
use brcgan_cli::config::{CliError, ExperimentConfig};
use brcgan_cli::harness::{eval_checkpoint, metrics_row, run_experiment, summarize_dir, METRICS_HEADER};

#[derive(Parser)]
#[command(
    name = "brcgan",
    version,
    about = "Bilevel GAN training with best-response-constraint hypergradients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment and write CSV artifacts.
    Run {
        /// TOML experiment configuration.
        config: PathBuf,
        /// Replace the config's seed list (repeat the flag per seed).
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Output directory; overrides BRCGAN_OUT_DIR and the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Override the outer-iteration budget.
        #[arg(long)]
        iters: Option<u64>,
    },
    /// Time the hypergradient methods at the config's model size.
    Bench {
        /// TOML experiment configuration.
        config: PathBuf,
        /// Output directory; overrides BRCGAN_OUT_DIR and the config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Timed steps per method.
        #[arg(long, default_value_t = DEFAULT_TIMED_STEPS)]
        steps: usize,
    },
    /// Score a saved generator checkpoint against a dataset.
    Eval {
        /// Generator checkpoint (`checkpoint_*.gen.txt`).
        checkpoint: PathBuf,
        /// One of: ring5, ring8, cube27.
        dataset: String,
        /// Evaluation stream seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Samples drawn from each side.
        #[arg(long, default_value_t = 512)]
        samples: usize,
        /// Activation leak the checkpoint was trained with.
        #[arg(long, default_value_t = 0.2)]
        leak: f64,
    },
    /// Rebuild summary.csv from the metrics CSVs in a directory.
    Summarize {
        /// Directory holding `metrics_*.csv` files.
        dir: PathBuf,
    },
}

/// Output directory precedence: `--out-dir` flag, then the `BRCGAN_OUT_DIR`
/// environment variable, then the config's `out_dir`.
fn out_dir_for(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Ok(dir) = std::env::var("BRCGAN_OUT_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from(&cfg.experiment.out_dir)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            seeds,
            out_dir,
            iters,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !seeds.is_empty() {
                cfg.experiment.seeds = seeds;
            }
            if let Some(n) = iters {
                cfg.experiment.total_iters = n;
                if cfg.experiment.eval_every > n {
                    cfg.experiment.eval_every = n;
                }
            }
            cfg.validate()?;
            let dir = out_dir_for(out_dir, &cfg);
            run_experiment(&cfg, &dir)?;
            println!("artifacts in {}", dir.display());
            Ok(())
        }
        Command::Bench {
            config,
            out_dir,
            steps,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            if steps == 0 {
                return Err(CliError::Config("--steps must be positive".into()));
            }
            let dir = out_dir_for(out_dir, &cfg);
            run_bench(&cfg, &dir, steps)?;
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            seed,
            samples,
            leak,
        } => {
            if samples < 2 {
                return Err(CliError::Config("--samples must be at least 2".into()));
            }
            let report = eval_checkpoint(&checkpoint, &dataset, seed, samples, leak)?;
            println!("{METRICS_HEADER}");
            println!("{}", metrics_row(&format!("eval-{dataset}"), 0, &report));
            Ok(())
        }
        Command::Summarize { dir } => {
            let rows = summarize_dir(&dir)?;
            println!(
                "{:<40} {:>6} {:>12} {:>12} {:>8}",
                "group", "runs", "fid", "js_bits", "modes"
            );
            for r in &rows {
                println!(
                    "{:<40} {:>6} {:>12.4} {:>12.4} {:>8.2}",
                    r.group, r.n_runs, r.fid_mean, r.js_mean, r.modes_mean
                );
            }
            println!("wrote {}", dir.join("summary.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
