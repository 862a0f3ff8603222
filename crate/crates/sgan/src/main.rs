use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use sgan::cli::{runner, sweep, RunConfig};
use sgan::ensemble::RunMode;

#[derive(Parser)]
#[command(name = "sgan", about = "Ensemble-supervised GAN training on 2-D toy distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; defaults apply for every omitted key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the training mode (full, simplified, paired_baseline, single_pair).
    #[arg(long)]
    mode: Option<String>,
    /// Force strictly sequential execution.
    #[arg(long)]
    deterministic: bool,
}

impl ConfigArgs {
    fn load(&self) -> sgan::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.run.master_seed = seed;
        }
        if let Some(mode) = &self.mode {
            config.run.mode = parse_mode(mode)?;
        }
        if self.deterministic {
            config.run.parallel = false;
        }
        config.resolve()?;
        Ok(config)
    }
}

fn parse_mode(s: &str) -> sgan::Result<RunMode> {
    match s {
        "full" => Ok(RunMode::Full),
        "simplified" => Ok(RunMode::Simplified),
        "paired_baseline" => Ok(RunMode::PairedBaseline),
        "single_pair" => Ok(RunMode::SinglePair),
        other => Err(sgan::SganError::Config(format!(
            "unknown mode '{other}' (expected full, simplified, paired_baseline or single_pair)"
        ))),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble and write the run's artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Resume a checkpointed run.
    Resume {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep the ensemble size and write the uncovered-mode curve.
    SweepN {
        #[command(flatten)]
        config: ConfigArgs,
        /// Ensemble sizes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "1,2,5,10")]
        n: Vec<usize>,
        /// Number of independent seeds per N.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Use the analytic stub with this per-pair miss probability
        /// instead of training.
        #[arg(long)]
        stub_p: Option<f64>,
        /// Output CSV path.
        #[arg(long, default_value = "curve.csv")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and print its metric records as JSON lines.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write discriminator level-set grids from a checkpoint.
    EmitGrid {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> sgan::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let config = config.load()?;
            let artifacts = runner::run(&config, &out)?;
            println!(
                "completed {} iterations, artifacts in {}",
                artifacts.ensemble.iteration,
                out.display()
            );
        }
        Command::Resume {
            config,
            checkpoint,
            out,
        } => {
            let config = config.load()?;
            let artifacts = runner::resume(&config, &out, &checkpoint)?;
            println!(
                "resumed to iteration {}, artifacts in {}",
                artifacts.ensemble.iteration,
                out.display()
            );
        }
        Command::SweepN {
            config,
            n,
            seeds,
            stub_p,
            out,
        } => {
            let config = config.load()?;
            let seed_list: Vec<u64> = (0..seeds as u64)
                .map(|i| sgan::cli::derive_seed(config.run.master_seed, sgan::cli::SeedRole::Sweep, i))
                .collect();
            let rows = match stub_p {
                Some(p) => sweep::stub_sweep(p, config.dataset.m.max(1), &n, &seed_list),
                None => sweep::trained_sweep(&config, &n, &seed_list),
            };
            sweep::write_curve_csv(&rows, &out)?;
            for r in &rows {
                println!(
                    "n={} uncovered={:.4} stderr={:.4} failed={}",
                    r.n, r.mean, r.stderr, r.failed_seeds
                );
            }
        }
        Command::Eval { config, checkpoint } => {
            let config = config.load()?;
            let resolved = config.resolve()?;
            let ensemble = sgan::cli::checkpoint::load(&checkpoint, &resolved, config.config_hash())?;
            for record in runner::evaluate(&ensemble, &config, None)? {
                println!(
                    "{}",
                    serde_json::to_string(&record)
                        .map_err(|e| sgan::SganError::Config(e.to_string()))?
                );
            }
        }
        Command::EmitGrid {
            config,
            checkpoint,
            out,
        } => {
            let config = config.load()?;
            let resolved = config.resolve()?;
            let ensemble = sgan::cli::checkpoint::load(&checkpoint, &resolved, config.config_hash())?;
            std::fs::create_dir_all(out.join("grids"))?;
            runner::emit_grids(&ensemble, &config, &out)?;
            println!("grids written to {}", out.join("grids").display());
        }
    }
    Ok(())
}
