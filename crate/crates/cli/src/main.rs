use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdia_cli::{run, ExperimentConfig};
use fdia_core::{ErrorKind, Result};

#[derive(Parser, Debug)]
#[command(name = "fdia", version, about = "False data injection detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,

    /// Seed for every stochastic stage
    #[arg(long)]
    seed: Option<u64>,

    /// Run directory, replacing the one named in the config
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.output.clone_from(out);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the measurement trace with the configured attack
    Simulate(Common),
    /// Train the window classifier on a labeled dataset
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV (defaults to the run's dataset.csv)
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Override the number of training epochs
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the passive, active and fused detectors on the run's trace
    Detect {
        #[command(flatten)]
        common: Common,
        /// Skip the classifier; the fused verdict equals the passive one
        #[arg(long)]
        passive_only: bool,
        /// Checkpoint to load (defaults to the run's checkpoint.json)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Merge a finished run's metrics into one comparison table
    Report {
        /// Configuration naming the run directory
        #[arg(long, required_unless_present = "run")]
        config: Option<PathBuf>,
        /// Run directory
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let cfg = common.load()?;
            let s = run::simulate(&cfg)?;
            println!(
                "simulated {} ticks ({} attacked) into {}",
                s.samples,
                s.attacked_ticks,
                cfg.output.display()
            );
        }
        Command::Train {
            common,
            dataset,
            epochs,
        } => {
            let mut cfg = common.load()?;
            if let Some(e) = epochs {
                cfg.network.train.epochs = e;
            }
            let m = run::train(&cfg, dataset.as_deref())?;
            println!(
                "trained on {} windows; test accuracy {:.4} on {} windows",
                m.train_windows, m.test.accuracy, m.test_windows
            );
        }
        Command::Detect {
            common,
            passive_only,
            checkpoint,
        } => {
            let cfg = common.load()?;
            let m = run::detect(&cfg, passive_only, checkpoint.as_deref())?;
            for (name, r) in &m.detectors {
                let latency = r.latency_ticks.map_or_else(|| "-".to_owned(), |l| l.to_string());
                println!(
                    "{name:<14} recall {:.4}  precision {:.4}  latency {latency}",
                    r.recall, r.precision
                );
            }
            for (name, why) in &m.failures {
                eprintln!("warning: {name}: {why}");
            }
        }
        Command::Report { config, run: dir } => {
            let dir = match (dir, config) {
                (Some(d), _) => d,
                (None, Some(c)) => run::output_dir(&c)?,
                (None, None) => unreachable!("clap requires one of --config or --run"),
            };
            print!("{}", run::report(&dir)?.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            })
        }
    }
}
