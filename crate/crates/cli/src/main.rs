use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use lcm_cli::commands;
use lcm_cli::config::{ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "lcm", version, about = "Label confusion training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated strategies: one-hot, ls, lcm.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    splits: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 = one per core.
    #[arg(long)]
    jobs: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            seed: self.seed,
            alpha: self.alpha,
            epsilon: self.epsilon,
            strategy: self.strategy.clone(),
            noise_rate: self.noise_rate,
            splits: self.splits,
            out: self.out.clone(),
            jobs: self.jobs,
        })?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic confused corpus and its group map.
    GenData(ConfigArgs),
    /// Flip labels within their groups.
    InjectNoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train each strategy once and save checkpoints.
    Train(ConfigArgs),
    /// Compare strategies over repeated random splits.
    EvalSplits(ConfigArgs),
    /// Write label-representation similarities from a full checkpoint.
    ExportLabelsim {
        #[arg(long)]
        checkpoint: PathBuf,
        /// meta.json written by `train`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label a corpus with a predictor checkpoint.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(args) => {
            for p in commands::gen_data(&args.load()?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::InjectNoise { input, groups, rate, seed, output } => {
            for p in commands::inject_noise(&input, &groups, rate, seed, &output)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train(args) => {
            for p in commands::train(&args.load()?)? {
                println!("wrote {}", p.display());
            }
        }
        Command::EvalSplits(args) => {
            let cfg = args.load()?;
            let outcome = commands::eval_splits(&cfg)?;
            for r in &outcome.reports {
                let p = r.comparison.as_ref().map(|c| format!("  p={:.4}", c.outcome.p_value())).unwrap_or_default();
                println!("{:<24} {:.4} +/- {:.4}{p}", r.strategy, r.mean, r.std);
            }
            println!("results in {}", cfg.out.display());
        }
        Command::ExportLabelsim { checkpoint, labels, out } => {
            println!("wrote {}", commands::export_labelsim(&checkpoint, &labels, &out)?.display());
        }
        Command::Predict { model, meta, vocab, input, out } => {
            let acc = commands::predict(&model, &meta, vocab.as_deref(), &input, &out)?;
            println!("accuracy {acc:.4}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
