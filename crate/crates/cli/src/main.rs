use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use trqnet::quantum::BitString;
use trqnet_cli::config::{read_settings, Settings};
use trqnet_cli::{bench, eval, simulate, train, write_run, EvalSplit, RunConfig};

#[derive(Parser)]
#[command(name = "trqnet", version, about = "Train and inspect TR-QNet hybrid classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes model.trqn, report.csv and config.echo.
    Train(RunArgs),
    /// Evaluate a checkpoint on the train or test split of its run.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cross-validate a grid of qubit counts, ranks and class pairs.
    Bench(RunArgs),
    /// Print outcome probabilities of a circuit file.
    Simulate {
        file: PathBuf,
        /// Also run the exact statevector oracle and report the fidelity.
        #[arg(long)]
        oracle: bool,
        /// Comma-separated bit strings to report instead of all visible ones.
        #[arg(long)]
        outcomes: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

/// Config file plus flag overrides; flags win over the file.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    /// Class ids, e.g. `1,3` for Iris or `3,6` for digits.
    #[arg(long)]
    classes: Option<String>,
    #[arg(long)]
    qubits: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    #[arg(long)]
    tn_layers: Option<String>,
    #[arg(long)]
    circuit_layers: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    tn_learning_rate: Option<String>,
    #[arg(long)]
    folds: Option<String>,
    /// Alternate N quantum-only epochs with N classical-only epochs.
    #[arg(long)]
    alternate: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Any other setting, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => read_settings(p)?,
            None => Settings::new(),
        };
        let flags = [
            ("dataset", &self.dataset),
            ("data_dir", &self.data_dir),
            ("classes", &self.classes),
            ("qubits", &self.qubits),
            ("rank", &self.rank),
            ("tn_layers", &self.tn_layers),
            ("circuit_layers", &self.circuit_layers),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("tn_learning_rate", &self.tn_learning_rate),
            ("folds", &self.folds),
            ("alternate", &self.alternate),
            ("seed", &self.seed),
            ("out", &self.out),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                s.insert(k.into(), v.clone());
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            s.insert(k.trim().into(), v.trim().into());
        }
        Ok(s)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = RunConfig::from_settings(&args.settings()?)?;
            let outcome = train(&cfg)?;
            write_run(&cfg, &outcome)?;
            let last = outcome.report.epochs.last().context("no epochs recorded")?;
            println!(
                "epochs {} loss {:.6} train_acc {:.4} test_acc {:.4}",
                outcome.report.epochs.len(),
                last.loss,
                last.train_acc,
                outcome.test.accuracy
            );
            println!("wrote {}", cfg.out.display());
        }
        Command::Eval { checkpoint, split, run } => {
            let which = match split {
                SplitArg::Train => EvalSplit::Train,
                SplitArg::Test => EvalSplit::Test,
            };
            print!("{}", eval(&checkpoint, &run.settings()?, which)?.render());
        }
        Command::Bench(args) => {
            let grid = args.settings()?;
            let rows = bench(&grid, |line| eprintln!("{line}"))?;
            print!("{}", trqnet_cli::commands::bench_csv(&rows));
        }
        Command::Simulate { file, oracle, outcomes } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let listed = match outcomes {
                Some(o) => Some(
                    o.split(',')
                        .map(|b| b.trim().parse::<BitString>())
                        .collect::<trqnet::Result<Vec<_>>>()?,
                ),
                None => None,
            };
            if listed.as_ref().is_some_and(Vec::is_empty) {
                bail!("--outcomes is empty");
            }
            print!("{}", simulate(&text, oracle, listed.as_deref())?);
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
