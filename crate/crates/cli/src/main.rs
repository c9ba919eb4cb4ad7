use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mrdg_cli::{cmd_ablate, cmd_eval, cmd_gradcheck, cmd_plot, cmd_train, Overrides, VARIANTS};

#[derive(Parser)]
#[command(name = "mrdg", version, about = "Retrieval-augmented ad hoc teamwork on iterated matrix games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed` (and the ablation seed list).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `$MRDG_OUTPUT_ROOT/<config>-seed<seed>` or `run.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.episodes`.
    #[arg(long)]
    episodes: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            episodes: self.episodes,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one run into a new run directory.
    Train(RunArgs),
    /// Evaluate a checkpoint against scripted partners.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Partner policies, e.g. `always:0`, `tit-for-tat`, `random:0.3,0.7`.
        #[arg(long = "partner", required = true)]
        partners: Vec<String>,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV file for the report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full method and the four single-module ablations.
    Ablate(RunArgs),
    /// Finite-difference check of every differentiable path.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Render evaluation-return curves from metrics files to SVG.
    Plot {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "evaluation return")]
        title: String,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Train(a) => {
            let dir = cmd_train(&a.config, &a.overrides())?;
            println!("{}", dir.display());
        }
        Command::Eval {
            checkpoint,
            partners,
            episodes,
            seed,
            out,
        } => {
            print!("{}", cmd_eval(&checkpoint, &partners, episodes, seed, out.as_deref())?);
        }
        Command::Ablate(a) => {
            let (dir, res) = cmd_ablate(&a.config, &a.overrides())?;
            for (i, (name, _)) in VARIANTS.iter().enumerate() {
                let (m, s) = res.mean_std(i);
                println!("{name:<10} {m:.3} ± {s:.3}");
            }
            println!("{}", dir.display());
        }
        Command::Gradcheck { seed, trials } => {
            let (text, reports) = cmd_gradcheck(seed, trials)?;
            print!("{text}");
            return Ok(reports.iter().all(|r| r.passed()));
        }
        Command::Plot { metrics, out, title } => cmd_plot(&metrics, &out, &title)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
