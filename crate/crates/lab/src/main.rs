use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dpa_lab::artifacts::OutDir;
use dpa_lab::commands::{self, BaselineMethod};
use dpa_lab::{load_config, Lab, LabError, Result};

/// Directional preference alignment experiments on a synthetic environment.
#[derive(Parser)]
#[command(name = "dpa-lab", version)]
struct Cli {
    /// Worker threads; results do not depend on it. Defaults to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set alignment.iterations=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Rsf,
    Steerlm,
    Soup,
}

#[derive(Subcommand)]
enum Command {
    /// Generate prompt splits and annotated responses.
    GenData(Common),
    /// Fit the multi-objective reward model.
    TrainReward(Common),
    /// Train the SFT policy and the iteration-1 sampler.
    Bootstrap(Common),
    /// Run the alignment loop.
    Align(Common),
    /// Train a comparison method.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "rsf")]
        method: Method,
    },
    /// Evaluate a checkpoint across the preference arc.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output stem; defaults to the checkpoint file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Print the dominance verdict and hypervolumes of two sweep reports.
    Compare { a: PathBuf, b: PathBuf },
    /// Render sweep reports to an SVG.
    Plot {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "fronts")]
        name: String,
    },
}

fn staged(
    common: &Common,
    workers: usize,
    manifest: &str,
    f: impl FnOnce(&Lab, &mut OutDir) -> Result<String>,
) -> Result<String> {
    let config = load_config(&common.config, &common.overrides)?;
    let lab = Lab::new(config, workers)?;
    let mut out = OutDir::open(&common.out)?;
    let summary = f(&lab, &mut out)?;
    out.finish(manifest, Some(&lab.config))?;
    Ok(summary)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into())
}

fn run(cli: Cli) -> Result<String> {
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(LabError::Config("--workers must be at least 1".into()));
    }
    match cli.command {
        Command::GenData(c) => staged(&c, workers, "gen-data", commands::gen_data),
        Command::TrainReward(c) => staged(&c, workers, "train-reward", commands::train_reward),
        Command::Bootstrap(c) => staged(&c, workers, "bootstrap", commands::bootstrap),
        Command::Align(c) => staged(&c, workers, "align", commands::align),
        Command::Baseline { common, method } => {
            let method = match method {
                Method::Rsf => BaselineMethod::Rsf,
                Method::Steerlm => BaselineMethod::Steerlm,
                Method::Soup => BaselineMethod::Soup,
            };
            let name = format!("baseline-{}", method.name());
            staged(&common, workers, &name, |lab, out| {
                commands::baseline(lab, out, method)
            })
        }
        Command::Sweep {
            common,
            checkpoint,
            name,
        } => {
            let name = name.unwrap_or_else(|| stem(&checkpoint));
            staged(&common, workers, &format!("sweep-{name}"), |lab, out| {
                commands::sweep_checkpoint(lab, out, &checkpoint, &name)
            })
        }
        Command::Compare { a, b } => commands::compare(&a, &b),
        Command::Plot { reports, out, name } => {
            let mut dir = OutDir::open(&out)?;
            let summary = commands::plot(&mut dir, &reports, &name)?;
            dir.finish(&format!("plot-{name}"), None)?;
            Ok(summary)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
