use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use smoothlio::pipeline::run::{format_metrics, format_sweep};
use smoothlio::pipeline::{
    evaluate_ate, load_dataset, load_trajectory, run, simulate_dataset, sweep_eta, write_dataset, write_outputs,
    Config, Dataset, ETA_MULTIPLIERS,
};

#[derive(Parser)]
#[command(name = "smoothlio", version, about = "LiDAR-inertial odometry with intra-scan backward smoothing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset directory.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run odometry over a dataset and write trajectory and metrics.
    Run {
        /// Dataset directory; simulated in memory from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare an estimated trajectory against ground truth.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        groundtruth: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Run the dataset across threshold multipliers and print a table.
    SweepEta {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where datasets, trajectories and metrics are written.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    smoothing: Option<Switch>,
    /// Override any config key, e.g. `--set eta_multiplier=2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').with_context(|| format!("`{kv}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.sim.sensor.seed = seed;
        }
        if let Some(s) = self.smoothing {
            cfg.filter.smoothing = matches!(s, Switch::On);
        }
        Ok(cfg)
    }

    fn output_dir(&self) -> Result<&Path> {
        self.output_dir.as_deref().context("--output-dir is required")
    }
}

fn dataset(path: Option<&Path>, cfg: &Config) -> Result<Dataset> {
    Ok(match path {
        Some(p) => load_dataset(p).with_context(|| format!("loading {}", p.display()))?,
        None => simulate_dataset(&cfg.sim)?,
    })
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common } => {
            let cfg = common.config()?;
            let dir = common.output_dir()?;
            let ds = simulate_dataset(&cfg.sim)?;
            write_dataset(&ds, dir)?;
            println!("wrote {} frames and {} IMU samples to {}", ds.frame_count(), ds.imu.len(), dir.display());
        }
        Command::Run { dataset: path, common } => {
            let cfg = common.config()?;
            let dir = common.output_dir()?;
            let ds = dataset(path.as_deref(), &cfg)?;
            let out = run(&ds, &cfg)?;
            write_outputs(&out, dir)?;
            std::fs::write(dir.join("config.txt"), cfg.to_text())?;
            print!("{}", format_metrics(&out.metrics));
        }
        Command::Eval { estimate, groundtruth, output_dir } => {
            let est = load_trajectory(&estimate)?;
            let gt = load_trajectory(&groundtruth)?;
            let ate = evaluate_ate(&est, &gt)?;
            let text = format!(
                "pairs            {}\nate_rmse_m       {:.6}\nend_to_end_m     {:.6}\n",
                ate.pairs, ate.rmse, ate.end_to_end
            );
            if let Some(dir) = output_dir {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("eval.txt"), &text)?;
            }
            print!("{text}");
        }
        Command::SweepEta { dataset: path, common } => {
            let cfg = common.config()?;
            let ds = dataset(path.as_deref(), &cfg)?;
            if ds.groundtruth.is_none() {
                bail!("sweep-eta needs a dataset with ground truth");
            }
            let rows = sweep_eta(&ds, &cfg, &ETA_MULTIPLIERS)?;
            let table = format_sweep(&rows);
            if let Some(dir) = &common.output_dir {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("sweep.txt"), &table)?;
            }
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
