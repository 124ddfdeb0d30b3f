use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tallscore_cli::pipeline::resolve_output_dir;
use tallscore_cli::records::{read_records, write_atomic};
use tallscore_cli::reports::{self, Pairing};
use tallscore_cli::{run_experiments, ExperimentConfig, RunOptions};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "tallscore", version, about = "Score-based sampling of tall-data posteriors")]
struct Cli {
    /// Output root; overrides the environment and the config.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, env = "TALLSCORE_OUTPUT_ROOT", hide_env_values = true)]
    output_root: Option<PathBuf>,
    /// Replaces the config's seed list (base seed for `table1`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid points.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Recompute runs that already have records.
    #[arg(long, global = true)]
    overwrite: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a TOML config.
    Run { config: PathBuf },
    /// NFE and wall-time ratios against Langevin.
    Speedup {
        /// Defaults to `<output>/records.csv`.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "equal-steps")]
        pairing: Pairing,
    },
    /// Distance curves over n per noise level and method.
    Robustness {
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Runtime and accuracy sweep on the 10-dimensional Gaussian task.
    Table1 {
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let out = |cfg: Option<&Path>| resolve_output_dir(cli.output.as_deref(), cli.output_root.as_deref(), cfg);
    let options = |dir: PathBuf| RunOptions {
        output_dir: dir,
        jobs: cli.jobs,
        overwrite: cli.overwrite,
    };
    match &cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if let Some(s) = cli.seed {
                cfg.seeds = vec![s];
            }
            let dir = out(cfg.output_dir.as_deref());
            let summary = run_experiments(std::slice::from_ref(&cfg), &options(dir.clone()))?;
            println!(
                "{} records ({} reused, {} skipped pairs) in {}",
                summary.records.len(),
                summary.reused,
                summary.skipped.len(),
                dir.join("records.csv").display()
            );
        }
        Command::Speedup { records, pairing } => {
            let dir = out(None);
            let recs = load(records.as_deref(), &dir)?;
            let rep = reports::report_speedup(&recs, *pairing);
            write_atomic(&dir.join("speedup.csv"), &reports::to_csv(&rep.rows, reports::SPEEDUP_COLUMNS)?)?;
            println!("{:>4}  {:<12} {:>5}  {:>16}  {:>16}", "m", "method", "cells", "NFE ratio", "wall ratio");
            for r in &rep.rows {
                println!(
                    "{:>4}  {:<12} {:>5}  {:>7.3} ± {:<6.3}  {:>7.3} ± {:<6.3}",
                    r.m, r.method, r.cells, r.nfe_ratio_mean, r.nfe_ratio_std, r.wall_ratio_mean, r.wall_ratio_std
                );
            }
            if rep.missing > 0 {
                eprintln!("warning: {} runs had no matching Langevin cell", rep.missing);
            }
        }
        Command::Robustness { records } => {
            let dir = out(None);
            let recs = load(records.as_deref(), &dir)?;
            let (long, summary) = reports::report_robustness(&recs);
            write_atomic(&dir.join("robustness.csv"), &reports::to_csv(&long, reports::ROBUSTNESS_COLUMNS)?)?;
            write_atomic(
                &dir.join("robustness_summary.csv"),
                &reports::to_csv(&summary, reports::ROBUSTNESS_SUMMARY_COLUMNS)?,
            )?;
            for s in &summary {
                println!(
                    "{:<12} m={:<3} n={:<4} eps={:<6} T={:<5} sW = {:.3} ± {:.3} ({} failed)",
                    s.method, s.m, s.n, s.eps, s.steps, s.sw_mean, s.sw_std, s.failed
                );
            }
        }
        Command::Table1 { seeds, samples } => {
            let dir = out(None);
            let cfgs = reports::table1_configs(cli.seed.unwrap_or(0), *seeds, *samples);
            let summary = run_experiments(&cfgs, &options(dir.clone()))?;
            let rows = reports::report_table1(&summary.records);
            write_atomic(&dir.join("table1.csv"), &reports::to_csv(&rows, reports::TABLE1_COLUMNS)?)?;
            println!("{:<8} {:>5}  {:>16}  {:>9}  {:>10}", "method", "T", "sW", "diverged", "wall (s)");
            for r in &rows {
                println!(
                    "{:<8} {:>5}  {:>7.3} ± {:<6.3}  {:>9}  {:>10.3}",
                    r.method, r.steps, r.sw_mean, r.sw_std, r.diverged, r.wall_time_s
                );
            }
        }
    }
    Ok(())
}

fn load(path: Option<&Path>, dir: &Path) -> Result<Vec<tallscore_cli::RunRecord>> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| dir.join("records.csv"));
    read_records(&path).with_context(|| format!("loading records from {}", path.display()))
}
