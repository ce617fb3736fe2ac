use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use coexist_ppo::harness::{self, ConfigEntry, ExperimentConfig};

#[derive(Parser)]
#[command(name = "coexist-ppo", version, about = "Distributed PPO power control for coexisting primary/secondary networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed and write per-seed and aggregate CSVs.
    Run {
        /// ex1 (K_p=4, K_s=8), ex2 (K_p=8, K_s=4) or custom.
        #[arg(long)]
        experiment: Option<String>,
        /// coexist_dist, centralized_dist or centralized_full_csi.
        #[arg(long)]
        mode: Option<String>,
        /// Comma-separated list, e.g. 0,1,2.
        #[arg(long)]
        seeds: Option<String>,
        /// desk or paper.
        #[arg(long)]
        profile: Option<String>,
        /// key=value file; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overwrite results already in the output directory.
        #[arg(long)]
        force: bool,
        /// Seeds trained in parallel.
        #[arg(long)]
        jobs: Option<usize>,
        /// Extra key=value overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Means over the final fraction of iterations of each CSV in a run directory.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        window: f64,
    },
}

fn cli_entries(pairs: &[(&str, Option<String>)], set: &[String]) -> coexist_ppo::Result<Vec<ConfigEntry>> {
    let mut text = String::new();
    for (k, v) in pairs {
        if let Some(v) = v {
            text.push_str(&format!("{k}={v}\n"));
        }
    }
    let mut entries = harness::parse_config_text(&text, "<command line>")?;
    entries.extend(harness::parse_config_text(&set.join("\n"), "--set")?);
    Ok(entries)
}

fn run(cli: Cli) -> coexist_ppo::Result<()> {
    match cli.command {
        Command::Run {
            experiment,
            mode,
            seeds,
            profile,
            config,
            out,
            force,
            jobs,
            set,
        } => {
            let mut entries = match &config {
                Some(p) => harness::parse_config_file(p)?,
                None => Vec::new(),
            };
            entries.extend(cli_entries(
                &[
                    ("profile", profile),
                    ("experiment", experiment),
                    ("mode", mode),
                    ("seeds", seeds),
                    ("out", out.map(|p| p.display().to_string())),
                    ("force", force.then(|| "true".to_string())),
                    ("jobs", jobs.map(|j| j.to_string())),
                ],
                &set,
            )?);
            let cfg = ExperimentConfig::resolve(&entries)?;
            eprintln!(
                "mode={} K_p={} K_s={} L={} N={} T={} seeds={:?} -> {}",
                cfg.mode,
                cfg.env.k_p,
                cfg.env.k_s,
                cfg.hyper.iters,
                cfg.hyper.batch,
                cfg.hyper.episode_len,
                cfg.seeds,
                cfg.out_dir.display()
            );
            let start = Instant::now();
            let out = harness::run_experiment(&cfg)?;
            let summary = harness::summarize(&out.out_dir, 0.1)?;
            print!("{}", summary.to_csv());
            eprintln!("done in {:.1}s", start.elapsed().as_secs_f64());
            Ok(())
        }
        Command::Summarize { dir, window } => {
            let summary = harness::summarize(&dir, window)?;
            print!("{}", summary.to_csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
