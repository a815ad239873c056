use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use carol_kit::error::{Error, Result};
use carol_kit::harness::commands;
use carol_kit::harness::config::{ExperimentConfig, Method};

#[derive(Parser)]
#[command(
    name = "carol",
    version,
    about = "Context-aware transfer of RL source knowledge"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every source and fit its transition model.
    TrainSources(Common),
    /// Score the sources against a target probe and print the weight table.
    Similarity(Common),
    /// Run the configured methods over the seed list.
    Adapt(Common),
    /// Aggregate the runs in a run directory.
    Report {
        /// Run directory written by `adapt`.
        run_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    config: Option<PathBuf>,
    #[arg(long = "config")]
    config_flag: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Comma-separated seeds replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Restrict to one method (carol, carol_plus, pd, lfs, sk).
    #[arg(long)]
    method: Option<String>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = self
            .config_flag
            .as_ref()
            .or(self.config.as_ref())
            .ok_or_else(|| Error::config("config", "no config file given"))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(m) = &self.method {
            cfg.methods = vec![Method::parse(m)?];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Writes the command's output; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn run(cli: Cli) -> Result<String> {
    let mut out = String::new();
    match cli.command {
        Command::TrainSources(c) => {
            let cfg = c.load()?;
            let m = commands::train_sources(&cfg, &c.out)?;
            let _ = writeln!(
                out,
                "{} artifacts recorded in {}",
                m.artifacts.len(),
                c.out.display()
            );
        }
        Command::Similarity(c) => {
            let cfg = c.load()?;
            let (_, rows) = commands::similarity(&cfg, &c.out)?;
            let _ = writeln!(out, "{:<16} {:>16} {:>12}", "source", "score", "weight");
            for r in rows {
                let _ = writeln!(out, "{:<16} {:>16.6} {:>12.6}", r.source, r.score, r.weight);
            }
        }
        Command::Adapt(c) => {
            let cfg = c.load()?;
            for r in commands::adapt(&cfg, &c.out)? {
                let state = if r.reused { "up to date" } else { "done" };
                let _ = writeln!(out, "{} seed {}: {state}", r.method.name(), r.seed);
            }
        }
        Command::Report {
            run_dir,
            out: out_flag,
        } => {
            let dir = out_flag
                .or(run_dir)
                .ok_or_else(|| Error::config("run_dir", "no run directory given"))?;
            let report = commands::report(&dir)?;
            let _ = writeln!(
                out,
                "{:<24} {:>12} {:>12} {:>12} {:>6}",
                "entry", "median", "q1", "q3", "seeds"
            );
            for r in report.summary {
                let _ = writeln!(
                    out,
                    "{:<24} {:>12.4} {:>12.4} {:>12.4} {:>6}",
                    r.entry, r.median_final, r.q1_final, r.q3_final, r.seeds
                );
            }
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            emit(&text);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={message:?}", e.kind());
            ExitCode::FAILURE
        }
    }
}
