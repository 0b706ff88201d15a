mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;

use config::PipelineConfig;
use stages::{Pipeline, Stage};

/// Rigorous Ulam approximation of physical measures, run as a resumable pipeline.
#[derive(Parser, Debug)]
#[command(name = "ulamcert", version)]
struct Args {
    /// Stage to run; `all` (the default) runs every stage that is not up to date.
    #[arg(value_name = "STAGE")]
    command: Option<String>,
    /// Config file, or the name of a bundled config: doubling, desk, full.
    #[arg(long)]
    config: PathBuf,
    /// Same as the positional stage.
    #[arg(long)]
    stage: Option<String>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recompute stages even when their artifacts are up to date.
    #[arg(long)]
    force: bool,
}

fn parse_stage(s: &str) -> Result<Option<Stage>> {
    if s == "all" {
        return Ok(None);
    }
    match stages::ORDER.iter().find(|st| st.name() == s) {
        Some(st) => Ok(Some(*st)),
        None => {
            let names: Vec<&str> = stages::ORDER.iter().map(|s| s.name()).collect();
            bail!("unknown stage {s:?}; expected one of {} or all", names.join(", "))
        }
    }
}

fn run(args: Args) -> Result<()> {
    let stage = match (&args.command, &args.stage) {
        (Some(a), Some(b)) if a != b => bail!("stage given twice: {a} and {b}"),
        (Some(s), _) | (None, Some(s)) => parse_stage(s)?,
        (None, None) => None,
    };
    let (cfg, _) = PipelineConfig::load(&args.config)?;
    let threads = args.threads.unwrap_or(cfg.threads).max(1);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    let dir = match args.out.clone().or_else(|| cfg.output.clone()) {
        Some(d) => d,
        None => bail!("no output directory: pass --out or set `output` in the config"),
    };
    let mut p = Pipeline::new(cfg, dir, args.force, threads, Box::new(std::io::stdout()))?;
    match stage {
        None => p.run_all(),
        Some(s) => p.run(s).map(|_| ()),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
