//! Command-line front end: reads a JSON problem spec, runs one analysis and
//! writes CSV/JSON outputs plus a manifest into the output directory.

pub mod commands;
pub mod manifest;
pub mod plugin;
pub mod spec;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use commands::{Context, EXIT_ERROR, EXIT_NO_BRANCHES};
use manifest::{spec_hash, unix_now, CommandRecord, OutputDir, RunManifest};
use spec::ProblemSpec;

#[derive(Debug, Parser)]
#[command(name = "pitchfork", version, about = "Pitchfork bifurcations of invariant manifolds")]
pub struct Cli {
    /// Problem spec (JSON).
    #[arg(long, global = true)]
    pub spec: Option<PathBuf>,
    /// Output directory; overrides the spec's `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for sampled start points.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Decide the bifurcation hypotheses at each parameter value.
    Check,
    /// Compute the two branches at each parameter value.
    Solve,
    /// Iterate the map from seeded and explicit start points.
    Simulate,
    /// Bifurcation diagram data over the parameter list.
    Scan,
    /// Tabulate the comparison bounds for the variational equation.
    Gronwall,
    /// Continuous-time checks, then branches of the time-t map.
    FlowSolve,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Scan => "scan",
            Command::Gronwall => "gronwall",
            Command::FlowSolve => "flow-solve",
        }
    }
}

fn exit_code_for(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<pitchfork::Error>() {
        Some(pitchfork::Error::NoBifurcation { .. })
        | Some(pitchfork::Error::NotContracting { .. })
        | Some(pitchfork::Error::BranchCollapse { .. }) => EXIT_NO_BRANCHES,
        _ => EXIT_ERROR,
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let spec_path = cli
        .spec
        .as_ref()
        .ok_or_else(|| anyhow!("--spec <file> is required"))?;
    let (spec, text) = ProblemSpec::load(spec_path)?;
    if let Some(n) = cli.threads {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let root = cli
        .out
        .clone()
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let base = spec_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let hash = spec_hash(&text);
    let mut ctx = Context {
        spec,
        base,
        seed: cli.seed,
        out: OutputDir::create(&root)?,
    };
    let started = unix_now();
    let code = match cli.command {
        Command::Check => commands::check(&mut ctx),
        Command::Solve => commands::solve(&mut ctx),
        Command::Simulate => commands::run_simulate(&mut ctx),
        Command::Scan => commands::scan(&mut ctx),
        Command::Gronwall => commands::gronwall(&mut ctx),
        Command::FlowSolve => commands::flow_solve(&mut ctx),
    }?;
    commands::flush();
    let mut manifest = RunManifest::open(&root, &hash);
    manifest.record(
        cli.command.as_str(),
        CommandRecord {
            started_unix: started,
            finished_unix: unix_now(),
            exit_code: code,
            outputs: ctx.out.written().to_vec(),
        },
    );
    manifest.save(&mut ctx.out)?;
    Ok(code)
}

/// Runs the command and maps the outcome to the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
    }
}
