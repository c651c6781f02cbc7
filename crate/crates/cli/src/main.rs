use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use cellcycle::experiments::{
    run_cyclic, run_pde, run_retmap, run_simulate, run_sweep, CyclicConfig, PdeConfig, RetmapConfig, RunMetadata,
    SimulateConfig, SweepConfig,
};
use clap::{Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(name = "cellcycle", version, about = "Cell-cycle clustering experiments")]
struct Cli {
    /// TOML file with one table per command ([simulate], [sweep-fig4], ...)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory, created if missing
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for sweeps (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate one population and write its trajectory
    Simulate {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        cycles: Option<f64>,
    },
    /// Cluster count against M across a sweep of (|R|+|S|)^-1
    #[command(name = "sweep-fig4")]
    SweepFig4 {
        /// 5000 cells and 100 sweep points
        #[arg(long)]
        full_scale: bool,
        /// Linear feedback gain; repeat for several sweeps
        #[arg(long, allow_hyphen_values = true)]
        gamma: Vec<f64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Two-cluster return map, its square and fixed points
    Retmap {
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<f64>,
    },
    /// Case regions and spectra of cyclic M+1 cluster solutions
    Cyclic {
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Steady density profile of the continuum model
    #[command(name = "pde-steady")]
    PdeSteady {
        #[arg(long)]
        c: Option<f64>,
    },
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    simulate: Option<SimulateConfig>,
    #[serde(rename = "sweep-fig4")]
    sweep: Option<SweepConfig>,
    retmap: Option<RetmapConfig>,
    cyclic: Option<CyclicConfig>,
    #[serde(rename = "pde-steady")]
    pde: Option<PdeConfig>,
}

/// Marks errors in user input, reported with exit code 2.
#[derive(Debug)]
struct BadInput;

impl std::fmt::Display for BadInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid input")
    }
}

impl std::error::Error for BadInput {}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .context(BadInput)?;
    toml::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .context(BadInput)
}

fn run(cli: Cli) -> Result<RunMetadata> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let file = load_config(cli.config.as_deref())?;
    let out = cli.out.as_path();
    let meta = match cli.command {
        Command::Simulate { n, cycles } => {
            let mut cfg = file.simulate.unwrap_or_default();
            cfg.n = n.unwrap_or(cfg.n);
            cfg.cycles = cycles.unwrap_or(cfg.cycles);
            run_simulate(&cfg, cli.seed, out)?
        }
        Command::SweepFig4 {
            full_scale,
            gamma,
            points,
            n,
        } => {
            let mut cfg = match (file.sweep, full_scale) {
                (_, true) => SweepConfig::full_scale(),
                (Some(cfg), false) => cfg,
                (None, false) => SweepConfig::default(),
            };
            if !gamma.is_empty() {
                cfg.gammas = gamma;
            }
            cfg.points = points.unwrap_or(cfg.points);
            cfg.n = n.unwrap_or(cfg.n);
            run_sweep(&cfg, cli.seed, out)?
        }
        Command::Retmap { s, r, alpha } => {
            let mut cfg = file.retmap.unwrap_or_default();
            cfg.s = s.unwrap_or(cfg.s);
            cfg.r = r.unwrap_or(cfg.r);
            cfg.alpha = alpha.unwrap_or(cfg.alpha);
            run_retmap(&cfg, out)?
        }
        Command::Cyclic { grid } => {
            let mut cfg = file.cyclic.unwrap_or_default();
            cfg.grid = grid.unwrap_or(cfg.grid);
            run_cyclic(&cfg, out)?
        }
        Command::PdeSteady { c } => {
            let mut cfg = file.pde.unwrap_or_default();
            cfg.c = c.unwrap_or(cfg.c);
            run_pde(&cfg, out)?
        }
    };
    Ok(meta)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<BadInput>().is_some() {
        return 2;
    }
    match err.downcast_ref::<cellcycle::Error>() {
        Some(e) if e.is_certificate_failure() => 3,
        Some(cellcycle::Error::Io(_)) | None => 1,
        Some(_) => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(meta) => {
            for name in &meta.outputs {
                println!("{}", name);
            }
            println!("{}.meta.json", meta.command);
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
