//! `rbf` command-line front end.
//!
//! Each subcommand is also a plain function so it can be driven from tests.

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rbf_core::data_mover::{open_repository, serve};
use rbf_core::sim::{
    indistinguishability_bound, run_scenario, write_decay_report, write_outputs, DecayReportError, ScenarioConfig, SimError, SimTrace,
    TierFilter,
};
use rbf_core::stats::{IntervalStats, StatsError};
use rbf_core::{FileVersion, LocalRepository, ModelType, MoverError};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "rbf", version, about = "Edge/HPC model-update simulator and data mover")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write the trace and CSV summaries
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inter-publish interval statistics from a trace
    Stats {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        model: ModelType,
        #[arg(long, default_value = "all")]
        tiers: TierFilter,
    },
    /// Push a file (or stdin) as a new version
    Push {
        #[arg(long, env = "RBF_REPO")]
        repo: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Fetch a version (latest by default) to a file or stdout
    Pull {
        #[arg(long, env = "RBF_REPO")]
        repo: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        version: Option<u32>,
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Describe the newest version of a file
    Latest {
        #[arg(long, env = "RBF_REPO")]
        repo: String,
        #[arg(long)]
        name: String,
    },
    /// Expected decay period and averaged MAE for 0..=20 extra generations
    DecayReport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a local repository over TCP
    Serve {
        #[arg(long)]
        repo: PathBuf,
        #[arg(long)]
        listen: String,
    },
    /// Print the default scenario configuration
    DefaultConfig,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(#[from] SimError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Mover(#[from] MoverError),
}

impl From<DecayReportError> for CliError {
    fn from(e: DecayReportError) -> Self {
        match e {
            DecayReportError::Sim(e) => CliError::Config(e),
            DecayReportError::Io(e) => CliError::Io(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Stats(_) => 4,
            CliError::Mover(e) => match e {
                MoverError::UnknownFile(_) => 10,
                MoverError::UnknownVersion { .. } => 11,
                MoverError::Corrupt(_) => 12,
                MoverError::Malformed(_) => 13,
                MoverError::Timeout { .. } => 14,
                MoverError::Storage(_) => 15,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub fn run<W: Write>(cli: Cli, out: &mut W) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out: dir } => {
            for s in cmd_simulate(&config, seed, &dir)? {
                writeln!(out, "{}", format_stats(&s))?;
            }
        }
        Command::Stats { trace, model, tiers } => {
            let s = cmd_stats(&trace, model, tiers)?;
            writeln!(out, "{}", format_stats(&s))?;
        }
        Command::Push { repo, name, file } => {
            let fv = cmd_push(&repo, &name, file.as_deref())?;
            writeln!(out, "{}", fv.version)?;
        }
        Command::Pull { repo, name, version, file } => match file {
            Some(path) => {
                let content = cmd_pull(&repo, &name, version)?;
                std::fs::write(path, content)?;
            }
            None => out.write_all(&cmd_pull(&repo, &name, version)?)?,
        },
        Command::Latest { repo, name } => {
            let fv = cmd_latest(&repo, &name)?;
            write!(out, "{}", format_file_version(&fv))?;
        }
        Command::DecayReport { config, out: path } => {
            let cfg = load_config(&config)?;
            cmd_decay_report(&cfg, &path)?;
            let b = indistinguishability_bound(&cfg);
            writeln!(out, "min useful period: {:.1} min", b.min_useful_period_min)?;
            writeln!(out, "error floor: {:.2} m/s", b.error_floor_mps)?;
            writeln!(
                out,
                "extra generations per {:.1}-min period: {} computed (ratio {:.2}), {} reported",
                b.base_period_min, b.computed_extra_generations, b.ratio, b.reported_extra_generations
            )?;
        }
        Command::Serve { repo, listen } => {
            let repo = LocalRepository::open(&repo)?;
            let listener = TcpListener::bind(&listen)?;
            writeln!(out, "serving on {}", listener.local_addr()?)?;
            out.flush()?;
            serve(listener, Arc::new(repo))?;
        }
        Command::DefaultConfig => write!(out, "{}", ScenarioConfig::default().to_toml_string())?,
    }
    Ok(())
}

/// `label count min avg max std`, minutes to one decimal.
pub fn format_stats(s: &IntervalStats<f64>) -> String {
    format!("{} n={} min={:.1} avg={:.1} max={:.1} std={:.1}", s.label, s.count, s.min, s.avg, s.max, s.std)
}

pub fn format_file_version(fv: &FileVersion) -> String {
    format!(
        "name={}\nversion={}\nbytes={}\nblocks={}\nstart_seq={}\nend_seq={}\nsha256={}\npush_time_ms={}\n",
        fv.file_name,
        fv.version,
        fv.byte_length,
        fv.block_count(),
        fv.start_seq,
        fv.end_seq,
        fv.checksum_hex(),
        fv.push_time.0
    )
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    Ok(ScenarioConfig::load(path)??)
}

/// Runs the scenario, writes outputs into `out_dir`, and returns the interval
/// statistics for every model and tier combination that has at least two
/// publishes.
pub fn cmd_simulate(config_path: &Path, seed: Option<u64>, out_dir: &Path) -> Result<Vec<IntervalStats<f64>>> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let trace = run_scenario(&cfg)?;
    write_outputs(&trace, out_dir)?;
    let mut stats = Vec::new();
    for m in ModelType::ALL {
        for f in TierFilter::ALL {
            if let Ok(s) = trace.interval_stats(m, f) {
                stats.push(s);
            }
        }
    }
    Ok(stats)
}

pub fn cmd_stats(trace_path: &Path, model: ModelType, tiers: TierFilter) -> Result<IntervalStats<f64>> {
    let trace = SimTrace::read_ndjson(BufReader::new(File::open(trace_path)?))?;
    Ok(trace.interval_stats(model, tiers)?)
}

pub fn cmd_push(repo: &str, name: &str, file: Option<&Path>) -> Result<FileVersion> {
    let content = match file {
        Some(p) => std::fs::read(p)?,
        None => {
            let mut buf = Vec::new();
            io::stdin().lock().read_to_end(&mut buf)?;
            buf
        }
    };
    Ok(open_repository(repo)?.push(name, &content)?)
}

pub fn cmd_pull(repo: &str, name: &str, version: Option<u32>) -> Result<Vec<u8>> {
    Ok(open_repository(repo)?.pull(name, version)?)
}

pub fn cmd_latest(repo: &str, name: &str) -> Result<FileVersion> {
    Ok(open_repository(repo)?.latest(name)?)
}

pub fn cmd_decay_report(cfg: &ScenarioConfig, out_csv: &Path) -> Result<()> {
    let mut w = io::BufWriter::new(File::create(out_csv)?);
    write_decay_report(cfg, &mut w)?;
    w.flush()?;
    Ok(())
}
