//! Experiment runner for the percolation laboratory: configuration files,
//! result tables, metadata sidecars, grid files and SVG plots.

pub mod config;
pub mod experiments;
pub mod gridio;
pub mod plot;
pub mod table;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use config::{ConfigError, ExperimentConfig, ExperimentKind};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] perc_core::PercError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Grid(#[from] gridio::GridIoError),
    #[error(transparent)]
    Plot(#[from] plot::PlotError),
}

impl RunError {
    /// 1 for a bad configuration or plot request, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Plot(plot::PlotError::Schema { .. }) => 1,
            _ => 2,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Written {
    pub csv: PathBuf,
    pub metadata: PathBuf,
    pub timing: PathBuf,
    pub grids: Vec<PathBuf>,
    pub rows: usize,
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    seed: u64,
    columns: &'a [String],
    rows: usize,
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Timing {
    wall_seconds: f64,
}

pub fn metadata_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn timing_path(csv: &Path) -> PathBuf {
    csv.with_extension("timing.json")
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(|source| RunError::Io { path: path.into(), source })
}

/// Validate, run and persist one experiment: `<out>.csv`, the metadata
/// sidecar `<out>.json` (config, seed, version) and `<out>.timing.json`.
pub fn run_experiment(kind: ExperimentKind, mut config: ExperimentConfig, o: &Overrides) -> Result<Written, RunError> {
    config.seed = o.seed.or(config.seed);
    config.workers = o.workers.or(config.workers);
    let csv = o
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", kind.name())));
    let v = config.validate(kind)?;
    if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| RunError::Io { path: dir.into(), source })?;
    }
    let start = Instant::now();
    let outcome = experiments::run(&v)?;
    let wall = start.elapsed().as_secs_f64();
    write(&csv, &outcome.table.to_csv())?;
    let meta = Metadata {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        experiment: kind.name(),
        seed: v.seed,
        columns: &outcome.table.columns,
        rows: outcome.table.rows.len(),
        config: &v.config,
    };
    let metadata = metadata_path(&csv);
    write(&metadata, &(serde_json::to_string_pretty(&meta).expect("serializable") + "\n"))?;
    let timing = timing_path(&csv);
    write(&timing, &(serde_json::to_string_pretty(&Timing { wall_seconds: wall }).expect("serializable") + "\n"))?;
    let mut grids = Vec::new();
    for (name, g, m) in &outcome.grids {
        let path = csv.with_extension(format!("{name}.csv"));
        gridio::write_grid(&path, g, m)?;
        grids.push(path);
    }
    Ok(Written { csv, metadata, timing, grids, rows: outcome.table.rows.len() })
}
