//! Command implementations behind the `robgan` binary.

pub mod presets;
pub mod sweep;
pub mod verify;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Deserialize;

use robgan_core::nn::Checkpoint;
use robgan_core::ring::{score_run, RingSpec, Score};
use robgan_core::train::{self, RunMetrics, RunOutput, TrainConfig};

use crate::sweep::{AggregateRow, RunRow, SweepSpec};
use crate::verify::{Record, VerifyOptions};

/// Directory every command writes into; falls back to `./robgan_out`.
pub const OUT_DIR_ENV: &str = "ROBGAN_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] robgan_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for bad input, 1 for anything that went wrong while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) | CliError::Json(_) => 2,
            CliError::Core(e) if e.is_config_error() => 2,
            _ => 1,
        }
    }
}

pub fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("robgan_out"))
}

/// Runs the certificates and prints one JSON line per record. Returns whether
/// every certificate passed.
pub fn cmd_verify(opts: &VerifyOptions, out: &mut impl Write) -> Result<bool, CliError> {
    let records: Vec<Record> = verify::run(opts)?;
    for r in &records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    Ok(records.iter().all(|r| r.pass))
}

/// A path to a JSON config, or a preset name.
pub fn load_config(arg: &str) -> Result<TrainConfig, CliError> {
    let path = Path::new(arg);
    let config: TrainConfig = if path.is_file() {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| CliError::Invalid(format!("{arg}: {e}")))?
    } else {
        presets::preset(arg)?
    };
    config.validate()?;
    Ok(config)
}

/// Writes the metric log, both final networks, the final samples and the run metrics.
pub fn write_run_artifacts(dir: &Path, out: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut log = String::new();
    for r in &out.log {
        log.push_str(&serde_json::to_string(r)?);
        log.push('\n');
    }
    fs::write(dir.join("metrics.jsonl"), log)?;
    fs::write(dir.join("generator.json"), serde_json::to_string(&out.generator.to_checkpoint())?)?;
    fs::write(
        dir.join("discriminator.json"),
        serde_json::to_string(&out.discriminator.to_checkpoint())?,
    )?;
    write_samples(&dir.join("samples.csv"), &out.samples)?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&out.metrics)? + "\n")?;
    Ok(())
}

pub fn cmd_train(config: &TrainConfig, dir: &Path) -> Result<RunMetrics, CliError> {
    let out = train::run(config)?;
    write_run_artifacts(dir, &out)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;
    Ok(out.metrics)
}

pub fn load_sweep(path: &Path) -> Result<SweepSpec, CliError> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Runs a sweep and writes `runs.csv` and `aggregate.csv` into `dir`.
pub fn cmd_sweep(
    spec: &SweepSpec,
    parallelism: usize,
    paper_scale: bool,
    dir: &Path,
) -> Result<(Vec<RunRow>, Vec<AggregateRow>), CliError> {
    let runs = spec.plan(paper_scale)?;
    let rows = sweep::execute(&runs, parallelism)?;
    let cells: Vec<usize> = runs.iter().map(|r| r.cell).collect();
    let agg = sweep::aggregate(&rows, &cells);
    fs::create_dir_all(dir)?;
    sweep::write_csv(&dir.join("runs.csv"), &rows)?;
    sweep::write_csv(&dir.join("aggregate.csv"), &agg)?;
    Ok((rows, agg))
}

#[derive(Debug, serde::Serialize, Deserialize)]
struct SamplePoint {
    x: f64,
    y: f64,
}

pub fn write_samples(path: &Path, samples: &Array2<f64>) -> Result<(), CliError> {
    let rows: Vec<SamplePoint> = samples
        .outer_iter()
        .map(|r| SamplePoint { x: r[0], y: r[1] })
        .collect();
    sweep::write_csv(path, &rows)
}

pub fn read_samples(path: &Path) -> Result<Array2<f64>, CliError> {
    let rows: Vec<SamplePoint> = sweep::read_csv(path)?;
    let flat: Vec<f64> = rows.iter().flat_map(|p| [p.x, p.y]).collect();
    Array2::from_shape_vec((rows.len(), 2), flat).map_err(|e| CliError::Invalid(e.to_string()))
}

pub fn cmd_eval(path: &Path, ring: &RingSpec) -> Result<Score, CliError> {
    Ok(score_run(&read_samples(path)?, ring)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
