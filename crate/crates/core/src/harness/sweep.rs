use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::convergence::{convergence_time, ConvergenceOptions};
use super::systems::{ProtocolKind, SystemSpec};
use crate::acdt::{theorem_bound_rounds, BoundModel};
use crate::error::{Error, Result};
use crate::models::ModelKind;
use crate::random::derive_seed;

/// Parameter grid: every combination of `n`, `s` and `delta` for each model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub protocol: ProtocolKind,
    pub models: Vec<ModelKind>,
    pub n: Vec<usize>,
    pub s: Vec<usize>,
    pub delta: Vec<f64>,
    #[serde(default = "one")]
    pub source_weight: u32,
}

fn one() -> u32 {
    1
}

/// A sweep configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    #[serde(default = "default_cap")]
    pub cap: u64,
    #[serde(default)]
    pub grids: Vec<Grid>,
    /// Extra cells listed one by one.
    #[serde(default)]
    pub cells: Vec<SystemSpec>,
}

fn default_trials() -> u64 {
    2000
}

fn default_margin() -> f64 {
    0.02
}

fn default_cap() -> u64 {
    10_000_000
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// All cells in a fixed order: grids first (model, n, s, δ nested in that order),
    /// then the explicit cells.
    pub fn expand(&self) -> Vec<SystemSpec> {
        let mut out = Vec::new();
        for g in &self.grids {
            for &model in &g.models {
                for &n in &g.n {
                    for &s in &g.s {
                        for &delta in &g.delta {
                            out.push(SystemSpec {
                                protocol: g.protocol,
                                model,
                                n,
                                s,
                                delta,
                                source_weight: g.source_weight,
                            });
                        }
                    }
                }
            }
        }
        out.extend(self.cells.iter().cloned());
        out
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub model: String,
    pub n: usize,
    pub s: usize,
    pub delta: f64,
    pub protocol: String,
    pub trials: u64,
    pub converged: bool,
    /// Estimated 2/3-convergence time, empty when the cap was reached.
    pub time: Option<u64>,
    pub unit: String,
    pub cap: u64,
    pub frequency: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Lower bound in the same unit, empty where it does not apply.
    pub bound: Option<f64>,
    pub seed: u64,
    pub error: Option<String>,
}

impl ExperimentRecord {
    /// Whether the measured time is at least the theoretical bound (vacuously true
    /// when either is missing).
    pub fn respects_bound(&self) -> bool {
        match (self.time, self.bound) {
            (Some(t), Some(b)) => t as f64 >= b,
            _ => true,
        }
    }
}

/// Bound attached to a cell, in the cell's own time unit.
pub fn cell_bound(spec: &SystemSpec) -> Option<f64> {
    let model = BoundModel::from_model(spec.model, spec.reliable_sources()).ok()?;
    if spec.protocol == ProtocolKind::Structured || spec.source_weight != 1 {
        // the structured channel is not δ-uniform, and weighted sources change ε
        return None;
    }
    let bound = theorem_bound_rounds(model, spec.n, spec.s, spec.delta).ok()?;
    Some(bound.value)
}

/// Runs one cell.
pub fn run_cell(spec: &SystemSpec, options: ConvergenceOptions) -> ExperimentRecord {
    let mut record = ExperimentRecord {
        model: spec.model.label(),
        n: spec.n,
        s: spec.s,
        delta: spec.delta,
        protocol: spec.protocol.label().to_string(),
        trials: options.trials,
        converged: false,
        time: None,
        unit: spec.model.time_unit().to_string(),
        cap: options.cap,
        frequency: 0.0,
        ci_lower: 0.0,
        ci_upper: 0.0,
        bound: cell_bound(spec),
        seed: options.seed,
        error: None,
    };
    let outcome = spec.build().and_then(|sys| convergence_time(sys.as_ref(), options));
    match outcome {
        Ok(r) => {
            record.converged = r.converged();
            record.time = r.time;
            record.cap = r.cap;
            record.frequency = r.frequency;
            record.ci_lower = r.ci.lower;
            record.ci_upper = r.ci.upper;
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Runs every cell of the configuration. Cell `i` uses the seed derived from the
/// master seed and `i`; a failing cell is recorded and the sweep goes on.
pub fn sweep(config: &RunConfig) -> Vec<ExperimentRecord> {
    let cells = config.expand();
    cells
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let options = ConvergenceOptions {
                trials: config.trials,
                margin: config.margin,
                cap: config.cap,
                seed: derive_seed(config.seed, &[i as u64]),
            };
            run_cell(spec, options)
        })
        .collect()
}

pub fn write_records<W: Write>(records: &[ExperimentRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_records_file(records: &[ExperimentRecord], path: impl AsRef<Path>) -> Result<()> {
    write_records(records, std::fs::File::create(path)?)
}

pub fn read_records_file(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    read_records(std::fs::File::open(path)?)
}
