use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RegretSeries;
use crate::error::{Error, Result};
use crate::partition::Context;
use crate::runlog::RunLog;

pub const CSV_HEADER: [&str; 11] = [
    "run_id",
    "seed",
    "t",
    "episode",
    "level_m",
    "replay_depth",
    "n_active_arms",
    "arm",
    "reward",
    "regret_instant",
    "regret_cum",
];

/// One row of a per-run CSV, in column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub seed: u64,
    pub t: u64,
    pub episode: u32,
    pub level_m: u32,
    pub replay_depth: u32,
    pub n_active_arms: u32,
    pub arm: usize,
    pub reward: f64,
    pub regret_instant: f64,
    pub regret_cum: f64,
}

pub fn write_run_csv(path: &Path, run_id: &str, seed: u64, log: &RunLog, regret: &RegretSeries) -> Result<()> {
    let io = |e: csv::Error| Error::parse(path, e);
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for (i, row) in log.rows.iter().enumerate() {
        w.serialize(CsvRow {
            run_id: run_id.to_string(),
            seed,
            t: row.t,
            episode: row.episode,
            level_m: row.level,
            replay_depth: row.replay_depth,
            n_active_arms: row.candidates.count_ones(),
            arm: row.arm,
            reward: row.reward,
            regret_instant: regret.instant[i],
            regret_cum: regret.cumulative[i],
        })
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_run_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::parse(path, e))).collect()
}

/// Contexts from a `.json` array of coordinate arrays, or a header-less CSV
/// with one context per line.
pub fn load_contexts(path: &Path) -> Result<Vec<Context>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<Vec<f64>> = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?
    } else {
        csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, e))?
    };
    raw.into_iter()
        .enumerate()
        .map(|(i, v)| Context::new(v).map_err(|e| Error::parse(path, format!("context {}: {e}", i + 1))))
        .collect()
}
