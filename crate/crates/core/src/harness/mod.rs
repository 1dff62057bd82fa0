//! Config-driven experiment runner.
//!
//! Every `(T, replicate)` pair is a job. A job builds its environment, draws
//! one data stream and runs every configured policy on it with the same
//! algorithm seed, so policies are compared on common random numbers. Jobs run
//! on the rayon pool; results are gathered in job order, which makes the
//! outputs independent of the thread count.

mod config;
mod output;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{AlgoName, AlgoSpec, DetectorSpec, EnvKind, EnvSpec, ExperimentConfig, RegionSpec};
pub use output::{load_contexts, read_run_csv, write_run_csv, CsvRow, CSV_HEADER};

use crate::baselines::{default_oracle_search, PolicyKind};
use crate::env::{default_tv_resolution, Environment};
use crate::error::{Error, Result};
use crate::partition::Context;
use crate::runlog::RunLog;
use crate::seed::{derive, rng_from, STREAM_ALGO, STREAM_ENV};
use crate::shifts::{compute_shifts, DetectorConfig, GapTable, Interpretation, LevelMode, SigShiftReport};

/// Per-round and cumulative dynamic regret from true means.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretSeries {
    pub instant: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretSeries {
    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

pub fn compute_regret(run: &RunLog, env: &Environment, contexts: &[Context]) -> Result<RegretSeries> {
    if run.rows.len() != contexts.len() || env.horizon != contexts.len() as u64 {
        return Err(Error::LengthMismatch(format!(
            "{} rows, {} contexts, horizon {}",
            run.rows.len(),
            contexts.len(),
            env.horizon
        )));
    }
    let mut instant = Vec::with_capacity(contexts.len());
    for (row, x) in run.rows.iter().zip(contexts) {
        if row.context != *x {
            return Err(Error::LengthMismatch(format!("round {} was run on another context", row.t)));
        }
        instant.push(env.true_gap(row.t, row.arm, x)?);
    }
    let cumulative = instant
        .iter()
        .scan(0.0, |acc, g| {
            *acc += g;
            Some(*acc)
        })
        .collect();
    Ok(RegretSeries { instant, cumulative })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares of `log y` on `log T`.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<ExponentFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Err(Error::InvalidArgument(format!("non-positive point {p:?}")));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all horizons equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ExponentFit { slope, intercept, r_squared })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub algo: String,
    pub horizon: u64,
    pub replicate: u64,
    pub seed: u64,
    pub final_regret: f64,
    /// Diagnostic only: `sum_t max_a f(X_t) - Y_t`.
    pub realized_regret: f64,
    pub episodes: usize,
    pub replays: usize,
    /// Global shift count `L`.
    pub shifts_global: u64,
    /// `L~` with every arm unsafe at the current context.
    pub shifts_current_context: usize,
    /// `L~` with each arm unsafe at some experienced context.
    pub shifts_any_context: usize,
    pub tv_bound: f64,
    pub csv: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub algo: String,
    pub horizon: u64,
    pub runs: usize,
    pub mean_regret: f64,
    pub std_regret: f64,
    pub mean_episodes: f64,
    pub mean_replays: f64,
    pub mean_shifts_current_context: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoFit {
    pub algo: String,
    pub points: Vec<(u64, f64)>,
    pub fit: ExponentFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub base_seed: u64,
    pub horizons: Vec<u64>,
    pub replicates: u64,
    pub runs: Vec<RunSummary>,
    pub aggregates: Vec<Aggregate>,
    /// One fit per algorithm when at least three horizons were run.
    pub fits: Vec<AlgoFit>,
}

impl ExperimentSummary {
    pub fn aggregate(&self, algo: &str, horizon: u64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.algo == algo && a.horizon == horizon)
    }

    pub fn fit(&self, algo: &str) -> Option<&ExponentFit> {
        self.fits.iter().find(|f| f.algo == algo).map(|f| &f.fit)
    }
}

/// Seed of replicate `i` at horizon `horizon`.
pub fn replicate_seed(base: u64, horizon: u64, i: u64) -> u64 {
    derive(base, &[horizon, i])
}

/// Directory receiving the outputs of `config`.
pub fn experiment_dir(config: &ExperimentConfig) -> PathBuf {
    config.output_dir.join(&config.name)
}

fn run_job(config: &ExperimentConfig, dir: &Path, horizon: u64, replicate: u64) -> Result<Vec<RunSummary>> {
    let seed = replicate_seed(config.base_seed, horizon, replicate);
    let env = config.env.build(horizon, derive(seed, &[STREAM_ENV, 1]))?;
    let stream = env.sample_stream(&mut rng_from(derive(seed, &[STREAM_ENV])));
    let contexts: Vec<Context> = stream.iter().map(|s| s.context.clone()).collect();
    let gaps = GapTable::from_stream(&stream)?;
    let d = env.dim;
    let detect = |interpretation, level_mode, family| {
        compute_shifts(&gaps, &contexts, d, DetectorConfig { level_mode, family, interpretation })
    };
    let spec = config.detector;
    let current = detect(Interpretation::CurrentContext, spec.level_mode, spec.family)?;
    let any = detect(Interpretation::AnyContext, spec.level_mode, spec.family)?;
    let shifts_global = env.global_shift_count();
    let tv_bound = env.tv_upper_bound(default_tv_resolution(d))?;

    let mut out = Vec::new();
    for algo in &config.algos {
        let policy = algo.policy();
        let oracle_report: Option<SigShiftReport> = match &policy {
            PolicyKind::OracleRestart { search } => {
                let family = search.unwrap_or_else(|| default_oracle_search(horizon));
                if spec.level_mode == LevelMode::Exact && spec.family == family {
                    Some(current.clone())
                } else {
                    Some(detect(Interpretation::CurrentContext, LevelMode::Exact, family)?)
                }
            }
            _ => None,
        };
        let mut rng = rng_from(derive(seed, &[STREAM_ALGO]));
        let log = policy.run(&stream, env.arms, d, oracle_report.as_ref(), &mut rng)?;
        log.validate()?;
        let regret = compute_regret(&log, &env, &contexts)?;
        let run_id = format!("{}-T{horizon}-r{replicate}", policy.label());
        let file = PathBuf::from("runs").join(format!("{run_id}.csv"));
        write_run_csv(&dir.join(&file), &run_id, seed, &log, &regret)?;
        let realized = stream
            .iter()
            .zip(&log.rows)
            .map(|(s, r)| s.best_mean() - r.reward)
            .sum();
        out.push(RunSummary {
            run_id,
            algo: policy.label().to_string(),
            horizon,
            replicate,
            seed,
            final_regret: regret.total(),
            realized_regret: realized,
            episodes: log.episode_count(),
            replays: log.replays.len(),
            shifts_global,
            shifts_current_context: current.count(),
            shifts_any_context: any.count(),
            tv_bound,
            csv: file,
        });
    }
    Ok(out)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn summarize(config: &ExperimentConfig, horizons: Vec<u64>, runs: Vec<RunSummary>) -> ExperimentSummary {
    let mut aggregates = Vec::new();
    let mut fits = Vec::new();
    for algo in &config.algos {
        let label = algo.policy().label();
        let mut points = Vec::new();
        for &t in &horizons {
            let group: Vec<&RunSummary> = runs.iter().filter(|r| r.algo == label && r.horizon == t).collect();
            let col = |f: fn(&RunSummary) -> f64| group.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (mean_regret, std_regret) = mean_std(&col(|r| r.final_regret));
            points.push((t, mean_regret));
            aggregates.push(Aggregate {
                algo: label.to_string(),
                horizon: t,
                runs: group.len(),
                mean_regret,
                std_regret,
                mean_episodes: mean_std(&col(|r| r.episodes as f64)).0,
                mean_replays: mean_std(&col(|r| r.replays as f64)).0,
                mean_shifts_current_context: mean_std(&col(|r| r.shifts_current_context as f64)).0,
            });
        }
        let xy: Vec<(f64, f64)> = points.iter().map(|&(t, y)| (t as f64, y)).collect();
        if let Ok(fit) = fit_exponent(&xy) {
            fits.push(AlgoFit { algo: label.to_string(), points, fit });
        }
    }
    ExperimentSummary {
        name: config.name.clone(),
        base_seed: config.base_seed,
        horizons,
        replicates: config.replicates,
        runs,
        aggregates,
        fits,
    }
}

/// Run every `(T, replicate)` job, write per-run CSVs, `summary.json` and a
/// copy of the config under `output_dir/name`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let horizons = config.horizons()?;
    let dir = experiment_dir(config);
    let runs_dir = dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;

    let jobs: Vec<(u64, u64)> = horizons
        .iter()
        .flat_map(|&t| (0..config.replicates).map(move |i| (t, i)))
        .collect();
    let results: Vec<Result<Vec<RunSummary>>> =
        jobs.par_iter().map(|&(t, i)| run_job(config, &dir, t, i)).collect();
    let mut runs = Vec::new();
    for r in results {
        runs.extend(r?);
    }

    let summary = summarize(config, horizons, runs);
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
