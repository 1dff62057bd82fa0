//! Comparator policies: the oracle restart procedure, stationary binned
//! successive elimination, and uniform random play.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmeta::{run_with_label, uniform_from, CmetaConfig, DEFAULT_C0};
use crate::env::RoundSample;
use crate::error::{Error, Result};
use crate::estimate::{full_mask, EvictionMode};
use crate::partition::{side_length, BinId};
use crate::runlog::RunLog;
use crate::shifts::{layout, oracle_level, GapTable, IntervalFamily, SigShiftReport};

/// Horizon up to which the oracle searches every sub-interval.
pub const ORACLE_EXACT_MAX_T: u64 = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tag", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyKind {
    Cmeta(CmetaConfig),
    /// Needs a shift report on the same contexts.
    OracleRestart {
        #[serde(default)]
        search: Option<IntervalFamily>,
    },
    StationarySe {
        #[serde(default = "default_c0")]
        c0: f64,
        #[serde(default)]
        eviction_mode: EvictionMode,
    },
    UniformRandom,
}

fn default_c0() -> f64 {
    DEFAULT_C0
}

impl PolicyKind {
    pub fn label(&self) -> &'static str {
        match self {
            PolicyKind::Cmeta(_) => "cmeta",
            PolicyKind::OracleRestart { .. } => "oracle_restart",
            PolicyKind::StationarySe { .. } => "stationary_se",
            PolicyKind::UniformRandom => "uniform_random",
        }
    }

    pub fn needs_report(&self) -> bool {
        matches!(self, PolicyKind::OracleRestart { .. })
    }

    /// Run on a pre-drawn stream. `report` is required for the oracle.
    pub fn run<R: Rng + ?Sized>(
        &self,
        stream: &[RoundSample],
        arms: usize,
        dim: usize,
        report: Option<&SigShiftReport>,
        rng: &mut R,
    ) -> Result<RunLog> {
        match self {
            PolicyKind::Cmeta(config) => run_with_label(stream, arms, dim, config, rng, "cmeta"),
            PolicyKind::OracleRestart { search } => {
                let report = report.ok_or_else(|| {
                    Error::InvalidArgument("oracle_restart needs a shift report".into())
                })?;
                let search = search.unwrap_or_else(|| default_oracle_search(stream.len() as u64));
                run_oracle_restart(stream, arms, dim, report, search, rng)
            }
            PolicyKind::StationarySe { c0, eviction_mode } => {
                run_stationary_se(stream, arms, dim, *c0, *eviction_mode, rng)
            }
            PolicyKind::UniformRandom => run_uniform_random(stream, arms, dim, rng),
        }
    }
}

pub fn default_oracle_search(horizon: u64) -> IntervalFamily {
    if horizon <= ORACLE_EXACT_MAX_T {
        IntervalFamily::All
    } else {
        IntervalFamily::Dyadic
    }
}

fn check_stream(stream: &[RoundSample], arms: usize, dim: usize) -> Result<()> {
    if stream.is_empty() {
        return Err(Error::InvalidArgument("empty data stream".into()));
    }
    if !(1..=64).contains(&arms) {
        return Err(Error::InvalidArgument(format!("arm count {arms} outside 1..=64")));
    }
    if let Some(s) = stream.iter().find(|s| s.rewards.len() != arms || s.context.dim() != dim) {
        return Err(Error::LengthMismatch(format!(
            "sample with {} arms in dimension {}, expected {arms} and {dim}",
            s.rewards.len(),
            s.context.dim()
        )));
    }
    Ok(())
}

/// Uniform play over the arms not yet unsafe in the oracle-level bin of the
/// current phase. Uses true gaps; an analysis device, not an online policy.
///
/// Within a phase, an arm leaves `G_t` once some sub-interval of `[tau_i, t)`
/// gives it significant regret in the bin of `X_t`. With `search = Dyadic` only
/// intervals `[tau_i + k 2^j, tau_i + (k+1) 2^j - 1]` are searched.
pub fn run_oracle_restart<R: Rng + ?Sized>(
    stream: &[RoundSample],
    arms: usize,
    dim: usize,
    report: &SigShiftReport,
    search: IntervalFamily,
    rng: &mut R,
) -> Result<RunLog> {
    check_stream(stream, arms, dim)?;
    let horizon = stream.len() as u64;
    if report.horizon != horizon || report.arms != arms || report.dim != dim {
        return Err(Error::LengthMismatch(format!(
            "report for T={}, K={}, d={} used on T={horizon}, K={arms}, d={dim}",
            report.horizon, report.arms, report.dim
        )));
    }
    let gaps = GapTable::from_stream(stream)?;
    let contexts: Vec<_> = stream.iter().map(|s| s.context.clone()).collect();
    let full = full_mask(arms);
    let mut log = RunLog::new("oracle_restart", horizon, arms, dim);
    log.episode_starts = report.phases().iter().map(|p| p.0).collect();

    for (phase, &(tau, next)) in report.phases().iter().enumerate() {
        let m = oracle_level(tau, next, arms.max(2), dim)?;
        let r = side_length(m);
        let lay = layout(&contexts, m);
        let mut unsafe_arms = vec![0u64; lay.ids.len()];
        for t in tau..next {
            let b = lay.cell[t as usize - 1] as usize;
            let good = full & !unsafe_arms[b];
            if good == 0 {
                return Err(Error::OracleExhausted { round: t });
            }
            let sample = &stream[t as usize - 1];
            let arm = uniform_from(good, rng);
            log.push_play(sample, phase as u32, m, lay.ids[b].clone(), good, arm, 0, phase as u32);

            match search {
                IntervalFamily::All => {
                    let rounds = &lay.rounds[b];
                    let mut sums = vec![0.0; arms];
                    let mut n = 0u64;
                    for &s in rounds[..=lay.pos[t as usize - 1] as usize].iter().rev() {
                        if s < tau || unsafe_arms[b] == full {
                            break;
                        }
                        n += 1;
                        for (a, acc) in sums.iter_mut().enumerate() {
                            *acc += gaps.gap(s, a);
                            if sig(*acc, n, r, arms) {
                                unsafe_arms[b] |= 1 << a;
                            }
                        }
                    }
                }
                IntervalFamily::Dyadic => {
                    let elapsed = t - tau + 1;
                    let mut len = 1u64;
                    while len <= elapsed {
                        if elapsed % len == 0 {
                            let mut acc: std::collections::HashMap<u32, (u64, Vec<f64>)> = Default::default();
                            for s in t + 1 - len..=t {
                                let e = acc
                                    .entry(lay.cell[s as usize - 1])
                                    .or_insert_with(|| (0, vec![0.0; arms]));
                                e.0 += 1;
                                for (a, x) in e.1.iter_mut().enumerate() {
                                    *x += gaps.gap(s, a);
                                }
                            }
                            for (cell, (n, sums)) in acc {
                                for (a, &sum) in sums.iter().enumerate() {
                                    if sig(sum, n, r, arms) {
                                        unsafe_arms[cell as usize] |= 1 << a;
                                    }
                                }
                            }
                        }
                        len <<= 1;
                    }
                }
            }
        }
    }
    Ok(log)
}

#[inline]
fn sig(sum: f64, n: u64, r: f64, arms: usize) -> bool {
    sum >= ((arms as u64 * n) as f64).sqrt() + r * n as f64 - crate::shifts::SIG_TOLERANCE
}

/// CMETA with replays off and no restarts: one episode of binned successive
/// elimination that always keeps at least one arm per bin.
pub fn run_stationary_se<R: Rng + ?Sized>(
    stream: &[RoundSample],
    arms: usize,
    dim: usize,
    c0: f64,
    eviction_mode: EvictionMode,
    rng: &mut R,
) -> Result<RunLog> {
    let config = CmetaConfig { c0, eviction_mode, replays: false, restarts: false };
    run_with_label(stream, arms, dim, &config, rng, "stationary_se")
}

pub fn run_uniform_random<R: Rng + ?Sized>(
    stream: &[RoundSample],
    arms: usize,
    dim: usize,
    rng: &mut R,
) -> Result<RunLog> {
    check_stream(stream, arms, dim)?;
    let full = full_mask(arms);
    let mut log = RunLog::new("uniform_random", stream.len() as u64, arms, dim);
    for sample in stream {
        let arm = uniform_from(full, rng);
        log.push_play(sample, 0, 0, BinId::root(dim), full, arm, 0, 0);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_flip_env, piecewise_constant, NoiseModel};
    use crate::partition::Context;
    use crate::seed::rng_from;
    use crate::shifts::{compute_shifts, significant_regret, DetectorConfig};

    fn stream_of(means: Vec<(u64, Vec<f64>)>, horizon: u64, d: usize, seed: u64) -> Vec<RoundSample> {
        piecewise_constant(horizon, d, means, NoiseModel::Noiseless)
            .unwrap()
            .sample_stream(&mut rng_from(seed))
    }

    fn report_for(stream: &[RoundSample], d: usize) -> SigShiftReport {
        let g = GapTable::from_stream(stream).unwrap();
        let xs: Vec<Context> = stream.iter().map(|s| s.context.clone()).collect();
        compute_shifts(&g, &xs, d, DetectorConfig::default()).unwrap()
    }

    #[test]
    fn uniform_zero_gap_and_single_arm() {
        let s = stream_of(vec![(1, vec![0.4, 0.4, 0.4])], 100, 1, 1);
        let log = run_uniform_random(&s, 3, 1, &mut rng_from(2)).unwrap();
        assert_eq!(log.total_regret(), 0.0);
        log.validate().unwrap();

        let s = stream_of(vec![(1, vec![0.7])], 50, 0, 3);
        let a = run_uniform_random(&s, 1, 0, &mut rng_from(4)).unwrap();
        let b = run_uniform_random(&s, 1, 0, &mut rng_from(5)).unwrap();
        assert_eq!(a, b);
        assert!(a.rows.iter().all(|r| r.arm == 0));
    }

    #[test]
    fn uniform_constant_gap_regret_is_binomial() {
        let delta = 0.3;
        let horizon = 400;
        let s = stream_of(vec![(1, vec![0.5, 0.5 - delta])], horizon, 1, 7);
        let runs: Vec<f64> = (0..200)
            .map(|i| run_uniform_random(&s, 2, 1, &mut rng_from(100 + i)).unwrap().total_regret())
            .collect();
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        // regret = delta * Binomial(T, 1/2)
        let se = delta * (horizon as f64 * 0.25).sqrt() / (runs.len() as f64).sqrt();
        assert!((mean - delta * horizon as f64 / 2.0).abs() <= 4.0 * se, "{mean}");
    }

    #[test]
    fn stationary_se_zero_gap() {
        let s = stream_of(vec![(1, vec![0.5, 0.5])], 500, 1, 1);
        let log = run_stationary_se(&s, 2, 1, DEFAULT_C0, EvictionMode::Dyadic, &mut rng_from(1)).unwrap();
        assert_eq!(log.total_regret(), 0.0);
        assert_eq!(log.policy, "stationary_se");
        assert!(log.replays.is_empty());
        assert_eq!(log.episode_count(), 1);
    }

    #[test]
    fn stationary_se_matches_replay_free_cmeta() {
        let env = make_flip_env(800, 2, 0, 0.5, 1, 9).unwrap();
        let s = env.sample_stream(&mut rng_from(9));
        let se = run_stationary_se(&s, 2, 1, DEFAULT_C0, EvictionMode::Dyadic, &mut rng_from(3)).unwrap();
        let cfg = CmetaConfig { replays: false, restarts: false, ..Default::default() };
        let cm = crate::cmeta::run_cmeta(&s, 2, 1, &cfg, &mut rng_from(3)).unwrap();
        assert_eq!(se.rows, cm.rows);
    }

    #[test]
    fn stationary_se_is_stuck_after_severe_flip() {
        let horizon = 4000;
        let s = stream_of(vec![(1, vec![1.0, 0.0]), (2001, vec![0.0, 1.0])], horizon, 1, 11);
        let log = run_stationary_se(&s, 2, 1, DEFAULT_C0, EvictionMode::Dyadic, &mut rng_from(12)).unwrap();
        let cum = log.cumulative_regret();
        let second_half = cum[horizon as usize - 1] - cum[2999];
        // the pre-flip best arm is the sole survivor: linear regret
        assert!(second_half > 900.0, "{second_half}");
    }

    #[test]
    fn oracle_zero_gap_keeps_all_arms() {
        let s = stream_of(vec![(1, vec![0.5, 0.5, 0.5])], 300, 1, 2);
        let report = report_for(&s, 1);
        let log = run_oracle_restart(&s, 3, 1, &report, IntervalFamily::All, &mut rng_from(1)).unwrap();
        assert_eq!(log.total_regret(), 0.0);
        assert!(log.rows.iter().all(|r| r.candidates == 0b111));
        assert_eq!(log.policy, "oracle_restart");
    }

    #[test]
    fn oracle_drops_bad_arm_in_each_bin() {
        let horizon = 1024;
        let s = stream_of(vec![(1, vec![0.75, 0.25])], horizon, 1, 5);
        let report = report_for(&s, 1);
        assert_eq!(report.count(), 0);
        let log = run_oracle_restart(&s, 2, 1, &report, IntervalFamily::All, &mut rng_from(1)).unwrap();
        let level = oracle_level(1, horizon + 1, 2, 1).unwrap();
        assert_eq!(level, 3);
        let mut exits = std::collections::BTreeMap::new();
        for r in &log.rows {
            if r.candidates == 1 {
                exits.entry(r.bin.coords[0]).or_insert(r.t);
            }
        }
        assert_eq!(exits.len(), 8);
        let later: Vec<u64> = exits.values().copied().collect();
        // first round without the bad arm, per bin, for this seed
        assert_eq!(later, vec![143, 110, 128, 199, 146, 90, 101, 140]);
        // once gone, it stays gone
        for r in &log.rows {
            if exits.get(&r.bin.coords[0]).is_some_and(|&e| r.t >= e) {
                assert_eq!(r.candidates, 1);
            }
        }
    }

    /// Sub-intervals of `[tau, t)` searched by the oracle.
    fn checked_intervals(search: IntervalFamily, tau: u64, t: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        for s1 in tau..t {
            for s2 in s1..t {
                let len = s2 - s1 + 1;
                let dyadic = len.is_power_of_two() && (s1 - tau).is_multiple_of(len);
                if search == IntervalFamily::All || dyadic {
                    out.push((s1, s2));
                }
            }
        }
        out
    }

    #[test]
    fn oracle_arms_are_never_unsafe() {
        let horizon = 160;
        let env = make_flip_env(horizon, 2, 2, 0.9, 1, 21).unwrap().with_noise(NoiseModel::Noiseless);
        let s = env.sample_stream(&mut rng_from(21));
        let report = report_for(&s, 1);
        let g = GapTable::from_stream(&s).unwrap();
        let xs: Vec<Context> = s.iter().map(|x| x.context.clone()).collect();
        for search in [IntervalFamily::All, IntervalFamily::Dyadic] {
            let log = run_oracle_restart(&s, 2, 1, &report, search, &mut rng_from(2)).unwrap();
            log.validate().unwrap();
            for (&(tau, next), start) in report.phases().iter().zip(&log.episode_starts) {
                assert_eq!(tau, *start);
                for t in tau..next {
                    let row = &log.rows[t as usize - 1];
                    for a in 0..2 {
                        if row.candidates >> a & 1 == 0 {
                            continue;
                        }
                        for (s1, s2) in checked_intervals(search, tau, t) {
                            assert!(!significant_regret(&g, &xs, &row.bin, (s1, s2), a));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_rejects_foreign_report() {
        let s = stream_of(vec![(1, vec![0.5, 0.5])], 64, 1, 2);
        let other = stream_of(vec![(1, vec![0.5, 0.5])], 32, 1, 2);
        let report = report_for(&other, 1);
        assert!(run_oracle_restart(&s, 2, 1, &report, IntervalFamily::All, &mut rng_from(1)).is_err());
        assert!(PolicyKind::OracleRestart { search: None }.run(&s, 2, 1, None, &mut rng_from(1)).is_err());
    }

    #[test]
    fn policy_kind_serde() {
        let p: PolicyKind = toml::from_str("tag = \"stationary_se\"\nc0 = 2.0").unwrap();
        assert_eq!(p, PolicyKind::StationarySe { c0: 2.0, eviction_mode: EvictionMode::Dyadic });
        let p: PolicyKind = toml::from_str("tag = \"cmeta\"\nreplays = false").unwrap();
        assert_eq!(p.label(), "cmeta");
        assert!(toml::from_str::<PolicyKind>("tag = \"stationary_se\"\nreplays = true").is_err());
    }
}
