//! CMETA: episodes of an adaptively binned elimination base algorithm with
//! randomly scheduled replays and a master candidate set that triggers
//! restarts.
//!
//! Recursion is unrolled into an explicit stack of base-algorithm frames. A
//! frame's eviction step runs after any replay it launched has returned, so a
//! child fully preempts its parent and the parent resumes at the current round.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::RoundSample;
use crate::error::{Error, Result};
use crate::estimate::{
    full_mask, scan_intervals, window_intervals, EvictionMode, EvictionRule, EvictionWitness,
    LevelLogs, PlayEvent,
};
use crate::partition::{bin_of, level_for_unchecked, max_level, BinId, Context};
use crate::runlog::{EvictionRecord, EvictionScope, ReplayActivation, RunLog};
use crate::seed::unit_hash;

/// Default eviction constant `C0`.
pub const DEFAULT_C0: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmetaConfig {
    pub c0: f64,
    pub eviction_mode: EvictionMode,
    /// Schedule replays.
    pub replays: bool,
    /// Restart when a master set empties. When off, candidate sets never
    /// empty: the least-violating arm is kept instead.
    pub restarts: bool,
}

impl Default for CmetaConfig {
    fn default() -> Self {
        CmetaConfig {
            c0: DEFAULT_C0,
            eviction_mode: EvictionMode::Dyadic,
            replays: true,
            restarts: true,
        }
    }
}

fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Replay lengths `2, 4, ..., 2^ceil(log2 T)`.
pub fn replay_lengths(horizon: u64) -> impl DoubleEndedIterator<Item = u64> {
    (1..=ceil_log2(horizon)).map(|j| 1u64 << j)
}

#[inline]
fn replay_probability_unchecked(m: u64, elapsed: u64, d: usize) -> f64 {
    let e = (2 + d) as f64;
    let p = (1.0 / m as f64).powf(1.0 / e) * (1.0 / elapsed as f64).powf((1 + d) as f64 / e);
    p.min(1.0)
}

/// `P(Z_{m,s} = 1) = (1/m)^(1/(2+d)) (1/(s - t_l))^((1+d)/(2+d))`.
pub fn replay_probability(m: u64, s: u64, t_ell: u64, d: usize) -> Result<f64> {
    if s <= t_ell {
        return Err(Error::InvalidArgument(format!("replay round {s} not after episode start {t_ell}")));
    }
    if m < 2 || !m.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("replay length {m} is not a power of two >= 2")));
    }
    Ok(replay_probability_unchecked(m, s - t_ell, d))
}

/// `sum_{t < T} sum_m (1/m)^(1/(2+d)) (1/t)^((1+d)/(2+d)) m^((1+d)/(2+d))`.
pub fn expected_replay_overhead(horizon: u64, d: usize) -> f64 {
    let e = (2 + d) as f64;
    let m_part: f64 = replay_lengths(horizon)
        .map(|m| (m as f64).powf(d as f64 / e))
        .sum();
    let t_part: f64 = (1..horizon)
        .map(|t| (t as f64).powf(-((1 + d) as f64) / e))
        .sum();
    m_part * t_part
}

/// Mean and variance of the number of rounds `s in (t_l, T]` at which some
/// replay fires.
pub fn expected_replay_activations(horizon: u64, t_ell: u64, d: usize) -> (f64, f64) {
    (t_ell + 1..=horizon).fold((0.0, 0.0), |(mean, var), s| {
        let none: f64 = replay_lengths(horizon)
            .map(|m| 1.0 - replay_probability_unchecked(m, s - t_ell, d))
            .product();
        let q = 1.0 - none;
        (mean + q, var + q * (1.0 - q))
    })
}

/// Lazily realized `Z_{m,s}` for one episode.
#[derive(Clone, Copy, Debug)]
pub struct ReplaySchedule {
    pub seed: u64,
    pub episode: u32,
    pub t_ell: u64,
    pub horizon: u64,
    pub dim: usize,
}

impl ReplaySchedule {
    pub fn fires(&self, m: u64, s: u64) -> bool {
        s > self.t_ell
            && unit_hash(self.seed, &[self.episode as u64, m, s])
                < replay_probability_unchecked(m, s - self.t_ell, self.dim)
    }

    /// Largest `m` with `Z_{m,s} = 1`.
    pub fn max_length(&self, s: u64) -> Option<u64> {
        replay_lengths(self.horizon).rev().find(|&m| self.fires(m, s))
    }
}

/// Sparse per-bin candidate sets; an absent bin holds every arm.
#[derive(Clone, Debug)]
pub struct ArmSets {
    full: u64,
    sets: HashMap<BinId, u64>,
}

impl ArmSets {
    pub fn new(arms: usize) -> Self {
        ArmSets {
            full: full_mask(arms),
            sets: HashMap::new(),
        }
    }

    /// Stored set of `bin` alone.
    pub fn own(&self, bin: &BinId) -> u64 {
        self.sets.get(bin).copied().unwrap_or(self.full)
    }

    pub fn materialized(&self) -> usize {
        self.sets.len()
    }

    /// Intersection over `bin` and its materialized ancestors.
    pub fn refined(&self, bin: &BinId) -> u64 {
        if self.sets.is_empty() {
            return self.full;
        }
        (0..=bin.level).fold(self.full, |m, l| m & self.own(&bin.ancestor_at(l)))
    }

    /// As [`ArmSets::refined`] but skipping, root first, any ancestor that
    /// would leave the set empty.
    pub fn refined_nonempty(&self, bin: &BinId) -> u64 {
        if self.sets.is_empty() {
            return self.full;
        }
        (0..=bin.level).fold(self.full, |m, l| {
            let next = m & self.own(&bin.ancestor_at(l));
            if next == 0 {
                m
            } else {
                next
            }
        })
    }

    /// Refine `bin` and write the result back if it is materialized.
    pub fn refine(&mut self, bin: &BinId) -> u64 {
        let mask = self.refined(bin);
        if let Some(s) = self.sets.get_mut(bin) {
            *s = mask;
        }
        mask
    }

    pub fn set(&mut self, bin: &BinId, mask: u64) {
        self.sets.insert(bin.clone(), mask);
    }

    pub fn clear(&mut self) {
        self.sets.clear();
    }
}

/// Refined candidate set of `bin` for the base instance; the master set is
/// refined the same way and kept separate.
pub fn active_arm_set(base: &mut ArmSets, master: &mut ArmSets, bin: &BinId) -> u64 {
    master.refine(bin);
    base.refine(bin)
}

struct Frame {
    t_start: u64,
    m0: u64,
    depth: u32,
    instance: u32,
    sets: ArmSets,
}

struct EvictCtx<'a> {
    logs: &'a LevelLogs,
    rule: &'a EvictionRule,
    mode: EvictionMode,
    restarts: bool,
    t: u64,
    t_ell: u64,
    episode: u32,
}

fn mask_of(witnesses: &[EvictionWitness]) -> u64 {
    witnesses.iter().fold(0, |m, w| m | 1 << w.arm)
}

/// Eviction and refinement for `frame` in `bin`; true if the master set of
/// `bin` is empty afterwards.
fn evict(
    cx: &EvictCtx,
    frame: &mut Frame,
    master: &mut ArmSets,
    x: &Context,
    bin: &BinId,
    records: &mut Vec<EvictionRecord>,
) -> bool {
    let record = |scope, witness: &EvictionWitness| EvictionRecord {
        round: cx.t,
        episode: cx.episode,
        depth: frame.depth,
        scope,
        play_bin: bin.clone(),
        witness: witness.clone(),
    };

    let current = if cx.restarts {
        frame.sets.refined(bin)
    } else {
        frame.sets.refined_nonempty(bin)
    };
    let intervals = window_intervals(cx.t, frame.t_start, cx.mode);
    let base_w = scan_intervals(cx.logs, x, &intervals, current, cx.rule);
    let mut base_evicted = mask_of(&base_w);
    if base_evicted != 0 {
        let mut keep = current & !base_evicted;
        if keep == 0 && !cx.restarts {
            let least = base_w
                .iter()
                .min_by(|a, b| {
                    (a.statistic - a.threshold).total_cmp(&(b.statistic - b.threshold))
                })
                .expect("non-empty witness list");
            keep = 1 << least.arm;
            base_evicted &= !keep;
        }
        frame.sets.set(bin, keep);
        records.extend(
            base_w
                .iter()
                .filter(|w| base_evicted >> w.arm & 1 == 1)
                .map(|w| record(EvictionScope::Base, w)),
        );
    }
    if !cx.restarts {
        let mask = frame.sets.refined_nonempty(bin);
        if frame.sets.sets.contains_key(bin) {
            frame.sets.set(bin, mask);
        }
        return false;
    }
    frame.sets.refine(bin);

    let m_current = master.refined(bin);
    let intervals = window_intervals(cx.t, cx.t_ell, cx.mode);
    let master_w = scan_intervals(cx.logs, x, &intervals, m_current & !base_evicted, cx.rule);
    let inherited = base_evicted & m_current;
    let m_evicted = mask_of(&master_w) | inherited;
    if m_evicted != 0 {
        master.set(bin, m_current & !m_evicted);
        records.extend(
            base_w
                .iter()
                .filter(|w| inherited >> w.arm & 1 == 1)
                .chain(&master_w)
                .map(|w| record(EvictionScope::Master, w)),
        );
    }
    master.refine(bin) == 0
}

#[inline]
fn nth_set_bit(mut mask: u64, n: u32) -> usize {
    for _ in 0..n {
        mask &= mask - 1;
    }
    mask.trailing_zeros() as usize
}

/// Uniform draw from a non-empty arm mask.
pub(crate) fn uniform_from<R: Rng + ?Sized>(mask: u64, rng: &mut R) -> usize {
    debug_assert!(mask != 0);
    nth_set_bit(mask, rng.random_range(0..mask.count_ones()))
}

/// Run CMETA over a pre-drawn data stream of `T = stream.len()` rounds.
///
/// The first draw from `rng` seeds the replay schedule; the rest select arms.
pub fn run_cmeta<R: Rng + ?Sized>(
    stream: &[RoundSample],
    arms: usize,
    dim: usize,
    config: &CmetaConfig,
    rng: &mut R,
) -> Result<RunLog> {
    run_with_label(stream, arms, dim, config, rng, "cmeta")
}

pub(crate) fn run_with_label<R: Rng + ?Sized>(
    stream: &[RoundSample],
    arms: usize,
    dim: usize,
    config: &CmetaConfig,
    rng: &mut R,
    label: &str,
) -> Result<RunLog> {
    let horizon = stream.len() as u64;
    if horizon == 0 {
        return Err(Error::InvalidArgument("empty data stream".into()));
    }
    if let Some(s) = stream.iter().find(|s| s.rewards.len() != arms || s.context.dim() != dim) {
        return Err(Error::LengthMismatch(format!(
            "sample with {} arms in dimension {}, expected {arms} and {dim}",
            s.rewards.len(),
            s.context.dim()
        )));
    }
    let rule = EvictionRule::new(config.c0, arms, dim, horizon.max(2))?;
    let replay_seed: u64 = rng.random();
    let mut logs = LevelLogs::new(arms, max_level(horizon, arms, dim));
    let mut log = RunLog::new(label, horizon, arms, dim);
    let mut master = ArmSets::new(arms);
    let mut instances = 0u32;
    let mut episode = 0u32;
    let mut t = 1u64;

    while t <= horizon {
        let t_ell = t;
        if episode > 0 {
            log.episode_starts.push(t_ell);
        }
        master.clear();
        let schedule = ReplaySchedule { seed: replay_seed, episode, t_ell, horizon, dim };
        let mut stack = vec![Frame {
            t_start: t_ell,
            m0: horizon + 1 - t_ell,
            depth: 0,
            instance: instances,
            sets: ArmSets::new(arms),
        }];
        instances += 1;

        while let Some(frame) = stack.last_mut() {
            if t > frame.t_start + frame.m0 || t > horizon {
                stack.pop();
                continue;
            }

            let sample = &stream[(t - 1) as usize];
            let level = level_for_unchecked(t - frame.t_start + 1, arms, dim);
            let bin = bin_of(&sample.context, level);
            let mut candidates = if config.restarts {
                frame.sets.refine(&bin)
            } else {
                frame.sets.refined_nonempty(&bin)
            };
            if candidates == 0 {
                candidates = frame.sets.refined_nonempty(&bin);
            }
            let arm = uniform_from(candidates, rng);
            let event = PlayEvent::new(t, arm, sample.rewards[arm], candidates)?;
            logs.record(event, &sample.context)?;
            log.push_play(sample, episode, level, bin.clone(), candidates, arm, frame.depth, frame.instance);
            t += 1;
            let cx = EvictCtx {
                logs: &logs,
                rule: &rule,
                mode: config.eviction_mode,
                restarts: config.restarts,
                t,
                t_ell,
                episode,
            };
            if evict(&cx, frame, &mut master, &sample.context, &bin, &mut log.evictions) {
                break;
            }
            let depth = frame.depth;

            if config.replays && t <= horizon {
                if let Some(m) = schedule.max_length(t) {
                    log.replays.push(ReplayActivation { round: t, length: m, depth: depth + 1, episode });
                    stack.push(Frame {
                        t_start: t,
                        m0: m,
                        depth: depth + 1,
                        instance: instances,
                        sets: ArmSets::new(arms),
                    });
                    instances += 1;
                }
            }
        }
        episode += 1;
    }
    Ok(log)
}
