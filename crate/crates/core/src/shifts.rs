//! Post-hoc detection of experienced significant shifts from true gaps.
//!
//! Arm `a` has significant regret in bin `B` on interval `I` when
//! `sum_{s in I} delta_s(a) 1{X_s in B} >= sqrt(K n_B(I)) + r(B) n_B(I)` with
//! `n_B(I) >= 1`. A shift is declared at the earliest round at which every arm
//! has such an interval inside the current phase.
//!
//! The detector walks forward in time. For every `(bin, arm)` it keeps the
//! earliest round at which some interval of the phase witnesses significant
//! regret. Only bins containing the current context gain new in-bin rounds, so
//! with the full interval family only those bins are rescanned. In critical
//! mode an interval may need to stretch past the last in-bin round to reach the
//! length band of its level; such triggers are tentative until that round
//! passes without another visit to the bin.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::env::{Environment, RoundSample};
use crate::error::{Error, Result};
use crate::partition::{bin_of, level_for, level_for_unchecked, max_level, side_length, BinId, Context};

/// Slack for accumulated floating-point sums in the significant-regret test.
pub const SIG_TOLERANCE: f64 = 1e-9;

/// True worst gaps `delta_t(a)` at the experienced contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct GapTable {
    arms: usize,
    gaps: Vec<f64>,
}

impl GapTable {
    /// Build from a row-major `T x K` table of mean rewards.
    pub fn from_means(means: &[Vec<f64>]) -> Result<Self> {
        let arms = means.first().map_or(0, |m| m.len());
        if arms == 0 || means.iter().any(|m| m.len() != arms) {
            return Err(Error::LengthMismatch("ragged or empty mean table".into()));
        }
        let mut gaps = Vec::with_capacity(means.len() * arms);
        for m in means {
            let best = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            gaps.extend(m.iter().map(|v| best - v));
        }
        Ok(GapTable { arms, gaps })
    }

    pub fn from_stream(stream: &[RoundSample]) -> Result<Self> {
        let means: Vec<Vec<f64>> = stream.iter().map(|s| s.means.clone()).collect();
        Self::from_means(&means)
    }

    pub fn from_env(env: &Environment, contexts: &[Context]) -> Result<Self> {
        if contexts.len() as u64 != env.horizon {
            return Err(Error::LengthMismatch(format!(
                "{} contexts for horizon {}",
                contexts.len(),
                env.horizon
            )));
        }
        if let Some(x) = contexts.iter().find(|x| x.dim() != env.dim) {
            return Err(Error::LengthMismatch(format!(
                "context of dimension {} for an environment with d = {}",
                x.dim(),
                env.dim
            )));
        }
        let means: Vec<Vec<f64>> = contexts
            .iter()
            .enumerate()
            .map(|(i, x)| env.means(i as u64 + 1, x))
            .collect();
        Self::from_means(&means)
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn horizon(&self) -> u64 {
        (self.gaps.len() / self.arms) as u64
    }

    /// `delta_t(a)` for 1-based round `t`.
    #[inline]
    pub fn gap(&self, t: u64, arm: usize) -> f64 {
        self.gaps[(t as usize - 1) * self.arms + arm]
    }

    #[inline]
    fn row(&self, t: u64) -> &[f64] {
        let i = (t as usize - 1) * self.arms;
        &self.gaps[i..i + self.arms]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMode {
    /// Every level `0..=m_max`.
    #[default]
    Exact,
    /// Levels `m_I - 1 ..= m_I + 1` with `m_I = level_for(|I|)`.
    Critical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalFamily {
    /// Every sub-interval of the phase.
    #[default]
    All,
    /// `[tau + k 2^j, tau + (k+1) 2^j - 1]`, anchored at the phase start.
    Dyadic,
}

/// Which context each arm must be unsafe at.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpretation {
    /// Every arm unsafe at the single context `X_t` of the shift round.
    #[default]
    CurrentContext,
    /// Each arm unsafe at some experienced context of the phase.
    AnyContext,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub level_mode: LevelMode,
    pub family: IntervalFamily,
    pub interpretation: Interpretation,
}

/// Evidence that one arm was unsafe at a shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftWitness {
    pub arm: usize,
    pub bin: BinId,
    pub start: u64,
    pub end: u64,
    pub in_bin: u64,
    pub gap_sum: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigShiftReport {
    pub horizon: u64,
    pub arms: usize,
    pub dim: usize,
    pub config: DetectorConfig,
    /// `tau_1 < tau_2 < ...`, each in `(1, T]`.
    pub shift_times: Vec<u64>,
    /// One witness per arm for each shift.
    pub witnesses: Vec<Vec<ShiftWitness>>,
}

impl SigShiftReport {
    /// `L~`, the number of experienced significant shifts.
    pub fn count(&self) -> usize {
        self.shift_times.len()
    }

    /// Phases `[tau_i, tau_(i+1))` with `tau_0 = 1` and a final end of `T + 1`.
    pub fn phases(&self) -> Vec<(u64, u64)> {
        let mut bounds = vec![1];
        bounds.extend(&self.shift_times);
        bounds.push(self.horizon + 1);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

#[inline]
fn star_threshold(n: u64, r: f64, arms: usize) -> f64 {
    ((arms as u64 * n) as f64).sqrt() + r * n as f64
}

#[inline]
fn star(sum: f64, n: u64, r: f64, arms: usize) -> bool {
    n >= 1 && sum >= star_threshold(n, r, arms) - SIG_TOLERANCE
}

fn check_inputs(gaps: &GapTable, contexts: &[Context]) -> Result<()> {
    if gaps.horizon() != contexts.len() as u64 {
        return Err(Error::LengthMismatch(format!(
            "{} gap rows for {} contexts",
            gaps.horizon(),
            contexts.len()
        )));
    }
    Ok(())
}

/// Does arm `a` incur significant regret in `bin` on `[s1, s2]`?
pub fn significant_regret(
    gaps: &GapTable,
    contexts: &[Context],
    bin: &BinId,
    interval: (u64, u64),
    arm: usize,
) -> bool {
    let (s1, s2) = interval;
    let hi = s2.min(contexts.len() as u64);
    let (sum, n) = (s1.max(1)..=hi)
        .filter(|&s| bin.contains(&contexts[s as usize - 1]))
        .fold((0.0, 0u64), |(sum, n), s| (sum + gaps.gap(s, arm), n + 1));
    star(sum, n, bin.side_length(), gaps.arms())
}

/// Levels checked for an interval of `len` rounds.
pub fn checked_levels(len: u64, arms: usize, d: usize, mode: LevelMode, m_max: u32) -> std::ops::RangeInclusive<u32> {
    match mode {
        LevelMode::Exact => 0..=m_max,
        LevelMode::Critical => {
            let m = level_for_unchecked(len.max(1), arms, d);
            m.saturating_sub(1)..=(m + 1).min(m_max)
        }
    }
}

/// Is arm `a` unsafe at `x` on `I`: some checked bin containing `x` has
/// significant regret?
pub fn is_unsafe(
    gaps: &GapTable,
    contexts: &[Context],
    x: &Context,
    interval: (u64, u64),
    arm: usize,
    d: usize,
    mode: LevelMode,
) -> bool {
    let m_max = max_level(contexts.len() as u64, gaps.arms(), d);
    let len = interval.1 + 1 - interval.0.min(interval.1 + 1);
    checked_levels(len, gaps.arms(), d, mode, m_max)
        .any(|m| significant_regret(gaps, contexts, &bin_of(x, m), interval, arm))
}

/// Oracle level over a phase `[tau_i, tau_(i+1))`.
pub fn oracle_level(tau: u64, next: u64, arms: usize, d: usize) -> Result<u32> {
    if next <= tau {
        return Err(Error::InvalidArgument(format!("phase end {next} not after start {tau}")));
    }
    level_for(next - tau, arms, d)
}

/// Bin of every round at one level, with dense bin ids.
pub(crate) struct LevelLayout {
    pub cell: Vec<u32>,
    pub pos: Vec<u32>,
    pub rounds: Vec<Vec<u64>>,
    pub ids: Vec<BinId>,
    pub index: HashMap<BinId, u32>,
}

pub(crate) fn layout(contexts: &[Context], level: u32) -> LevelLayout {
    let mut index: HashMap<BinId, u32> = HashMap::new();
    let mut out = LevelLayout {
        cell: Vec::with_capacity(contexts.len()),
        pos: Vec::with_capacity(contexts.len()),
        rounds: Vec::new(),
        ids: Vec::new(),
        index: HashMap::new(),
    };
    for (i, x) in contexts.iter().enumerate() {
        let bin = bin_of(x, level);
        let id = *index.entry(bin.clone()).or_insert_with(|| {
            out.rounds.push(Vec::new());
            out.ids.push(bin);
            out.rounds.len() as u32 - 1
        });
        out.cell.push(id);
        out.pos.push(out.rounds[id as usize].len() as u32);
        out.rounds[id as usize].push(i as u64 + 1);
    }
    out.index = index;
    out
}

/// Length band `[lmin, lmax]` of intervals whose critical band contains `m`.
fn length_band(m: u32, arms: usize, d: usize, mode: LevelMode) -> (u64, u64) {
    if mode == LevelMode::Exact {
        return (1, u64::MAX);
    }
    let cap = |e: u32| -> u64 {
        let shift = e as u64 * (2 + d as u64);
        if shift >= 64 - 7 {
            u64::MAX
        } else {
            (arms as u64).saturating_mul(1 << shift)
        }
    };
    // level_for(n) >= m - 1  <=>  n > K 2^((m-2)(2+d)) for m >= 2
    let lmin = if m >= 2 { cap(m - 2).saturating_add(1) } else { 1 };
    // level_for(n) <= m + 1  <=>  n <= K 2^((m+1)(2+d))
    (lmin, cap(m + 1))
}

#[derive(Clone, Copy, Debug)]
struct Entry {
    stamp: u32,
    e: u64,
    s1: u64,
    s2: u64,
    n: u64,
    sum: f64,
}

const EMPTY: Entry = Entry { stamp: 0, e: u64::MAX, s1: 0, s2: 0, n: 0, sum: 0.0 };

struct Engine<'a> {
    gaps: &'a GapTable,
    arms: usize,
    d: usize,
    horizon: u64,
    m_max: u32,
    mode: LevelMode,
    family: IntervalFamily,
    levels: Vec<LevelLayout>,
    entries: Vec<Vec<Entry>>,
    stamp: u32,
    tau: u64,
    /// Newly matured or created triggers `(e, level, bin, arm)`.
    fresh: Vec<(u32, u32, usize)>,
    tentative: BinaryHeap<Reverse<(u64, u32, u32, usize)>>,
}

impl<'a> Engine<'a> {
    fn new(gaps: &'a GapTable, contexts: &[Context], d: usize, mode: LevelMode, family: IntervalFamily) -> Self {
        let arms = gaps.arms();
        let horizon = contexts.len() as u64;
        let m_max = max_level(horizon, arms.max(2), d);
        let levels: Vec<LevelLayout> = (0..=m_max).map(|m| layout(contexts, m)).collect();
        let entries = levels.iter().map(|l| vec![EMPTY; l.ids.len() * arms]).collect();
        Engine {
            gaps,
            arms,
            d,
            horizon,
            m_max,
            mode,
            family,
            levels,
            entries,
            stamp: 1,
            tau: 1,
            fresh: Vec::new(),
            tentative: BinaryHeap::new(),
        }
    }

    #[inline]
    fn entry(&self, m: u32, b: u32, a: usize) -> Option<&Entry> {
        let e = &self.entries[m as usize][b as usize * self.arms + a];
        (e.stamp == self.stamp && e.e != u64::MAX).then_some(e)
    }

    /// Trigger of `(m, b, a)` settled by round `t`.
    #[inline]
    fn settled(&self, m: u32, b: u32, a: usize, t: u64) -> Option<&Entry> {
        self.entry(m, b, a).filter(|e| e.e <= t)
    }

    fn new_phase(&mut self, tau: u64) {
        self.stamp += 1;
        self.tau = tau;
        self.fresh.clear();
        self.tentative.clear();
    }

    fn offer(&mut self, m: u32, b: u32, a: usize, cand: Entry, t: u64) -> bool {
        let stamp = self.stamp;
        let slot = &mut self.entries[m as usize][b as usize * self.arms + a];
        if slot.stamp == stamp && slot.e <= cand.e {
            return false;
        }
        *slot = Entry { stamp, ..cand };
        if cand.e <= t {
            self.fresh.push((m, b, a));
        } else {
            self.tentative.push(Reverse((cand.e, m, b, a)));
        }
        true
    }

    /// Process round `t` for the current phase.
    fn advance(&mut self, t: u64) {
        match self.family {
            IntervalFamily::All => {
                for m in 0..=self.m_max {
                    self.visit(m, t);
                }
            }
            IntervalFamily::Dyadic => self.dyadic(t),
        }
        while let Some(&Reverse((e, m, b, a))) = self.tentative.peek() {
            if e > t {
                break;
            }
            self.tentative.pop();
            if self.entry(m, b, a).is_some_and(|x| x.e == e) {
                self.fresh.push((m, b, a));
            }
        }
    }

    /// Intervals whose last in-bin round is `t`, in the bin of `X_t` at level `m`.
    fn visit(&mut self, m: u32, t: u64) {
        let lay = &self.levels[m as usize];
        let b = lay.cell[t as usize - 1];
        let idx = lay.pos[t as usize - 1] as usize;
        let r = side_length(m);
        let (lmin, lmax) = length_band(m, self.arms, self.d, self.mode);
        let mut done = vec![false; self.arms];
        for (a, flag) in done.iter_mut().enumerate() {
            let slot = &mut self.entries[m as usize][b as usize * self.arms + a];
            if slot.stamp == self.stamp && slot.e != u64::MAX {
                if slot.e >= t {
                    // would span the in-bin round t
                    *slot = EMPTY;
                } else {
                    *flag = true;
                }
            }
        }
        if done.iter().all(|&x| x) {
            return;
        }
        let rounds = std::mem::take(&mut self.levels[m as usize].rounds[b as usize]);
        let mut sums = vec![0.0; self.arms];
        let mut n = 0u64;
        for i in (0..=idx).rev() {
            let s = rounds[i];
            if s < self.tau || t - s + 1 > lmax {
                break;
            }
            n += 1;
            for (acc, g) in sums.iter_mut().zip(self.gaps.row(s)) {
                *acc += g;
            }
            let prev = if i > 0 { rounds[i - 1] } else { 0 };
            let lo = (prev + 1).max(self.tau);
            let s2 = t.max(lo.saturating_add(lmin - 1));
            if s2 > self.horizon || s2 > s.saturating_add(lmax - 1) {
                continue;
            }
            let s1 = s.min(s2 + 1 - lmin);
            for a in 0..self.arms {
                if done[a] || !star(sums[a], n, r, self.arms) {
                    continue;
                }
                let cand = Entry { stamp: 0, e: s2, s1, s2, n, sum: sums[a] };
                self.offer(m, b, a, cand, t);
                if s2 == t {
                    done[a] = true;
                }
            }
            if done.iter().all(|&x| x) {
                break;
            }
        }
        self.levels[m as usize].rounds[b as usize] = rounds;
    }

    /// Anchored dyadic intervals completing at `t`.
    fn dyadic(&mut self, t: u64) {
        let elapsed = t - self.tau + 1;
        let mut len = 1u64;
        while len <= elapsed {
            if elapsed.is_multiple_of(len) {
                let start = t - len + 1;
                let levels = checked_levels(len, self.arms, self.d, self.mode, self.m_max);
                for m in levels {
                    let mut acc: HashMap<u32, (u64, Vec<f64>)> = HashMap::new();
                    for s in start..=t {
                        let b = self.levels[m as usize].cell[s as usize - 1];
                        let e = acc.entry(b).or_insert_with(|| (0, vec![0.0; self.arms]));
                        e.0 += 1;
                        for (x, g) in e.1.iter_mut().zip(self.gaps.row(s)) {
                            *x += g;
                        }
                    }
                    let r = side_length(m);
                    let mut bins: Vec<_> = acc.into_iter().collect();
                    bins.sort_unstable_by_key(|(b, _)| *b);
                    for (b, (n, sums)) in bins {
                        for (a, &sum) in sums.iter().enumerate() {
                            if self.settled(m, b, a, t).is_none() && star(sum, n, r, self.arms) {
                                let cand = Entry { stamp: 0, e: t, s1: start, s2: t, n, sum };
                                self.offer(m, b, a, cand, t);
                            }
                        }
                    }
                }
            }
            len <<= 1;
        }
    }

    fn witness(&self, m: u32, b: u32, a: usize) -> ShiftWitness {
        let e = self.entry(m, b, a).expect("witness entry present");
        ShiftWitness {
            arm: a,
            bin: self.levels[m as usize].ids[b as usize].clone(),
            start: e.s1,
            end: e.s2,
            in_bin: e.n,
            gap_sum: e.sum,
            threshold: star_threshold(e.n, side_length(m), self.arms),
        }
    }

    /// Per-arm witness at `X_t` if every arm is unsafe there.
    fn unsafe_at_current(&self, t: u64) -> Option<Vec<ShiftWitness>> {
        (0..self.arms)
            .map(|a| {
                (0..=self.m_max).find_map(|m| {
                    let b = self.levels[m as usize].cell[t as usize - 1];
                    self.settled(m, b, a, t).map(|_| self.witness(m, b, a))
                })
            })
            .collect()
    }
}

/// Experienced significant shifts of a gap table and context sequence.
pub fn compute_shifts(
    gaps: &GapTable,
    contexts: &[Context],
    d: usize,
    config: DetectorConfig,
) -> Result<SigShiftReport> {
    check_inputs(gaps, contexts)?;
    if let Some(x) = contexts.iter().find(|x| x.dim() != d) {
        return Err(Error::LengthMismatch(format!("context of dimension {} for d = {d}", x.dim())));
    }
    let horizon = contexts.len() as u64;
    let arms = gaps.arms();
    let mut engine = Engine::new(gaps, contexts, d, config.level_mode, config.family);
    let mut report = SigShiftReport {
        horizon,
        arms,
        dim: d,
        config,
        shift_times: Vec::new(),
        witnesses: Vec::new(),
    };
    let mut flagged: Vec<Option<ShiftWitness>> = vec![None; arms];

    for t in 1..=horizon {
        engine.advance(t);
        if t == engine.tau {
            engine.fresh.clear();
            continue;
        }
        let shift = match config.interpretation {
            Interpretation::CurrentContext => {
                engine.fresh.clear();
                engine.unsafe_at_current(t)
            }
            Interpretation::AnyContext => {
                for (m, b, a) in std::mem::take(&mut engine.fresh) {
                    if flagged[a].is_none() {
                        flagged[a] = Some(engine.witness(m, b, a));
                    }
                }
                flagged.iter().all(Option::is_some).then(|| flagged.iter().flatten().cloned().collect())
            }
        };
        if let Some(w) = shift {
            report.shift_times.push(t);
            report.witnesses.push(w);
            flagged.iter_mut().for_each(|f| *f = None);
            engine.new_phase(t);
            engine.advance(t);
            engine.fresh.clear();
        }
    }
    Ok(report)
}

/// Worst-case significant shifts: some point of the cube, rather than the
/// experienced context, must have every arm unsafe. The point is searched on
/// the grid of cells at level `m_max`, and intervals are the anchored dyadic
/// family with every level checked.
pub fn worst_case_shift_count(gaps: &GapTable, contexts: &[Context], d: usize) -> Result<usize> {
    check_inputs(gaps, contexts)?;
    let horizon = contexts.len() as u64;
    let arms = gaps.arms();
    let mut engine = Engine::new(gaps, contexts, d, LevelMode::Exact, IntervalFamily::Dyadic);
    let m_max = engine.m_max;
    let leaves = 1u64.checked_shl(m_max * d as u32).filter(|&n| n <= 1 << 22).ok_or_else(|| {
        Error::InvalidArgument(format!("worst-case grid 2^({m_max} * {d}) too large"))
    })?;
    let mut count = 0;
    for t in 1..=horizon {
        engine.advance(t);
        let changed = !engine.fresh.is_empty();
        engine.fresh.clear();
        if t == engine.tau || !changed {
            continue;
        }
        let hit = (0..leaves).any(|mut idx| {
            let coords: Vec<u32> = (0..d)
                .map(|_| {
                    let c = (idx % (1 << m_max)) as u32;
                    idx >>= m_max;
                    c
                })
                .collect();
            let leaf = BinId::new(m_max, &coords).expect("leaf in range");
            (0..arms).all(|a| {
                (0..=m_max).any(|m| {
                    let anc = leaf.ancestor_at(m);
                    engine.levels[m as usize]
                        .index
                        .get(&anc)
                        .is_some_and(|&b| engine.settled(m, b, a, t).is_some())
                })
            })
        });
        if hit {
            count += 1;
            engine.new_phase(t);
            engine.advance(t);
            engine.fresh.clear();
        }
    }
    Ok(count)
}
