//! Importance-weighted gap estimates over bins and intervals, and the eviction
//! rule built on them.
//!
//! Every play is recorded once per level in the log of the bin containing its
//! context. A [`BinEventLog`] keeps running `K x K` sums
//! `S[a'][a] = sum |A_s| Y_s 1{pi_s = a'} 1{a in A_s}` so that the estimate
//! `sum_s dhat_s(a', a) = S[a'][a] - S[a][a]` over any interval costs two
//! binary searches.

use std::collections::HashMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{bin_of, level_for_unchecked, side_length, BinId, Context};

/// A single play as seen by the estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayEvent {
    pub round: u64,
    pub arm: usize,
    pub reward: f64,
    /// Bitmask of the candidate set `A_s` the arm was drawn from.
    pub candidates: u64,
}

impl PlayEvent {
    pub fn new(round: u64, arm: usize, reward: f64, candidates: u64) -> Result<Self> {
        if arm >= 64 || candidates & (1 << arm) == 0 {
            return Err(Error::InvalidArgument(format!(
                "played arm {arm} is not in candidate set {candidates:#b}"
            )));
        }
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::InvalidArgument(format!("reward {reward} outside [0,1]")));
        }
        Ok(PlayEvent { round, arm, reward, candidates })
    }

    #[inline]
    pub fn candidate_count(&self) -> u32 {
        self.candidates.count_ones()
    }

    #[inline]
    pub fn has_candidate(&self, arm: usize) -> bool {
        self.candidates >> arm & 1 == 1
    }
}

/// `|A_s| (Y 1{pi = a'} - Y 1{pi = a}) 1{a in A_s}` for one in-bin event.
pub fn iw_gap(event: &PlayEvent, a_prime: usize, a: usize, arms: usize) -> Result<f64> {
    for arm in [a_prime, a] {
        if arm >= arms {
            return Err(Error::ArmOutOfRange { arm, arms });
        }
    }
    Ok(iw_gap_unchecked(event, a_prime, a))
}

#[inline]
fn iw_gap_unchecked(event: &PlayEvent, a_prime: usize, a: usize) -> f64 {
    if a_prime == a || !event.has_candidate(a) {
        return 0.0;
    }
    let w = event.candidate_count() as f64 * event.reward;
    if event.arm == a_prime {
        w
    } else if event.arm == a {
        -w
    } else {
        0.0
    }
}

/// Chronological plays whose context fell in one bin.
#[derive(Clone, Debug)]
pub struct BinEventLog {
    bin: BinId,
    arms: usize,
    events: Vec<PlayEvent>,
    // (len + 1) blocks of arms * arms running sums, row-major in a'.
    prefix: Vec<f64>,
}

impl BinEventLog {
    pub fn new(bin: BinId, arms: usize) -> Self {
        BinEventLog {
            bin,
            arms,
            events: Vec::new(),
            prefix: vec![0.0; arms * arms],
        }
    }

    pub fn bin(&self) -> &BinId {
        &self.bin
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn events(&self) -> &[PlayEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(&mut self, event: PlayEvent) -> Result<()> {
        if event.arm >= self.arms {
            return Err(Error::ArmOutOfRange { arm: event.arm, arms: self.arms });
        }
        if self.events.last().is_some_and(|e| e.round >= event.round) {
            return Err(Error::InvalidArgument(format!(
                "event at round {} is not after the last logged round",
                event.round
            )));
        }
        let kk = self.arms * self.arms;
        let start = self.prefix.len() - kk;
        self.prefix.extend_from_within(start..);
        let w = event.candidate_count() as f64 * event.reward;
        let row = self.prefix.len() - kk + event.arm * self.arms;
        for a in 0..self.arms {
            if event.has_candidate(a) {
                self.prefix[row + a] += w;
            }
        }
        self.events.push(event);
        Ok(())
    }

    /// Indices of events with `s1 <= round <= s2`.
    pub fn range(&self, s1: u64, s2: u64) -> Range<usize> {
        let lo = self.events.partition_point(|e| e.round < s1);
        let hi = self.events.partition_point(|e| e.round <= s2);
        lo..hi.max(lo)
    }

    /// `n_B([s1, s2])`.
    pub fn count(&self, s1: u64, s2: u64) -> u64 {
        self.range(s1, s2).len() as u64
    }

    #[inline]
    fn pair_sum(&self, idx: Range<usize>, a_prime: usize, a: usize) -> f64 {
        let kk = self.arms * self.arms;
        let off = a_prime * self.arms + a;
        self.prefix[idx.end * kk + off] - self.prefix[idx.start * kk + off]
    }

    #[inline]
    fn gap_sum_in(&self, idx: Range<usize>, a_prime: usize, a: usize) -> f64 {
        if a_prime == a {
            return 0.0;
        }
        self.pair_sum(idx.clone(), a_prime, a) - self.pair_sum(idx, a, a)
    }

    /// Largest estimated gap sum of `a` against any challenger on `idx`.
    fn worst_challenger(&self, idx: Range<usize>, a: usize) -> (usize, f64) {
        (0..self.arms)
            .filter(|&b| b != a)
            .map(|b| (b, self.gap_sum_in(idx.clone(), b, a)))
            .fold((a, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
    }
}

/// `sum_{s1 <= s <= s2} dhat_s^B(a', a)` over the log of bin `B`.
pub fn interval_gap_sum(log: &BinEventLog, s1: u64, s2: u64, a_prime: usize, a: usize) -> f64 {
    if s1 > s2 {
        return 0.0;
    }
    log.gap_sum_in(log.range(s1, s2), a_prime, a)
}

/// `sqrt(C0 K log T max(n_B, K log T)) + r n_B` with the natural logarithm.
pub fn eviction_threshold(n_b: u64, r: f64, arms: usize, horizon: u64, c0: f64) -> Result<f64> {
    if horizon < 2 {
        return Err(Error::InvalidArgument("eviction threshold needs T >= 2".into()));
    }
    let klog = arms as f64 * (horizon as f64).ln();
    Ok((c0 * klog * (n_b as f64).max(klog)).sqrt() + r * n_b as f64)
}

/// Parameters of the eviction rule for one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvictionRule {
    pub c0: f64,
    pub arms: usize,
    pub dim: usize,
    pub horizon: u64,
    klog: f64,
}

impl EvictionRule {
    pub fn new(c0: f64, arms: usize, dim: usize, horizon: u64) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::InvalidArgument("eviction rule needs T >= 2".into()));
        }
        if !(2..=64).contains(&arms) {
            return Err(Error::InvalidArgument(format!("arm count {arms} outside 2..=64")));
        }
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::InvalidArgument(format!("C0 = {c0} must be positive")));
        }
        Ok(EvictionRule {
            c0,
            arms,
            dim,
            horizon,
            klog: arms as f64 * (horizon as f64).ln(),
        })
    }

    #[inline]
    pub fn threshold(&self, n_b: u64, r: f64) -> f64 {
        let n = n_b as f64;
        (self.c0 * self.klog * n.max(self.klog)).sqrt() + r * n
    }

    /// Level of the bins tested on an interval of `len` rounds.
    #[inline]
    pub fn level_for_len(&self, len: u64) -> u32 {
        level_for_unchecked(len.max(1), self.arms, self.dim)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionMode {
    /// Every sub-interval of the window.
    Exact,
    /// Intervals `[t - 2^j, t - 1]` plus the whole window.
    #[default]
    Dyadic,
}

/// Does the log's bin evict arm `a` on `[s1, s2]`?
pub fn eviction_test(log: &BinEventLog, s1: u64, s2: u64, a: usize, rule: &EvictionRule) -> Result<bool> {
    if s1 > s2 {
        return Ok(false);
    }
    let expected = rule.level_for_len(s2 - s1 + 1);
    if log.bin.level != expected {
        return Err(Error::LevelMismatch { bin_level: log.bin.level, expected });
    }
    if a >= rule.arms {
        return Err(Error::ArmOutOfRange { arm: a, arms: rule.arms });
    }
    let idx = log.range(s1, s2);
    let n = idx.len() as u64;
    let (_, stat) = log.worst_challenger(idx, a);
    Ok(stat > rule.threshold(n, log.bin.side_length()))
}

/// Intervals `[t - 2^j, t - 1]` for `j = 1..=floor(log2(t - start))` plus `[start, t - 1]`.
pub fn dyadic_intervals(t: u64, start: u64) -> Vec<(u64, u64)> {
    if t <= start {
        return Vec::new();
    }
    let len = t - start;
    let mut out: Vec<(u64, u64)> = (1..=len.ilog2()).map(|j| (t - (1 << j), t - 1)).collect();
    if !len.is_power_of_two() || len == 1 {
        out.push((start, t - 1));
    }
    out
}

/// Every sub-interval of `[start, t - 1]`.
pub fn exact_intervals(t: u64, start: u64) -> Vec<(u64, u64)> {
    (start..t).flat_map(|s1| (s1..t).map(move |s2| (s1, s2))).collect()
}

pub fn window_intervals(t: u64, start: u64, mode: EvictionMode) -> Vec<(u64, u64)> {
    match mode {
        EvictionMode::Exact => exact_intervals(t, start),
        EvictionMode::Dyadic => dyadic_intervals(t, start),
    }
}

/// Evidence that triggered an eviction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvictionWitness {
    pub arm: usize,
    pub challenger: usize,
    pub bin: BinId,
    pub start: u64,
    pub end: u64,
    pub in_bin: u64,
    pub statistic: f64,
    pub threshold: f64,
}

/// Per-level bin logs for one run.
#[derive(Clone, Debug)]
pub struct LevelLogs {
    arms: usize,
    levels: Vec<HashMap<BinId, BinEventLog>>,
}

impl LevelLogs {
    pub fn new(arms: usize, max_level: u32) -> Self {
        LevelLogs {
            arms,
            levels: vec![HashMap::new(); max_level as usize + 1],
        }
    }

    pub fn max_level(&self) -> u32 {
        self.levels.len() as u32 - 1
    }

    /// Append `event` to the log of the bin containing `x` at every level.
    pub fn record(&mut self, event: PlayEvent, x: &Context) -> Result<()> {
        for (m, logs) in self.levels.iter_mut().enumerate() {
            let bin = bin_of(x, m as u32);
            logs.entry(bin.clone())
                .or_insert_with(|| BinEventLog::new(bin, self.arms))
                .push(event)?;
        }
        Ok(())
    }

    pub fn get(&self, bin: &BinId) -> Option<&BinEventLog> {
        self.levels.get(bin.level as usize)?.get(bin)
    }

    pub fn bins_at(&self, level: u32) -> impl Iterator<Item = &BinEventLog> {
        self.levels.get(level as usize).into_iter().flat_map(|m| m.values())
    }
}

/// Check arms in `mask` on each interval, in the bin containing `x` at the
/// interval's level. Returns the first witness found for each evicted arm.
pub fn scan_intervals(
    logs: &LevelLogs,
    x: &Context,
    intervals: &[(u64, u64)],
    mask: u64,
    rule: &EvictionRule,
) -> Vec<EvictionWitness> {
    let mut pending = mask & full_mask(rule.arms);
    let mut out = Vec::new();
    for &(s1, s2) in intervals {
        if pending == 0 {
            break;
        }
        let level = rule.level_for_len(s2 - s1 + 1).min(logs.max_level());
        let bin = bin_of(x, level);
        let Some(log) = logs.get(&bin) else { continue };
        let idx = log.range(s1, s2);
        let n = idx.len() as u64;
        if n == 0 {
            continue;
        }
        let thr = rule.threshold(n, bin.side_length());
        for a in 0..rule.arms {
            if pending >> a & 1 == 0 {
                continue;
            }
            let (challenger, stat) = log.worst_challenger(idx.clone(), a);
            if stat > thr {
                pending &= !(1 << a);
                out.push(EvictionWitness {
                    arm: a,
                    challenger,
                    bin: bin.clone(),
                    start: s1,
                    end: s2,
                    in_bin: n,
                    statistic: stat,
                    threshold: thr,
                });
            }
        }
    }
    out
}

/// Arms evicted at round `t` for context `x` over the window `[window_start, t)`.
pub fn eviction_scan(
    logs: &LevelLogs,
    t: u64,
    x: &Context,
    window_start: u64,
    mode: EvictionMode,
    rule: &EvictionRule,
) -> u64 {
    let intervals = window_intervals(t, window_start, mode);
    scan_intervals(logs, x, &intervals, full_mask(rule.arms), rule)
        .iter()
        .fold(0, |m, w| m | 1 << w.arm)
}

#[inline]
pub fn full_mask(arms: usize) -> u64 {
    if arms >= 64 {
        u64::MAX
    } else {
        (1u64 << arms) - 1
    }
}

/// Side length of the bins tested on an interval of `len` rounds.
pub fn interval_side_length(len: u64, rule: &EvictionRule) -> f64 {
    side_length(rule.level_for_len(len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(round: u64, arm: usize, reward: f64, candidates: u64) -> PlayEvent {
        PlayEvent::new(round, arm, reward, candidates).unwrap()
    }

    fn brute_sum(log: &BinEventLog, s1: u64, s2: u64, a_prime: usize, a: usize) -> f64 {
        log.events()
            .iter()
            .filter(|e| (s1..=s2).contains(&e.round))
            .map(|e| {
                let inc = e.candidates >> a & 1 == 1;
                let n = e.candidates.count_ones() as f64;
                let mut v = 0.0;
                if inc && e.arm == a_prime {
                    v += n * e.reward;
                }
                if inc && e.arm == a {
                    v -= n * e.reward;
                }
                v
            })
            .sum()
    }

    #[test]
    fn iw_gap_examples() {
        let e = ev(1, 0, 0.8, 0b111);
        assert!((iw_gap(&e, 0, 1, 3).unwrap() - 2.4).abs() < 1e-12);
        assert!((iw_gap(&e, 1, 0, 3).unwrap() + 2.4).abs() < 1e-12);
        let e = ev(1, 0, 0.8, 0b011);
        assert_eq!(iw_gap(&e, 0, 2, 3).unwrap(), 0.0);
        assert_eq!(iw_gap(&e, 1, 1, 3).unwrap(), 0.0);
        assert!(iw_gap(&e, 0, 3, 3).is_err());
    }

    #[test]
    fn play_event_rejects_arm_outside_candidates() {
        assert!(PlayEvent::new(1, 2, 0.5, 0b011).is_err());
        assert!(PlayEvent::new(1, 0, 1.5, 0b011).is_err());
    }

    #[test]
    fn interval_sum_examples() {
        let mut log = BinEventLog::new(BinId::root(1), 2);
        assert_eq!(interval_gap_sum(&log, 1, 10, 0, 1), 0.0);
        log.push(ev(3, 0, 1.0, 0b11)).unwrap();
        assert_eq!(interval_gap_sum(&log, 1, 10, 0, 1), 2.0);
        assert_eq!(interval_gap_sum(&log, 4, 10, 0, 1), 0.0);
        assert_eq!(interval_gap_sum(&log, 5, 4, 0, 1), 0.0);
    }

    #[test]
    fn push_requires_increasing_rounds() {
        let mut log = BinEventLog::new(BinId::root(1), 2);
        log.push(ev(3, 0, 1.0, 0b11)).unwrap();
        assert!(log.push(ev(3, 1, 1.0, 0b11)).is_err());
    }

    #[test]
    fn threshold_examples() {
        // log T = 2, i.e. T = e^2
        let mut rule = EvictionRule::new(1.0, 2, 1, 8).unwrap();
        rule.klog = 2.0 * 2.0;
        assert!((rule.threshold(0, 0.5) - 4.0).abs() < 1e-12);
        assert!((rule.threshold(100, 0.25) - 45.0).abs() < 1e-12);
        let got = eviction_threshold(100, 0.25, 2, 1024, 1.0).unwrap();
        let want = (2.0 * 1024f64.ln() * 100.0).sqrt() + 25.0;
        assert!((got - want).abs() < 1e-12);
        assert!(eviction_threshold(1, 0.5, 2, 1, 1.0).is_err());
    }

    #[test]
    fn rule_threshold_matches_free_function() {
        let rule = EvictionRule::new(1.0, 2, 1, 1024).unwrap();
        for n in [0, 5, 14, 200, 5000] {
            let a = rule.threshold(n, 0.125);
            let b = eviction_threshold(n, 0.125, 2, 1024, 1.0).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constructed_log_evicts() {
        // 200 in-bin plays of a' with reward 1, |A| = 2, T = 1024, C0 = 1, r = 1/8
        let rule = EvictionRule::new(1.0, 2, 1, 1024).unwrap();
        let len = 200;
        let level = rule.level_for_len(len);
        let bin = BinId::new(level, &[0]).unwrap();
        let mut log = BinEventLog::new(bin, 2);
        for s in 1..=len {
            log.push(ev(s, 0, 1.0, 0b11)).unwrap();
        }
        assert_eq!(interval_gap_sum(&log, 1, len, 0, 1), 400.0);
        let thr = eviction_threshold(200, 0.125, 2, 1024, 1.0).unwrap();
        // sqrt(2 ln(1024) 200) + 200/8
        assert!((thr - 77.655).abs() < 1e-3, "{thr}");
        assert_eq!(log.bin().side_length(), 0.125);
        assert!(eviction_test(&log, 1, len, 1, &rule).unwrap());
        assert!(!eviction_test(&log, 1, len, 0, &rule).unwrap());
    }

    #[test]
    fn eviction_test_checks_level() {
        let rule = EvictionRule::new(1.0, 2, 1, 1024).unwrap();
        let log = BinEventLog::new(BinId::root(1), 2);
        assert!(matches!(
            eviction_test(&log, 1, 200, 0, &rule),
            Err(Error::LevelMismatch { .. })
        ));
    }

    #[test]
    fn equal_rewards_never_evict() {
        let rule = EvictionRule::new(1.0, 2, 0, 256).unwrap();
        let mut logs = LevelLogs::new(2, 3);
        let x = Context::new(vec![]).unwrap();
        for t in 1..=256 {
            logs.record(ev(t, (t % 2) as usize, 0.5, 0b11), &x).unwrap();
        }
        for mode in [EvictionMode::Exact, EvictionMode::Dyadic] {
            assert_eq!(eviction_scan(&logs, 257, &x, 1, mode, &rule), 0);
        }
    }

    #[test]
    fn arm_outside_candidates_never_evicted() {
        let rule = EvictionRule::new(0.01, 3, 0, 64).unwrap();
        let mut logs = LevelLogs::new(3, 2);
        let x = Context::new(vec![]).unwrap();
        for t in 1..=64 {
            logs.record(ev(t, 0, 1.0, 0b011), &x).unwrap();
        }
        let evicted = eviction_scan(&logs, 65, &x, 1, EvictionMode::Exact, &rule);
        assert_eq!(evicted & 0b100, 0);
        assert_eq!(evicted & 0b010, 0b010);
    }

    #[test]
    fn dyadic_interval_family() {
        assert_eq!(dyadic_intervals(5, 5), vec![]);
        assert_eq!(dyadic_intervals(6, 5), vec![(5, 5)]);
        assert_eq!(dyadic_intervals(9, 1), vec![(7, 8), (5, 8), (1, 8)]);
        assert_eq!(dyadic_intervals(11, 1), vec![(9, 10), (7, 10), (3, 10), (1, 10)]);
        assert_eq!(exact_intervals(4, 2).len(), 3);
    }

    fn arb_log() -> impl Strategy<Value = BinEventLog> {
        prop::collection::vec((0usize..3, 0.0f64..=1.0, 1u64..8, 1u64..4), 0..50).prop_map(|raw| {
            let mut log = BinEventLog::new(BinId::root(1), 3);
            let mut round = 0;
            for (arm, y, extra, gap) in raw {
                round += gap;
                log.push(ev(round, arm, y, extra | 1 << arm)).unwrap();
            }
            log
        })
    }

    proptest! {
        #[test]
        fn prefix_sums_match_brute_force(log in arb_log(), s1 in 0u64..120, len in 0u64..120, ap in 0usize..3, a in 0usize..3) {
            let s2 = s1 + len;
            let fast = interval_gap_sum(&log, s1, s2, ap, a);
            let slow = brute_sum(&log, s1, s2, ap, a);
            prop_assert!((fast - slow).abs() < 1e-9, "{} vs {}", fast, slow);
        }

        #[test]
        fn antisymmetric_on_shared_candidates(raw in prop::collection::vec((0usize..2, 0.0f64..=1.0), 1..60)) {
            let mut log = BinEventLog::new(BinId::root(0), 3);
            for (i, (arm, y)) in raw.into_iter().enumerate() {
                log.push(ev(i as u64 + 1, arm, y, 0b011)).unwrap();
            }
            let n = log.len() as u64;
            let fwd = interval_gap_sum(&log, 1, n, 0, 1);
            let back = interval_gap_sum(&log, 1, n, 1, 0);
            prop_assert!((fwd + back).abs() < 1e-9);
        }

        #[test]
        fn threshold_monotone(n in 0u64..10_000, dn in 0u64..100, r in 0.0f64..1.0, dr in 0.0f64..1.0, c0 in 0.01f64..10.0) {
            let base = eviction_threshold(n, r, 2, 1000, c0).unwrap();
            prop_assert!(eviction_threshold(n + dn, r, 2, 1000, c0).unwrap() >= base);
            prop_assert!(eviction_threshold(n, r + dr, 2, 1000, c0).unwrap() >= base);
            prop_assert!(eviction_threshold(n, r, 3, 1000, c0).unwrap() >= base);
            prop_assert!(eviction_threshold(n, r, 2, 1000, c0 * 1.5).unwrap() >= base);
        }

        #[test]
        fn dyadic_subset_of_exact(
            plays in prop::collection::vec((0.0f64..1.0, 0usize..2, prop::bool::ANY), 8..96),
            window in 0u64..8,
            c0 in 0.05f64..2.0,
        ) {
            let t = plays.len() as u64 + 1;
            let rule = EvictionRule::new(c0, 2, 1, 128).unwrap();
            let mut logs = LevelLogs::new(2, 4);
            let mut last = Context::new(vec![0.5]).unwrap();
            for (i, (x, arm, win)) in plays.into_iter().enumerate() {
                // arm 0 always pays, arm 1 pays on coin flips
                let y = if arm == 0 || win { 1.0 } else { 0.0 };
                last = Context::new(vec![x]).unwrap();
                logs.record(ev(i as u64 + 1, arm, y, 0b11), &last).unwrap();
            }
            let start = 1 + window.min(t - 2);
            let dy = eviction_scan(&logs, t, &last, start, EvictionMode::Dyadic, &rule);
            let ex = eviction_scan(&logs, t, &last, start, EvictionMode::Exact, &rule);
            prop_assert_eq!(dy & !ex, 0);
        }
    }
}
