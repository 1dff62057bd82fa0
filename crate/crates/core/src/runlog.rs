//! Per-round trace of a policy run.

use serde::{Deserialize, Serialize};

use crate::env::RoundSample;
use crate::error::{Error, Result};
use crate::estimate::EvictionWitness;
use crate::partition::{BinId, Context};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: u64,
    pub context: Context,
    pub episode: u32,
    pub level: u32,
    pub bin: BinId,
    /// Candidate set the arm was drawn from.
    pub candidates: u64,
    pub arm: usize,
    pub reward: f64,
    pub replay_depth: u32,
    /// Base-Alg instance that played the round, numbered in activation order.
    pub instance: u32,
    /// True worst gap of the played arm at this round.
    pub gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayActivation {
    pub round: u64,
    pub length: u64,
    /// Depth of the new replay; the episode's base instance has depth 0.
    pub depth: u32,
    pub episode: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvictionScope {
    Base,
    Master,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvictionRecord {
    /// Round `t` at which the eviction step ran (one past the play round).
    pub round: u64,
    pub episode: u32,
    pub depth: u32,
    pub scope: EvictionScope,
    /// Bin whose candidate set lost the arm.
    pub play_bin: BinId,
    pub witness: EvictionWitness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub policy: String,
    pub horizon: u64,
    pub arms: usize,
    pub dim: usize,
    pub rows: Vec<RoundRecord>,
    /// `t_l` of every episode; the first is 1.
    pub episode_starts: Vec<u64>,
    pub replays: Vec<ReplayActivation>,
    pub evictions: Vec<EvictionRecord>,
}

impl RunLog {
    pub(crate) fn new(policy: &str, horizon: u64, arms: usize, dim: usize) -> Self {
        RunLog {
            policy: policy.to_string(),
            horizon,
            arms,
            dim,
            rows: Vec::with_capacity(horizon as usize),
            episode_starts: vec![1],
            replays: Vec::new(),
            evictions: Vec::new(),
        }
    }

    /// Record the play at round `rows.len() + 1` against its sample.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn push_play(
        &mut self,
        sample: &RoundSample,
        episode: u32,
        level: u32,
        bin: BinId,
        candidates: u64,
        arm: usize,
        replay_depth: u32,
        instance: u32,
    ) {
        self.rows.push(RoundRecord {
            t: self.rows.len() as u64 + 1,
            context: sample.context.clone(),
            episode,
            level,
            bin,
            candidates,
            arm,
            reward: sample.rewards[arm],
            replay_depth,
            instance,
            gap: sample.gap(arm),
        });
    }

    pub fn episode_count(&self) -> usize {
        self.episode_starts.len()
    }

    /// Episodes `[t_l, t_(l+1)]` that ended with a restart.
    pub fn completed_episodes(&self) -> Vec<(u64, u64)> {
        self.episode_starts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn instant_regret(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gap).collect()
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.rows
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r.gap;
                Some(*acc)
            })
            .collect()
    }

    pub fn total_regret(&self) -> f64 {
        self.rows.iter().map(|r| r.gap).sum()
    }

    pub fn contexts(&self) -> Vec<Context> {
        self.rows.iter().map(|r| r.context.clone()).collect()
    }

    /// Structural invariants: `T` rows in order, played arm in its candidate
    /// set, non-decreasing episodes, consistent episode starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("run log: {m}")));
        if self.rows.len() as u64 != self.horizon {
            return bad(format!("{} rows for horizon {}", self.rows.len(), self.horizon));
        }
        let mut episode = 0;
        for (i, r) in self.rows.iter().enumerate() {
            if r.t != i as u64 + 1 {
                return bad(format!("row {i} has round {}", r.t));
            }
            if r.candidates >> r.arm & 1 == 0 {
                return bad(format!("round {} played arm outside its candidate set", r.t));
            }
            if r.episode < episode {
                return bad(format!("episode index decreases at round {}", r.t));
            }
            episode = r.episode;
            if self.episode_starts.get(r.episode as usize).is_none_or(|&s| s > r.t) {
                return bad(format!("round {} precedes its episode start", r.t));
            }
        }
        if self.episode_starts.first() != Some(&1)
            || self.episode_starts.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("episode starts must begin at 1 and increase".into());
        }
        Ok(())
    }
}
