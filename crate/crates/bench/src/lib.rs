//! Shared fixtures for the benchmarks in `benches/`.

use rand::Rng;
use shiftlab::env::{make_flip_env, make_stationary_hard};
use shiftlab::estimate::{full_mask, LevelLogs, PlayEvent};
use shiftlab::seed::rng_from;
use shiftlab::{max_level, Context, RoundSample};

/// Bernoulli stream from the stationary hard instance with `d = 1`.
pub fn hard_stream(horizon: u64, seed: u64) -> Vec<RoundSample> {
    let env = make_stationary_hard(horizon, 1, seed).expect("valid hard instance");
    env.sample_stream(&mut rng_from(seed + 1))
}

/// Two-arm stream whose best arm flips `shifts` times.
pub fn flip_stream(horizon: u64, shifts: u64, seed: u64) -> Vec<RoundSample> {
    let env = make_flip_env(horizon, 2, shifts, 0.8, 1, seed).expect("valid flip instance");
    env.sample_stream(&mut rng_from(seed + 1))
}

/// Level logs of uniform play over both arms of `stream`.
pub fn uniform_logs(stream: &[RoundSample]) -> LevelLogs {
    let horizon = stream.len() as u64;
    let mut logs = LevelLogs::new(2, max_level(horizon, 2, 1));
    let mut rng = rng_from(7);
    for (i, s) in stream.iter().enumerate() {
        let arm = rng.random_range(0..2);
        let event = PlayEvent::new(i as u64 + 1, arm, s.rewards[arm], full_mask(2)).expect("valid event");
        logs.record(event, &s.context).expect("increasing rounds");
    }
    logs
}

pub fn contexts(stream: &[RoundSample]) -> Vec<Context> {
    stream.iter().map(|s| s.context.clone()).collect()
}
