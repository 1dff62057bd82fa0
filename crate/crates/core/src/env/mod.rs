//! Piecewise-stationary Lipschitz contextual bandit environments.
//!
//! An [`Environment`] is a list of phases; inside a phase every arm has a fixed
//! mean-reward function made of a constant base plus disjoint tent-shaped bumps.
//! The symbolic representation makes function identity, Lipschitz constants and
//! ranges checkable without sampling.

mod construct;
mod measure;
pub use measure::default_tv_resolution;

pub use construct::{
    hard_grid_size, make_flip_env, make_global_shift_env, make_local_shift_env,
    make_stationary_hard, make_tv_budget_env, piecewise_constant, tv_phase_length, C_PHI,
};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::Context;

/// Tent bump `sign * amplitude * max(0, 1 - 2M |x - q|_inf)` centered on grid
/// cell `cell` of a regular `M`-grid. Its support is exactly that cell and it
/// vanishes on the cell boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub cell: Vec<u32>,
    pub cells_per_side: u32,
    pub sign: i8,
    pub amplitude: f64,
}

impl Bump {
    pub fn center(&self) -> Vec<f64> {
        let m = self.cells_per_side as f64;
        self.cell.iter().map(|&c| (c as f64 + 0.5) / m).collect()
    }

    /// Lipschitz constant of the bump in the sup-norm.
    pub fn slope(&self) -> f64 {
        2.0 * self.cells_per_side as f64 * self.amplitude
    }

    pub fn peak(&self) -> f64 {
        self.sign as f64 * self.amplitude
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        let m = self.cells_per_side as f64;
        let mut dist = 0.0f64;
        for (&xi, &c) in x.iter().zip(&self.cell) {
            let q = (c as f64 + 0.5) / m;
            let dx = (xi - q).abs();
            if dx >= 0.5 / m {
                return 0.0;
            }
            dist = dist.max(dx);
        }
        self.sign as f64 * self.amplitude * (1.0 - 2.0 * m * dist)
    }

    /// Closed supports overlap in their interiors.
    fn overlaps(&self, other: &Bump) -> bool {
        let (ma, mb) = (self.cells_per_side as u64, other.cells_per_side as u64);
        self.cell.iter().zip(&other.cell).all(|(&a, &b)| {
            let (a, b) = (a as u64, b as u64);
            // [a/ma, (a+1)/ma] and [b/mb, (b+1)/mb] have overlapping interiors
            (a + 1) * mb > b * ma && (b + 1) * ma > a * mb
        })
    }
}

/// Mean-reward function of one arm in one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardFunction {
    pub base: f64,
    #[serde(default)]
    pub bumps: Vec<Bump>,
}

impl RewardFunction {
    pub fn constant(base: f64) -> Self {
        RewardFunction {
            base,
            bumps: Vec::new(),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.base + self.bumps.iter().map(|b| b.value(x)).sum::<f64>()
    }

    /// Largest bump slope; supports are disjoint so this is the Lipschitz constant.
    pub fn lipschitz_constant(&self) -> f64 {
        self.bumps.iter().map(Bump::slope).fold(0.0, f64::max)
    }

    /// Exact range `[min, max]` of the function over the cube.
    pub fn range(&self) -> (f64, f64) {
        let hi = self.bumps.iter().map(Bump::peak).fold(0.0, f64::max);
        let lo = self.bumps.iter().map(Bump::peak).fold(0.0, f64::min);
        (self.base + lo, self.base + hi)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidEnvironment(msg));
        if !(0.0..=1.0).contains(&self.base) {
            return bad(format!("base {} outside [0,1]", self.base));
        }
        for b in &self.bumps {
            if b.cell.len() != d {
                return bad(format!("bump dimension {} != {d}", b.cell.len()));
            }
            if b.cells_per_side == 0 || b.cell.iter().any(|&c| c >= b.cells_per_side) {
                return bad(format!("bump cell {:?} outside its grid", b.cell));
            }
            if b.sign != 1 && b.sign != -1 {
                return bad(format!("bump sign {} must be +-1", b.sign));
            }
            if !(b.amplitude > 0.0) || !b.amplitude.is_finite() {
                return bad(format!("bump amplitude {} must be positive", b.amplitude));
            }
            if b.slope() > 1.0 + 1e-12 {
                return bad(format!("bump slope {} exceeds 1", b.slope()));
            }
        }
        for (i, a) in self.bumps.iter().enumerate() {
            if self.bumps[i + 1..].iter().any(|b| a.overlaps(b)) {
                return bad(format!("bump supports overlap at cell {:?}", a.cell));
            }
        }
        let (lo, hi) = self.range();
        if lo < 0.0 || hi > 1.0 {
            return bad(format!("function range [{lo}, {hi}] leaves [0,1]"));
        }
        Ok(())
    }

    /// Canonical form used for function-identity checks.
    fn canonical(&self) -> (u64, Vec<(u32, Vec<u32>, i8, u64)>) {
        let mut bumps: Vec<_> = self
            .bumps
            .iter()
            .map(|b| (b.cells_per_side, b.cell.clone(), b.sign, b.amplitude.to_bits()))
            .collect();
        bumps.sort();
        (self.base.to_bits(), bumps)
    }

    pub fn same_function(&self, other: &RewardFunction) -> bool {
        self.canonical() == other.canonical()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start_round: u64,
    pub arms: Vec<RewardFunction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextModel {
    /// Uniform on `[0,1]^d`.
    Uniform,
    /// A fixed context per round, `contexts[t-1]` at round `t`.
    Fixed { contexts: Vec<Context> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Bernoulli,
    Noiseless,
}

/// One round of data drawn from the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSample {
    pub context: Context,
    pub rewards: Vec<f64>,
    pub means: Vec<f64>,
}

impl RoundSample {
    pub fn best_mean(&self) -> f64 {
        self.means.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Worst gap `max_a' f^a' - f^a` of arm `a` at this round's context.
    pub fn gap(&self, arm: usize) -> f64 {
        self.best_mean() - self.means[arm]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub horizon: u64,
    pub arms: usize,
    pub dim: usize,
    pub noise: NoiseModel,
    pub context_model: ContextModel,
    pub phases: Vec<Phase>,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidEnvironment(msg));
        if self.horizon == 0 {
            return bad("horizon must be positive".into());
        }
        if self.arms == 0 || self.arms > 64 {
            return bad(format!("arm count {} outside 1..=64", self.arms));
        }
        match self.phases.first() {
            Some(p) if p.start_round == 1 => {}
            _ => return bad("first phase must start at round 1".into()),
        }
        for w in self.phases.windows(2) {
            if w[1].start_round <= w[0].start_round {
                return bad("phase starts must be strictly increasing".into());
            }
        }
        if self.phases.last().unwrap().start_round > self.horizon {
            return bad("phase starts after the horizon".into());
        }
        for p in &self.phases {
            if p.arms.len() != self.arms {
                return bad(format!(
                    "phase at {} has {} arms, expected {}",
                    p.start_round,
                    p.arms.len(),
                    self.arms
                ));
            }
            for f in &p.arms {
                f.validate(self.dim)?;
            }
        }
        if let ContextModel::Fixed { contexts } = &self.context_model {
            if contexts.len() as u64 != self.horizon {
                return bad(format!(
                    "fixed context sequence has {} entries, horizon is {}",
                    contexts.len(),
                    self.horizon
                ));
            }
            if contexts.iter().any(|c| c.dim() != self.dim) {
                return bad("fixed context with wrong dimension".into());
            }
        }
        Ok(())
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    /// Index of the phase active at round `t` (1-based rounds).
    pub fn phase_index(&self, t: u64) -> usize {
        self.phases.partition_point(|p| p.start_round <= t) - 1
    }

    fn check_round_arm(&self, t: u64, arm: usize) -> Result<()> {
        if t == 0 || t > self.horizon {
            return Err(Error::RoundOutOfRange {
                round: t,
                horizon: self.horizon,
            });
        }
        if arm >= self.arms {
            return Err(Error::ArmOutOfRange {
                arm,
                arms: self.arms,
            });
        }
        Ok(())
    }

    /// Mean reward `f_t^a(x)`.
    pub fn eval_mean(&self, t: u64, arm: usize, x: &Context) -> Result<f64> {
        self.check_round_arm(t, arm)?;
        Ok(self.phases[self.phase_index(t)].arms[arm].eval(x.coords()))
    }

    /// All arm means at round `t`; `t` must be in range.
    pub fn means(&self, t: u64, x: &Context) -> Vec<f64> {
        let phase = &self.phases[self.phase_index(t)];
        phase.arms.iter().map(|f| f.eval(x.coords())).collect()
    }

    /// Worst gap of arm `a`: `max_a' f_t^a'(x) - f_t^a(x)`.
    pub fn true_gap(&self, t: u64, arm: usize, x: &Context) -> Result<f64> {
        self.check_round_arm(t, arm)?;
        let means = self.means(t, x);
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(best - means[arm])
    }

    /// Context for round `t`, drawing from `rng` under the uniform model.
    pub fn context_at<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> Context {
        match &self.context_model {
            ContextModel::Uniform => {
                Context::new((0..self.dim).map(|_| rng.random::<f64>()).collect())
                    .expect("uniform draw lies in [0,1)")
            }
            ContextModel::Fixed { contexts } => contexts[(t - 1) as usize].clone(),
        }
    }

    pub fn sample_round<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> Result<RoundSample> {
        self.check_round_arm(t, 0)?;
        let context = self.context_at(t, rng);
        Ok(self.sample_at(t, context, rng))
    }

    /// Draw rewards at a given context.
    pub fn sample_at<R: Rng + ?Sized>(&self, t: u64, context: Context, rng: &mut R) -> RoundSample {
        let means = self.means(t, &context);
        let rewards = match self.noise {
            NoiseModel::Noiseless => means.clone(),
            NoiseModel::Bernoulli => means
                .iter()
                .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
                .collect(),
        };
        RoundSample {
            context,
            rewards,
            means,
        }
    }

    /// The full `T`-round data stream: contexts first, then rewards round by round.
    pub fn sample_stream<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<RoundSample> {
        (1..=self.horizon)
            .map(|t| {
                let x = self.context_at(t, rng);
                self.sample_at(t, x, rng)
            })
            .collect()
    }

    /// Rewards for a pre-drawn context sequence.
    pub fn stream_for_contexts<R: Rng + ?Sized>(
        &self,
        contexts: &[Context],
        rng: &mut R,
    ) -> Result<Vec<RoundSample>> {
        if contexts.len() as u64 != self.horizon {
            return Err(Error::LengthMismatch(format!(
                "{} contexts for horizon {}",
                contexts.len(),
                self.horizon
            )));
        }
        Ok(contexts
            .iter()
            .enumerate()
            .map(|(i, x)| self.sample_at(i as u64 + 1, x.clone(), rng))
            .collect())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidEnvironment(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let env: Environment =
            toml::from_str(text).map_err(|e| Error::InvalidEnvironment(e.to_string()))?;
        env.validate()?;
        Ok(env)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let env: Environment = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        env.validate()?;
        Ok(env)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn bump_env() -> Environment {
        let bump = Bump {
            cell: vec![1],
            cells_per_side: 4,
            sign: 1,
            amplitude: 0.125,
        };
        Environment {
            horizon: 10,
            arms: 2,
            dim: 1,
            noise: NoiseModel::Noiseless,
            context_model: ContextModel::Uniform,
            phases: vec![Phase {
                start_round: 1,
                arms: vec![
                    RewardFunction::constant(0.5),
                    RewardFunction {
                        base: 0.5,
                        bumps: vec![bump],
                    },
                ],
            }],
        }
    }

    fn ctx(v: f64) -> Context {
        Context::new(vec![v]).unwrap()
    }

    #[test]
    fn eval_examples() {
        let env = bump_env();
        env.validate().unwrap();
        // center of cell 1 of a 4-grid is 0.375
        assert_eq!(env.eval_mean(1, 1, &ctx(0.375)).unwrap(), 0.625);
        assert_eq!(env.eval_mean(1, 1, &ctx(0.9)).unwrap(), 0.5);
        // vanishes on the cell boundary
        assert_eq!(env.eval_mean(1, 1, &ctx(0.25)).unwrap(), 0.5);
        assert_eq!(env.eval_mean(1, 1, &ctx(0.5)).unwrap(), 0.5);
        assert!(matches!(
            env.eval_mean(0, 0, &ctx(0.1)),
            Err(Error::RoundOutOfRange { .. })
        ));
        assert!(matches!(
            env.eval_mean(11, 0, &ctx(0.1)),
            Err(Error::RoundOutOfRange { .. })
        ));
        assert!(matches!(
            env.eval_mean(1, 2, &ctx(0.1)),
            Err(Error::ArmOutOfRange { .. })
        ));
    }

    #[test]
    fn gap_examples() {
        let env = piecewise_constant(5, 1, vec![(1, vec![0.6, 0.5])], NoiseModel::Noiseless).unwrap();
        assert!((env.true_gap(1, 1, &ctx(0.2)).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(env.true_gap(1, 0, &ctx(0.2)).unwrap(), 0.0);
        let flat = piecewise_constant(5, 1, vec![(1, vec![0.4, 0.4, 0.4])], NoiseModel::Noiseless).unwrap();
        for a in 0..3 {
            assert_eq!(flat.true_gap(3, a, &ctx(0.7)).unwrap(), 0.0);
        }
    }

    #[test]
    fn noiseless_rewards_equal_means() {
        let env = bump_env();
        let mut rng = rng_from(3);
        for t in 1..=10 {
            let s = env.sample_round(t, &mut rng).unwrap();
            assert_eq!(s.rewards, s.means);
        }
    }

    #[test]
    fn bernoulli_extremes_and_mean() {
        let env = piecewise_constant(1, 1, vec![(1, vec![1.0, 0.0, 0.5])], NoiseModel::Bernoulli).unwrap();
        let mut rng = rng_from(11);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = env.sample_round(1, &mut rng).unwrap();
            assert_eq!(s.rewards[0], 1.0);
            assert_eq!(s.rewards[1], 0.0);
            assert!(s.rewards[2] == 0.0 || s.rewards[2] == 1.0);
            sum += s.rewards[2];
        }
        // binomial 4-sigma half width is 4 * 0.5 / sqrt(n) ~ 0.0063 < 0.01
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn validation_rejects_bad_functions() {
        let mut env = bump_env();
        env.phases[0].arms[1].bumps[0].amplitude = 0.2; // slope 1.6
        assert!(env.validate().is_err());

        let mut env = bump_env();
        env.phases[0].arms[1].bumps.push(Bump {
            cell: vec![2],
            cells_per_side: 8,
            sign: -1,
            amplitude: 0.01,
        });
        // cell 2 of 8-grid is [0.25, 0.375] which sits inside cell 1 of 4-grid
        assert!(env.validate().is_err());

        let mut env = bump_env();
        env.phases[0].start_round = 2;
        assert!(env.validate().is_err());

        let mut env = bump_env();
        env.phases[0].arms[0].base = 1.2;
        assert!(env.validate().is_err());
    }

    #[test]
    fn adjacent_cells_do_not_overlap() {
        let a = Bump { cell: vec![0, 1], cells_per_side: 2, sign: 1, amplitude: 0.1 };
        let b = Bump { cell: vec![1, 1], cells_per_side: 2, sign: 1, amplitude: 0.1 };
        let c = Bump { cell: vec![2, 3], cells_per_side: 4, sign: 1, amplitude: 0.1 };
        assert!(!a.overlaps(&b));
        assert!(!a.overlaps(&c));
        assert!(b.overlaps(&c));
    }

    #[test]
    fn toml_round_trip() {
        let env = make_global_shift_env(300, 2, 2, 5).unwrap();
        let text = env.to_toml().unwrap();
        let back = Environment::from_toml(&text).unwrap();
        assert_eq!(env, back);
    }

    #[test]
    fn fixed_context_round_trip() {
        let region = crate::partition::BinId::new(1, &[0]).unwrap();
        let env = make_local_shift_env(50, &region, 2, 1, 9, true).unwrap();
        let back = Environment::from_toml(&env.to_toml().unwrap()).unwrap();
        assert_eq!(env, back);
    }
}
