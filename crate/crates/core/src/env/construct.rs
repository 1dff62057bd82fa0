//! Environment constructions: stationary hard instances, their concatenations,
//! total-variation budget families, localized flips and global flips.

use rand::Rng;

use super::{Bump, ContextModel, Environment, NoiseModel, Phase, RewardFunction};
use crate::error::{Error, Result};
use crate::partition::{bin_of, BinId, Context};
use crate::seed::rng_from;

/// Bump height constant of the hard family.
pub const C_PHI: f64 = 0.25;

/// Grid size `M = ceil((n / 3e)^(1/(2+d)))` of the hard family over `n` rounds.
pub fn hard_grid_size(n: u64, d: usize) -> u32 {
    let raw = (n as f64 / (3.0 * std::f64::consts::E)).powf(1.0 / (2 + d) as f64);
    (raw.ceil() as u32).max(1)
}

/// Arm 0 is the constant `1/2`; arm 1 is `1/2 + sum_j w_j phi_j` with uniform signs.
fn hard_arms<R: Rng + ?Sized>(n: u64, d: usize, rng: &mut R) -> Vec<RewardFunction> {
    let m = hard_grid_size(n, d);
    let amplitude = C_PHI / m as f64;
    let total = (m as usize).pow(d as u32);
    let bumps = (0..total)
        .map(|mut idx| {
            let mut cell = vec![0u32; d];
            for c in cell.iter_mut().rev() {
                *c = (idx % m as usize) as u32;
                idx /= m as usize;
            }
            Bump {
                cell,
                cells_per_side: m,
                sign: if rng.random::<bool>() { 1 } else { -1 },
                amplitude,
            }
        })
        .collect();
    vec![
        RewardFunction::constant(0.5),
        RewardFunction { base: 0.5, bumps },
    ]
}

/// Split `1..=horizon` into `parts` near-equal phases, earliest phases take the remainder.
fn near_equal_starts(horizon: u64, parts: u64) -> Vec<(u64, u64)> {
    let base = horizon / parts;
    let rem = horizon % parts;
    let mut start = 1;
    (0..parts)
        .map(|i| {
            let len = base + u64::from(i < rem);
            let out = (start, len);
            start += len;
            out
        })
        .collect()
}

fn uniform_env(horizon: u64, arms: usize, dim: usize, phases: Vec<Phase>) -> Environment {
    Environment {
        horizon,
        arms,
        dim,
        noise: NoiseModel::Bernoulli,
        context_model: ContextModel::Uniform,
        phases,
    }
}

/// Two-armed stationary hard instance over `n` rounds.
pub fn make_stationary_hard(n: u64, d: usize, seed: u64) -> Result<Environment> {
    if n == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let mut rng = rng_from(seed);
    let arms = hard_arms(n, d, &mut rng);
    let env = uniform_env(n, 2, d, vec![Phase { start_round: 1, arms }]);
    env.validate()?;
    Ok(env)
}

/// Concatenation of `L + 1` independent hard instances of near-equal length.
pub fn make_global_shift_env(horizon: u64, shifts: u64, d: usize, seed: u64) -> Result<Environment> {
    if shifts >= horizon {
        return Err(Error::InvalidArgument(format!(
            "need L < T, got L = {shifts}, T = {horizon}"
        )));
    }
    let mut rng = rng_from(seed);
    let phases = near_equal_starts(horizon, shifts + 1)
        .into_iter()
        .map(|(start_round, len)| Phase {
            start_round,
            arms: hard_arms(len, d, &mut rng),
        })
        .collect();
    let env = uniform_env(horizon, 2, d, phases);
    env.validate()?;
    Ok(env)
}

/// Phase length `ceil((T/V)^((2+d)/(3+d)))` of the total-variation family.
pub fn tv_phase_length(horizon: u64, budget: f64, d: usize) -> u64 {
    let y = (horizon as f64 / budget).powf((2 + d) as f64 / (3 + d) as f64);
    let near = y.round();
    let len = if (near - y).abs() <= 1e-9 * y.max(1.0) { near } else { y.ceil() };
    (len as u64).clamp(1, horizon)
}

/// Hard instances concatenated so that the total-variation bound stays within `V`.
///
/// Below `V < 2 T^(-1/(2+d))` a single stationary phase is returned. Otherwise
/// `L + 1 = floor(rho T / Delta)` phases are used with `rho` halved from 1 until
/// [`Environment::tv_upper_bound`] is at most `V`.
pub fn make_tv_budget_env(horizon: u64, budget: f64, d: usize, seed: u64) -> Result<Environment> {
    if !(budget > 0.0) || budget > horizon as f64 {
        return Err(Error::InvalidArgument(format!(
            "total-variation budget {budget} outside (0, T]"
        )));
    }
    let floor = 2.0 * (horizon as f64).powf(-1.0 / (2 + d) as f64);
    if budget < floor {
        return make_stationary_hard(horizon, d, seed);
    }
    let delta = tv_phase_length(horizon, budget, d);
    let resolution = super::measure::default_tv_resolution(d);
    let mut rho = 1.0f64;
    loop {
        let phases = ((rho * horizon as f64 / delta as f64).floor() as u64).clamp(1, horizon);
        let env = make_global_shift_env(horizon, phases - 1, d, seed)?;
        if phases == 1 || env.tv_upper_bound(resolution)? <= budget {
            return Ok(env);
        }
        rho *= 0.5;
    }
}

/// Best-arm flips confined to a tent bump supported on `region`.
///
/// Arm 0 is constant `1/2`; arm 1 carries a bump on `region` whose sign
/// alternates across `flips + 1` near-equal phases. With `avoid_region` the
/// contexts are a fixed sequence drawn uniformly from the complement of `region`.
pub fn make_local_shift_env(
    horizon: u64,
    region: &BinId,
    flips: u64,
    d: usize,
    seed: u64,
    avoid_region: bool,
) -> Result<Environment> {
    if region.dim() != d {
        return Err(Error::InvalidArgument(format!(
            "region dimension {} != {d}",
            region.dim()
        )));
    }
    if avoid_region && region.is_root() {
        return Err(Error::InvalidArgument(
            "cannot avoid the root region: its complement is empty".into(),
        ));
    }
    if flips >= horizon {
        return Err(Error::InvalidArgument("need flips < T".into()));
    }
    let mut rng = rng_from(seed);
    let cells = 1u32 << region.level;
    let amplitude = (0.5 / cells as f64).min(0.25);
    let first_sign: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let phases = near_equal_starts(horizon, flips + 1)
        .into_iter()
        .enumerate()
        .map(|(i, (start_round, _))| {
            let sign = if i % 2 == 0 { first_sign } else { -first_sign };
            let bump = Bump {
                cell: region.coords.to_vec(),
                cells_per_side: cells,
                sign,
                amplitude,
            };
            Phase {
                start_round,
                arms: vec![
                    RewardFunction::constant(0.5),
                    RewardFunction {
                        base: 0.5,
                        bumps: vec![bump],
                    },
                ],
            }
        })
        .collect();
    let mut env = uniform_env(horizon, 2, d, phases);
    if avoid_region {
        let contexts = (0..horizon)
            .map(|_| loop {
                let x = Context::new((0..d).map(|_| rng.random::<f64>()).collect())
                    .expect("uniform draw lies in [0,1)");
                if bin_of(&x, region.level) != *region {
                    break x;
                }
            })
            .collect();
        env.context_model = ContextModel::Fixed { contexts };
    }
    env.validate()?;
    Ok(env)
}

/// Constant-in-context arms whose best arm rotates across `L + 1` near-equal phases.
///
/// The best arm has mean `1/2 + gap/2`, every other arm `1/2 - gap/2`.
pub fn make_flip_env(
    horizon: u64,
    arms: usize,
    shifts: u64,
    gap: f64,
    d: usize,
    seed: u64,
) -> Result<Environment> {
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(Error::InvalidArgument(format!("gap {gap} outside (0, 1]")));
    }
    if arms < 2 || shifts >= horizon {
        return Err(Error::InvalidArgument("need K >= 2 and L < T".into()));
    }
    let mut rng = rng_from(seed);
    let first = rng.random_range(0..arms);
    let phases = near_equal_starts(horizon, shifts + 1)
        .into_iter()
        .enumerate()
        .map(|(i, (start, _))| {
            let best = (first + i) % arms;
            let means = (0..arms)
                .map(|a| if a == best { 0.5 + gap / 2.0 } else { 0.5 - gap / 2.0 })
                .collect();
            (start, means)
        })
        .collect();
    piecewise_constant(horizon, d, phases, NoiseModel::Bernoulli)
}

/// Environment whose arms are constant within each phase.
pub fn piecewise_constant(
    horizon: u64,
    d: usize,
    phases: Vec<(u64, Vec<f64>)>,
    noise: NoiseModel,
) -> Result<Environment> {
    let arms = phases.first().map_or(0, |p| p.1.len());
    let phases = phases
        .into_iter()
        .map(|(start_round, means)| Phase {
            start_round,
            arms: means.into_iter().map(RewardFunction::constant).collect(),
        })
        .collect();
    let env = Environment {
        noise,
        ..uniform_env(horizon, arms, d, phases)
    };
    env.validate()?;
    Ok(env)
}
