//! Non-stationarity measures: global shift count, total-variation bound and
//! sampled Lipschitz ratios.

use rand::Rng;

use super::Environment;
use crate::error::{Error, Result};

/// Grid resolution per axis used when none is given.
pub fn default_tv_resolution(d: usize) -> usize {
    match d {
        0 | 1 => 1024,
        2 => 128,
        3 => 32,
        _ => 8,
    }
}

/// Midpoints of a regular `g^d` grid.
fn midpoints(g: usize, d: usize) -> Vec<Vec<f64>> {
    let total = g.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; d];
            for xi in x.iter_mut() {
                *xi = ((idx % g) as f64 + 0.5) / g as f64;
                idx /= g;
            }
            x
        })
        .collect()
}

impl Environment {
    /// Number of phase boundaries at which some arm's function changes.
    pub fn global_shift_count(&self) -> u64 {
        self.phases
            .windows(2)
            .filter(|w| {
                w[0].arms
                    .iter()
                    .zip(&w[1].arms)
                    .any(|(f, g)| !f.same_function(g))
            })
            .count() as u64
    }

    /// `E_x min(1, sum_a |f_new^a(x) - f_old^a(x)|)` across the boundary into
    /// phase `index`, by midpoint quadrature.
    pub fn boundary_tv(&self, index: usize, resolution: usize) -> Result<f64> {
        if resolution < 1 {
            return Err(Error::InvalidArgument("grid resolution must be >= 1".into()));
        }
        if index == 0 || index >= self.phases.len() {
            return Err(Error::InvalidArgument(format!("no boundary into phase {index}")));
        }
        Ok(self.boundary_tv_on(index, &midpoints(resolution, self.dim)))
    }

    fn boundary_tv_on(&self, index: usize, grid: &[Vec<f64>]) -> f64 {
        let (old, new) = (&self.phases[index - 1], &self.phases[index]);
        if old
            .arms
            .iter()
            .zip(&new.arms)
            .all(|(f, g)| f.same_function(g))
        {
            return 0.0;
        }
        let total: f64 = grid
            .iter()
            .map(|x| {
                let s: f64 = old
                    .arms
                    .iter()
                    .zip(&new.arms)
                    .map(|(f, g)| (f.eval(x) - g.eval(x)).abs())
                    .sum();
                s.min(1.0)
            })
            .sum();
        total / grid.len() as f64
    }

    /// Upper bound on the total variation `V_T` under product-Bernoulli rewards
    /// and a uniform context marginal: the sum over phase boundaries of
    /// `E_x min(1, sum_a |f_t^a(x) - f_(t-1)^a(x)|)`, each by midpoint quadrature
    /// on a `resolution^d` grid.
    pub fn tv_upper_bound(&self, resolution: usize) -> Result<f64> {
        if resolution < 1 {
            return Err(Error::InvalidArgument("grid resolution must be >= 1".into()));
        }
        let grid = midpoints(resolution, self.dim);
        Ok((1..self.phases.len())
            .map(|i| self.boundary_tv_on(i, &grid))
            .sum())
    }

    /// Largest observed `|f(x) - f(x')| / |x - x'|_inf` over random pairs.
    pub fn lipschitz_check<R: Rng + ?Sized>(&self, pairs: usize, rng: &mut R) -> f64 {
        const SCALES: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let phase = &self.phases[rng.random_range(0..self.phases.len())];
            let f = &phase.arms[rng.random_range(0..self.arms)];
            let h = SCALES[rng.random_range(0..SCALES.len())];
            let x: Vec<f64> = (0..self.dim).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|&xi| (xi + h * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0))
                .collect();
            let dist = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if dist > 0.0 {
                worst = worst.max((f.eval(&x) - f.eval(&y)).abs() / dist);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use crate::seed::rng_from;

    #[test]
    fn stationary_has_no_shift_and_no_variation() {
        let env = make_stationary_hard(2000, 1, 4).unwrap();
        assert_eq!(env.global_shift_count(), 0);
        assert_eq!(env.tv_upper_bound(64).unwrap(), 0.0);
    }

    #[test]
    fn tv_rejects_empty_grid() {
        let env = make_stationary_hard(200, 1, 4).unwrap();
        assert!(env.tv_upper_bound(0).is_err());
    }

    #[test]
    fn single_jump_has_closed_form_tv() {
        // one arm jumps by c everywhere: integrand is c on mass 1
        let env = piecewise_constant(
            10,
            2,
            vec![(1, vec![0.5, 0.3]), (6, vec![0.5, 0.55])],
            NoiseModel::Bernoulli,
        )
        .unwrap();
        assert!((env.tv_upper_bound(8).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bump_flip_tv_matches_integral() {
        // flipping one bump of height A on an M-grid in d = 1 changes the arm by
        // 2A * tent; the tent integrates to 1/(2M), so the TV is A / M
        let make = |sign| RewardFunction {
            base: 0.5,
            bumps: vec![Bump { cell: vec![2], cells_per_side: 4, sign, amplitude: 0.1 }],
        };
        let env = Environment {
            horizon: 10,
            arms: 2,
            dim: 1,
            noise: NoiseModel::Bernoulli,
            context_model: ContextModel::Uniform,
            phases: vec![
                Phase { start_round: 1, arms: vec![RewardFunction::constant(0.5), make(1)] },
                Phase { start_round: 4, arms: vec![RewardFunction::constant(0.5), make(-1)] },
            ],
        };
        assert_eq!(env.global_shift_count(), 1);
        assert!((env.tv_upper_bound(64).unwrap() - 0.1 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn tv_is_additive_over_boundaries() {
        let env = make_global_shift_env(3000, 4, 1, 9).unwrap();
        let total = env.tv_upper_bound(256).unwrap();
        let parts: f64 = (1..env.phases.len())
            .map(|i| env.boundary_tv(i, 256).unwrap())
            .sum();
        assert!((total - parts).abs() < 1e-12);
    }

    #[test]
    fn shift_count_hand_enumeration() {
        // phases: A, A, B -> only the second boundary changes anything
        let env = piecewise_constant(
            9,
            1,
            vec![(1, vec![0.2, 0.8]), (4, vec![0.2, 0.8]), (7, vec![0.8, 0.2])],
            NoiseModel::Noiseless,
        )
        .unwrap();
        assert_eq!(env.global_shift_count(), 1);
    }

    #[test]
    fn global_shift_count_bounded_by_construction() {
        for seed in 0..10 {
            let env = make_global_shift_env(600, 5, 1, seed).unwrap();
            assert!(env.global_shift_count() <= 5);
        }
    }

    #[test]
    fn constant_function_has_zero_ratio() {
        let env = piecewise_constant(5, 2, vec![(1, vec![0.3, 0.9])], NoiseModel::Noiseless).unwrap();
        assert_eq!(env.lipschitz_check(1000, &mut rng_from(1)), 0.0);
    }

    #[test]
    fn unit_slope_bump_approaches_one() {
        let env = Environment {
            horizon: 1,
            arms: 1,
            dim: 1,
            noise: NoiseModel::Noiseless,
            context_model: ContextModel::Uniform,
            phases: vec![Phase {
                start_round: 1,
                arms: vec![RewardFunction {
                    base: 0.25,
                    bumps: vec![Bump { cell: vec![0], cells_per_side: 1, sign: 1, amplitude: 0.5 }],
                }],
            }],
        };
        env.validate().unwrap();
        let ratio = env.lipschitz_check(20_000, &mut rng_from(2));
        assert!(ratio <= 1.0 + 1e-9);
        assert!(ratio > 0.99);
    }

    #[test]
    fn hard_instances_are_lipschitz() {
        for d in 1..=2 {
            let env = make_global_shift_env(5000, 3, d, 17).unwrap();
            assert!(env.lipschitz_check(10_000, &mut rng_from(5)) <= 1.0 + 1e-9);
        }
    }
}
