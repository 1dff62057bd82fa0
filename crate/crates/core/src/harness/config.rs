//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::PolicyKind;
use crate::cmeta::{CmetaConfig, DEFAULT_C0};
use crate::env::{
    make_flip_env, make_global_shift_env, make_local_shift_env, make_stationary_hard,
    make_tv_budget_env, Environment, NoiseModel,
};
use crate::error::{Error, Result};
use crate::estimate::EvictionMode;
use crate::partition::BinId;
use crate::shifts::{IntervalFamily, LevelMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    StationaryHard,
    GlobalShift,
    TvBudget,
    LocalShift,
    /// Constant-in-context arms with a rotating best arm.
    GlobalFlip,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub level: u32,
    pub coords: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    #[serde(rename = "T", default)]
    pub horizon: Option<u64>,
    #[serde(default = "one_usize")]
    pub d: usize,
    #[serde(rename = "K", default)]
    pub arms: Option<usize>,
    #[serde(rename = "L", default)]
    pub shifts: Option<u64>,
    #[serde(rename = "V", default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub region: Option<RegionSpec>,
    #[serde(default)]
    pub avoid_region: Option<bool>,
    #[serde(default)]
    pub gap: Option<f64>,
    /// Fixed construction seed; derived per replicate when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise: Option<NoiseModel>,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoName {
    Cmeta,
    OracleRestart,
    StationarySe,
    UniformRandom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSpec {
    pub name: AlgoName,
    #[serde(rename = "C0", default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub eviction_mode: Option<EvictionMode>,
    #[serde(default)]
    pub replays: Option<bool>,
    #[serde(default)]
    pub restarts: Option<bool>,
    /// Interval family searched by the oracle.
    #[serde(default)]
    pub shift_mode: Option<IntervalFamily>,
}

/// Detector settings for the `L~` columns of the summary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default)]
    pub level_mode: LevelMode,
    #[serde(default = "dyadic")]
    pub family: IntervalFamily,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec { level_mode: LevelMode::Exact, family: IntervalFamily::Dyadic }
    }
}

fn dyadic() -> IntervalFamily {
    IntervalFamily::Dyadic
}

fn one_usize() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvSpec,
    #[serde(rename = "algo")]
    pub algos: Vec<AlgoSpec>,
    #[serde(default = "one_u64")]
    pub replicates: u64,
    /// Horizons to sweep; overrides `env.T`.
    #[serde(default)]
    pub sweep: Option<Vec<u64>>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub detector: DetectorSpec,
}

impl AlgoSpec {
    pub fn policy(&self) -> PolicyKind {
        let c0 = self.c0.unwrap_or(DEFAULT_C0);
        let eviction_mode = self.eviction_mode.unwrap_or_default();
        match self.name {
            AlgoName::Cmeta => PolicyKind::Cmeta(CmetaConfig {
                c0,
                eviction_mode,
                replays: self.replays.unwrap_or(true),
                restarts: self.restarts.unwrap_or(true),
            }),
            AlgoName::OracleRestart => PolicyKind::OracleRestart { search: self.shift_mode },
            AlgoName::StationarySe => PolicyKind::StationarySe { c0, eviction_mode },
            AlgoName::UniformRandom => PolicyKind::UniformRandom,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("algo {:?}: {m}", self.name)));
        if let Some(c0) = self.c0 {
            if !(c0 > 0.0 && c0.is_finite()) {
                return bad("C0 must be positive");
            }
        }
        let tuned = self.c0.is_some() || self.eviction_mode.is_some();
        match self.name {
            AlgoName::Cmeta => {}
            AlgoName::StationarySe if self.replays.is_some() || self.restarts.is_some() => {
                return bad("replays and restarts are fixed off");
            }
            AlgoName::OracleRestart | AlgoName::UniformRandom
                if tuned || self.replays.is_some() || self.restarts.is_some() =>
            {
                return bad("takes no estimator parameters");
            }
            _ => {}
        }
        if self.shift_mode.is_some() && self.name != AlgoName::OracleRestart {
            return bad("shift_mode applies to oracle_restart only");
        }
        Ok(())
    }
}

impl EnvSpec {
    /// Arm count of the environments this spec builds.
    pub fn arm_count(&self) -> Result<usize> {
        match self.kind {
            EnvKind::GlobalFlip => Ok(self.arms.unwrap_or(2)),
            EnvKind::File => Ok(Environment::load(self.file_path()?)?.arms),
            _ => Ok(2),
        }
    }

    fn file_path(&self) -> Result<&Path> {
        self.path
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig("env kind file needs a path".into()))
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("env {:?}: {m}", self.kind)));
        let allowed: &[&str] = match self.kind {
            EnvKind::StationaryHard => &["K"],
            EnvKind::GlobalShift => &["K", "L"],
            EnvKind::TvBudget => &["K", "V"],
            EnvKind::LocalShift => &["K", "L", "region", "avoid_region"],
            EnvKind::GlobalFlip => &["K", "L", "gap"],
            EnvKind::File => &["path"],
        };
        let given = [
            ("K", self.arms.is_some()),
            ("L", self.shifts.is_some()),
            ("V", self.budget.is_some()),
            ("region", self.region.is_some()),
            ("avoid_region", self.avoid_region.is_some()),
            ("gap", self.gap.is_some()),
            ("path", self.path.is_some()),
        ];
        for (key, present) in given {
            if present && !allowed.contains(&key) {
                return bad(format!("parameter {key} does not apply"));
            }
        }
        let need = |ok: bool, key: &str| if ok { Ok(()) } else { bad(format!("missing {key}")) };
        match self.kind {
            EnvKind::GlobalShift => need(self.shifts.is_some(), "L")?,
            EnvKind::TvBudget => need(self.budget.is_some(), "V")?,
            EnvKind::LocalShift => {
                need(self.region.is_some(), "region")?;
                need(self.shifts.is_some(), "L")?;
            }
            EnvKind::GlobalFlip => need(self.shifts.is_some(), "L")?,
            EnvKind::File => {
                need(self.path.is_some(), "path")?;
                if self.horizon.is_some() || self.seed.is_some() {
                    return bad("T and seed come from the file".into());
                }
            }
            EnvKind::StationaryHard => {}
        }
        if self.kind != EnvKind::GlobalFlip && self.kind != EnvKind::File && self.arms.is_some_and(|k| k != 2) {
            return bad("this construction has K = 2".into());
        }
        if let Some(k) = self.arms {
            if !(2..=64).contains(&k) {
                return bad(format!("K = {k} outside 2..=64"));
            }
        }
        if let Some(g) = self.gap {
            if !(g > 0.0 && g <= 1.0) {
                return bad(format!("gap {g} outside (0, 1]"));
            }
        }
        if let Some(r) = &self.region {
            if r.coords.len() != self.d {
                return bad(format!("region has {} coordinates for d = {}", r.coords.len(), self.d));
            }
            BinId::new(r.level, &r.coords).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        if self.d > 8 {
            return bad(format!("d = {} too large", self.d));
        }
        Ok(())
    }

    /// Build the environment for horizon `horizon` with construction seed `seed`.
    pub fn build(&self, horizon: u64, seed: u64) -> Result<Environment> {
        let seed = self.seed.unwrap_or(seed);
        let d = self.d;
        let env = match self.kind {
            EnvKind::StationaryHard => make_stationary_hard(horizon, d, seed)?,
            EnvKind::GlobalShift => make_global_shift_env(horizon, self.shifts.unwrap_or(0), d, seed)?,
            EnvKind::TvBudget => make_tv_budget_env(horizon, self.budget.unwrap_or(1.0), d, seed)?,
            EnvKind::LocalShift => {
                let r = self.region.as_ref().expect("validated");
                let region = BinId::new(r.level, &r.coords)?;
                make_local_shift_env(horizon, &region, self.shifts.unwrap_or(0), d, seed, self.avoid_region.unwrap_or(false))?
            }
            EnvKind::GlobalFlip => make_flip_env(
                horizon,
                self.arms.unwrap_or(2),
                self.shifts.unwrap_or(0),
                self.gap.unwrap_or(0.5),
                d,
                seed,
            )?,
            EnvKind::File => {
                let env = Environment::load(self.file_path()?)?;
                if env.horizon != horizon {
                    return Err(Error::InvalidConfig(format!(
                        "environment file has T = {}, run asks for {horizon}",
                        env.horizon
                    )));
                }
                env
            }
        };
        Ok(match self.noise {
            Some(noise) => env.with_noise(noise),
            None => env,
        })
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Horizons to run, in order.
    pub fn horizons(&self) -> Result<Vec<u64>> {
        let list = match (&self.sweep, self.env.horizon, self.env.kind) {
            (Some(s), _, _) => s.clone(),
            (None, _, EnvKind::File) => vec![Environment::load(self.env.file_path()?)?.horizon],
            (None, Some(t), _) => vec![t],
            (None, None, _) => return Err(Error::InvalidConfig("need env.T or sweep".into())),
        };
        Ok(list)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name {:?} must be a plain non-empty file name", self.name));
        }
        if self.replicates < 1 {
            return bad("replicates must be at least 1".into());
        }
        if self.algos.is_empty() {
            return bad("at least one [[algo]] is required".into());
        }
        self.env.validate()?;
        for a in &self.algos {
            a.validate()?;
        }
        let mut labels: Vec<_> = self.algos.iter().map(|a| a.policy().label()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("each algorithm may appear once".into());
        }
        if let Some(sweep) = &self.sweep {
            if sweep.is_empty() {
                return bad("sweep must list at least one horizon".into());
            }
            if self.env.kind == EnvKind::File {
                return bad("cannot sweep a file environment".into());
            }
        }
        for t in self.horizons()? {
            if t < 2 {
                return bad(format!("horizon {t} must be at least 2"));
            }
            if let (Some(l), EnvKind::GlobalShift | EnvKind::LocalShift | EnvKind::GlobalFlip) =
                (self.env.shifts, self.env.kind)
            {
                if l >= t {
                    return bad(format!("L = {l} must be below T = {t}"));
                }
            }
            if let Some(v) = self.env.budget {
                if !(v > 0.0 && v <= t as f64) {
                    return bad(format!("V = {v} outside (0, T = {t}]"));
                }
            }
        }
        Ok(())
    }
}
