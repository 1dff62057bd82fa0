//! Dyadic partition tree over the unit cube `[0,1]^d`.
//!
//! Level `m` tiles the cube with `2^(m d)` axis-aligned cells of side `2^-m`.
//! Cells are half-open `[k/2^m, (k+1)/2^m)` per coordinate, except the last
//! cell which also owns the upper boundary `1.0`.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A point of the context space `[0,1]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context(Vec<f64>);

impl Context {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(bad) = coords.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::InvalidArgument(format!(
                "context coordinate {bad} outside [0,1]"
            )));
        }
        Ok(Context(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// Sup-norm distance.
    pub fn dist_inf(&self, other: &Context) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Address of a cell in the dyadic tree: level `m` plus integer coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinId {
    pub level: u32,
    pub coords: SmallVec<[u32; 4]>,
}

impl BinId {
    pub fn new(level: u32, coords: &[u32]) -> Result<Self> {
        if level > 31 {
            return Err(Error::InvalidArgument(format!("level {level} too deep")));
        }
        let cells = 1u64 << level;
        if let Some(c) = coords.iter().find(|&&c| c as u64 >= cells) {
            return Err(Error::InvalidArgument(format!(
                "bin coordinate {c} out of range at level {level}"
            )));
        }
        Ok(BinId {
            level,
            coords: coords.iter().copied().collect(),
        })
    }

    pub fn root(d: usize) -> Self {
        BinId {
            level: 0,
            coords: SmallVec::from_elem(0, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Side length `2^-m`, exact in binary floating point.
    pub fn side_length(&self) -> f64 {
        side_length(self.level)
    }

    pub fn is_root(&self) -> bool {
        self.level == 0
    }

    pub fn parent(&self) -> Result<BinId> {
        if self.level == 0 {
            return Err(Error::RootHasNoParent);
        }
        Ok(BinId {
            level: self.level - 1,
            coords: self.coords.iter().map(|c| c / 2).collect(),
        })
    }

    /// The ancestor of this bin at a coarser (or equal) level.
    pub fn ancestor_at(&self, level: u32) -> BinId {
        debug_assert!(level <= self.level);
        let shift = self.level - level;
        BinId {
            level,
            coords: self.coords.iter().map(|c| c >> shift).collect(),
        }
    }

    /// Chain from this bin up to the root, this bin first.
    pub fn ancestors(&self) -> Vec<BinId> {
        (0..=self.level).rev().map(|l| self.ancestor_at(l)).collect()
    }

    pub fn contains(&self, x: &Context) -> bool {
        x.dim() == self.dim() && bin_of(x, self.level) == *self
    }

    /// True if `self` is `other` or one of its ancestors.
    pub fn is_ancestor_of(&self, other: &BinId) -> bool {
        self.level <= other.level && other.ancestor_at(self.level) == *self
    }

    /// Lower corner and side, for geometry checks.
    pub fn lower_corner(&self) -> Vec<f64> {
        let r = self.side_length();
        self.coords.iter().map(|&c| c as f64 * r).collect()
    }

    /// Center of the cell.
    pub fn center(&self) -> Context {
        let r = self.side_length();
        Context(self.coords.iter().map(|&c| (c as f64 + 0.5) * r).collect())
    }
}

impl std::fmt::Display for BinId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}(", self.level)?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

pub fn side_length(level: u32) -> f64 {
    0.5f64.powi(level as i32)
}

/// Smallest `m >= 0` with `2^-m <= (K/n)^(1/(2+d))`, i.e. `K * 2^(m(2+d)) >= n`.
///
/// The comparison is done in integers so that exact powers of two land on the
/// correct side of the boundary.
pub fn level_for(n: u64, k: usize, d: usize) -> Result<u32> {
    if n == 0 {
        return Err(Error::InvalidArgument("level_for requires n >= 1".into()));
    }
    if k < 2 {
        return Err(Error::InvalidArgument("level_for requires K >= 2".into()));
    }
    Ok(level_for_unchecked(n, k, d))
}

pub(crate) fn level_for_unchecked(n: u64, k: usize, d: usize) -> u32 {
    let step = 2 + d as u32;
    let n = n as u128;
    let k = k as u128;
    let mut m = 0u32;
    while m * step < 127 && (k << (m * step)) < n {
        m += 1;
    }
    m
}

/// Deepest level ever materialized for horizon `T`: `level_for(T) + 1`.
pub fn max_level(horizon: u64, k: usize, d: usize) -> u32 {
    level_for_unchecked(horizon.max(1), k.max(2), d) + 1
}

/// The bin at level `m` that contains `x`.
pub fn bin_of(x: &Context, level: u32) -> BinId {
    let cells = (1u64 << level) as f64;
    let max = (1u32 << level) - 1;
    BinId {
        level,
        coords: x
            .coords()
            .iter()
            .map(|&xi| ((xi * cells).floor() as u32).min(max))
            .collect(),
    }
}
