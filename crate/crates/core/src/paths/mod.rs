//! Nearest-neighbor paths, exact path counting and path censuses.

mod census;
mod enumerate;

pub use census::{census, census_with, is_good_spine, PathCensus, SiteIndex, TConvention};
pub use enumerate::{
    count_open_saw, count_saw, count_saw_no4, count_walks, for_each_walk, growth_sequence,
    normalized_partition, normalized_partition_exact, AllOpen, Constraint, GrowthRow,
    ENUMERATION_BUDGET,
};

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{direction_between, edge_from, Direction, Edge, Site};

/// Origin-anchored (by default) sequence of unit steps. A `Path` does not
/// claim self-avoidance; see [`Path::is_self_avoiding`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    start: Site,
    steps: Vec<Direction>,
}

impl Path {
    pub fn new(start: Site, steps: Vec<Direction>) -> Result<Self> {
        let d = start.dim();
        if let Some(bad) = steps.iter().find(|s| s.axis >= d) {
            return Err(Error::InvalidPath(format!("direction {bad} outside dimension {d}")));
        }
        Ok(Path { start, steps })
    }

    pub fn from_origin(d: usize, steps: Vec<Direction>) -> Result<Self> {
        if d < 2 {
            return Err(Error::DimensionTooSmall(d));
        }
        Self::new(Site::origin(d), steps)
    }

    pub fn from_codes(d: usize, codes: &[i64]) -> Result<Self> {
        let steps = codes.iter().map(|&c| Direction::from_code(c, d)).collect::<Result<_>>()?;
        Self::from_origin(d, steps)
    }

    /// Path through consecutive adjacent sites.
    pub fn from_sites(sites: &[Site]) -> Result<Self> {
        let first = sites.first().ok_or_else(|| Error::InvalidPath("no sites".into()))?;
        let steps = sites
            .windows(2)
            .map(|w| {
                direction_between(&w[0], &w[1]).ok_or_else(|| {
                    Error::InvalidPath(format!("{} and {} are not adjacent", w[0], w[1]))
                })
            })
            .collect::<Result<_>>()?;
        Path::new(first.clone(), steps)
    }

    pub fn straight(d: usize, n: usize) -> Self {
        Path { start: Site::origin(d), steps: vec![Direction::new(0, true); n] }
    }

    pub fn dim(&self) -> usize {
        self.start.dim()
    }

    /// Number of steps N.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start(&self) -> &Site {
        &self.start
    }

    pub fn steps(&self) -> &[Direction] {
        &self.steps
    }

    /// Increment X_n for n in [1, N].
    pub fn increment(&self, n: usize) -> Direction {
        self.steps[n - 1]
    }

    /// S_0, ..., S_N.
    pub fn sites(&self) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut cur = self.start.clone();
        out.push(cur.clone());
        for &s in &self.steps {
            cur.step_mut(s);
            out.push(cur.clone());
        }
        out
    }

    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.steps.len());
        let mut cur = self.start.clone();
        for &s in &self.steps {
            out.push(edge_from(&cur, s));
            cur.step_mut(s);
        }
        out
    }

    pub fn is_self_avoiding(&self) -> bool {
        let mut seen = rustc_hash::FxHashSet::default();
        self.sites().into_iter().all(|s| seen.insert(s))
    }

    /// Prefix with the first `n` steps.
    pub fn truncate(&self, n: usize) -> Path {
        Path { start: self.start.clone(), steps: self.steps[..n.min(self.len())].to_vec() }
    }

    pub fn codes(&self) -> Vec<i64> {
        self.steps.iter().map(|s| s.code()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&PathJson::from(self)).expect("path json")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: PathJson = serde_json::from_str(s)?;
        raw.try_into()
    }
}

/// Wire form `{d, start, steps}` with steps as signed axis codes `±(axis+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathJson {
    pub d: usize,
    pub start: Vec<i64>,
    pub steps: Vec<i64>,
}

impl From<&Path> for PathJson {
    fn from(p: &Path) -> Self {
        PathJson { d: p.dim(), start: p.start.coords().to_vec(), steps: p.codes() }
    }
}

impl TryFrom<PathJson> for Path {
    type Error = Error;

    fn try_from(raw: PathJson) -> Result<Path> {
        if raw.start.len() != raw.d {
            return Err(Error::DimensionMismatch(raw.d, raw.start.len()));
        }
        let steps = raw
            .steps
            .iter()
            .map(|&c| Direction::from_code(c, raw.d))
            .collect::<Result<_>>()?;
        Path::new(Site::new(raw.start)?, steps)
    }
}

impl Serialize for Path {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PathJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Path {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PathJson::deserialize(d)?;
        Path::try_from(raw).map_err(serde::de::Error::custom)
    }
}

/// Counter that runs in `u64` and escalates to a big integer on overflow.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Tally {
    small: u64,
    big: Option<BigUint>,
}

impl Tally {
    #[inline]
    pub fn add(&mut self, v: u64) {
        match self.small.checked_add(v) {
            Some(s) => self.small = s,
            None => {
                let big = self.big.get_or_insert_with(BigUint::zero);
                *big += self.small;
                *big += v;
                self.small = 0;
            }
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.add(other.small);
        if let Some(b) = &other.big {
            *self.big.get_or_insert_with(BigUint::zero) += b;
        }
    }

    pub fn value(&self) -> BigUint {
        match &self.big {
            Some(b) => b + self.small,
            None => BigUint::from(self.small),
        }
    }
}

/// Natural log of a big integer; `-inf` for zero.
pub fn ln_biguint(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits < 1000 {
        return x.to_f64().expect("finite").ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().expect("finite");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}
