use rustc_hash::FxHashMap;

use super::Path;
use crate::error::{Error, Result};
use crate::lattice::{l1, Site, SiteCodec};

/// Index convention for the straight-run set T.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TConvention {
    /// n in [2, N-1] with X_n = X_{n-1}.
    #[default]
    Backward,
    /// n in [1, N-1] with X_{n+1} = X_n.
    Forward,
}

/// Spatial lookup over the sites of one path: which times visit a site
/// within a given graph distance of S_n.
#[derive(Debug)]
pub struct SiteIndex {
    sites: Vec<Site>,
    codes: Vec<u128>,
    at: FxHashMap<u128, Vec<usize>>,
    // neighbor offsets as code differences, modulo 2^128
    ring1: Vec<u128>,
    ring2: Vec<u128>,
}

impl SiteIndex {
    pub fn new(path: &Path) -> Result<Self> {
        let d = path.dim();
        let sites = path.sites();
        let codec = SiteCodec::for_ball(path.start(), path.len() as u64 + 2)?;
        let codes: Vec<u128> = sites.iter().map(|s| codec.encode(s.coords())).collect();
        let mut at: FxHashMap<u128, Vec<usize>> = FxHashMap::default();
        for (i, &c) in codes.iter().enumerate() {
            at.entry(c).or_default().push(i);
        }
        let origin = codec.encode(&vec![0; d]);
        let delta = |v: &[i64]| codec.encode(v).wrapping_sub(origin);
        let mut ring1 = Vec::new();
        let mut ring2 = Vec::new();
        for a in 0..d {
            for sa in [1i64, -1] {
                let mut v = vec![0; d];
                v[a] = sa;
                ring1.push(delta(&v));
                v[a] = 2 * sa;
                ring2.push(delta(&v));
                for b in a + 1..d {
                    for sb in [1i64, -1] {
                        let mut w = vec![0; d];
                        w[a] = sa;
                        w[b] = sb;
                        ring2.push(delta(&w));
                    }
                }
            }
        }
        Ok(SiteIndex { sites, codes, at, ring1, ring2 })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dist(&self, m: usize, n: usize) -> u64 {
        l1(self.sites[m].coords(), self.sites[n].coords())
    }

    /// Calls `f(m)` for every time m != n with |S_m - S_n| <= radius (radius <= 2).
    pub fn near(&self, n: usize, radius: u32, mut f: impl FnMut(usize)) {
        debug_assert!(radius <= 2);
        let c = self.codes[n];
        let mut hit = |code: u128| {
            if let Some(list) = self.at.get(&code) {
                list.iter().copied().filter(|&m| m != n).for_each(&mut f);
            }
        };
        hit(c);
        if radius >= 1 {
            self.ring1.iter().for_each(|&dl| hit(c.wrapping_add(dl)));
        }
        if radius >= 2 {
            self.ring2.iter().for_each(|&dl| hit(c.wrapping_add(dl)));
        }
    }

    /// Whether some time m with |m - n| > gap has |S_m - S_n| <= radius.
    pub fn returns_near(&self, n: usize, radius: u32, gap: usize) -> bool {
        let mut found = false;
        self.near(n, radius, |m| found |= m.abs_diff(n) > gap);
        found
    }

    /// Time of the site equal to `s`, if the path visits it.
    pub fn find(&self, s: &Site) -> Option<usize> {
        self.sites.iter().position(|x| x == s)
    }
}

/// Index sets U, T, V¹, V² of a path of length N.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathCensus {
    n: usize,
    d: usize,
    u: Vec<bool>,
    t: Vec<bool>,
    v1: Vec<bool>,
    v2: Vec<bool>,
}

fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

fn member(mask: &[bool], n: usize) -> bool {
    mask.get(n).copied().unwrap_or(false)
}

impl PathCensus {
    /// Census of any path; self-avoidance is not checked.
    pub fn compute(path: &Path, conv: TConvention) -> Result<Self> {
        let index = SiteIndex::new(path)?;
        Ok(Self::from_index(path, &index, conv))
    }

    pub fn from_index(path: &Path, index: &SiteIndex, conv: TConvention) -> Self {
        let n = path.len();
        let mut u = vec![false; n + 1];
        for k in 3..=n {
            u[k] = index.dist(k, k - 3) == 1;
        }
        let mut t = vec![false; n + 1];
        match conv {
            TConvention::Backward => {
                for k in 2..n {
                    t[k] = path.increment(k) == path.increment(k - 1);
                }
            }
            TConvention::Forward => {
                for k in 1..n {
                    t[k] = path.increment(k + 1) == path.increment(k);
                }
            }
        }
        let v1 = (0..=n).map(|k| !index.returns_near(k, 1, 1)).collect();
        let v2 = (0..=n).map(|k| !index.returns_near(k, 2, 2)).collect();
        PathCensus { n, d: path.dim(), u, t, v1, v2 }
    }

    pub fn steps(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn u(&self) -> Vec<usize> {
        indices(&self.u)
    }

    pub fn t(&self) -> Vec<usize> {
        indices(&self.t)
    }

    pub fn v1(&self) -> Vec<usize> {
        indices(&self.v1)
    }

    pub fn v2(&self) -> Vec<usize> {
        indices(&self.v2)
    }

    pub fn in_u(&self, n: usize) -> bool {
        member(&self.u, n)
    }

    pub fn in_t(&self, n: usize) -> bool {
        member(&self.t, n)
    }

    pub fn in_v1(&self, n: usize) -> bool {
        member(&self.v1, n)
    }

    pub fn in_v2(&self, n: usize) -> bool {
        member(&self.v2, n)
    }

    pub fn size_u(&self) -> usize {
        self.u.iter().filter(|&&b| b).count()
    }

    pub fn size_t(&self) -> usize {
        self.t.iter().filter(|&&b| b).count()
    }

    pub fn size_v1(&self) -> usize {
        self.v1.iter().filter(|&&b| b).count()
    }

    pub fn size_v2(&self) -> usize {
        self.v2.iter().filter(|&&b| b).count()
    }

    /// Membership in the good-spine set for `eps` in (0, 1].
    pub fn is_good(&self, eps: f64) -> bool {
        let n = self.n as f64;
        let two_d = 2.0 * self.d as f64;
        let u = self.size_u() as f64;
        self.size_v2() as f64 >= (1.0 - eps) * n
            && self.size_t() as f64 <= eps * n
            && u >= (1.0 - eps) * n / two_d
            && u <= (1.0 + eps) * n / two_d
    }
}

/// Census of a self-avoiding path with the default T convention.
pub fn census(path: &Path) -> Result<PathCensus> {
    census_with(path, TConvention::Backward)
}

pub fn census_with(path: &Path, conv: TConvention) -> Result<PathCensus> {
    if !path.is_self_avoiding() {
        return Err(Error::NotSelfAvoiding);
    }
    PathCensus::compute(path, conv)
}

pub fn is_good_spine(path: &Path, eps: f64) -> Result<bool> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::OutOfRange { name: "epsilon", detail: format!("{eps} not in (0,1)") });
    }
    Ok(census(path)?.is_good(eps))
}
