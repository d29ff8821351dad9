//! Geometry of the hypercubic lattice Z^d.
//!
//! Dimension is a runtime value carried by the length of a site's coordinate
//! vector. Neighbor order is fixed: axis-major, positive direction first.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of Z^d.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site {
    coords: Vec<i64>,
}

impl Site {
    pub fn new(coords: Vec<i64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::DimensionTooSmall(coords.len()));
        }
        Ok(Site { coords })
    }

    pub fn origin(d: usize) -> Self {
        Site { coords: vec![0; d] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.coords
    }

    pub fn step(&self, dir: Direction) -> Site {
        let mut coords = self.coords.clone();
        coords[dir.axis] += dir.sign();
        Site { coords }
    }

    pub(crate) fn step_mut(&mut self, dir: Direction) {
        self.coords[dir.axis] += dir.sign();
    }

    /// Coordinate-wise difference `self - other`.
    pub fn sub(&self, other: &Site) -> Vec<i64> {
        self.coords.iter().zip(&other.coords).map(|(a, b)| a - b).collect()
    }

    pub fn l1_norm(&self) -> u64 {
        self.coords.iter().map(|c| c.unsigned_abs()).sum()
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// One of the 2d unit vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction {
    pub axis: usize,
    pub positive: bool,
}

impl Direction {
    pub fn new(axis: usize, positive: bool) -> Self {
        Direction { axis, positive }
    }

    pub fn sign(self) -> i64 {
        if self.positive {
            1
        } else {
            -1
        }
    }

    pub fn negate(self) -> Self {
        Direction { axis: self.axis, positive: !self.positive }
    }

    /// Position in the fixed neighbor order: `2 * axis` for `+`, `2 * axis + 1` for `-`.
    pub fn index(self) -> usize {
        2 * self.axis + usize::from(!self.positive)
    }

    pub fn from_index(i: usize) -> Self {
        Direction { axis: i / 2, positive: i % 2 == 0 }
    }

    /// Signed axis code `±(axis + 1)` used in serialized paths.
    pub fn code(self) -> i64 {
        (self.axis as i64 + 1) * self.sign()
    }

    pub fn from_code(code: i64, d: usize) -> Result<Self> {
        if code == 0 || code.unsigned_abs() as usize > d {
            return Err(Error::InvalidDirection(code));
        }
        Ok(Direction { axis: code.unsigned_abs() as usize - 1, positive: code > 0 })
    }

    /// Unit vector in dimension `d`.
    pub fn vector(self, d: usize) -> Vec<i64> {
        let mut v = vec![0; d];
        v[self.axis] = self.sign();
        v
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", if self.positive { '+' } else { '-' }, self.axis)
    }
}

/// All 2d directions in the fixed order.
pub fn directions(d: usize) -> impl Iterator<Item = Direction> + Clone {
    (0..2 * d).map(Direction::from_index)
}

/// Unordered nearest-neighbor pair `{base, base + unit(axis)}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub base: Site,
    pub axis: usize,
}

impl Edge {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn endpoints(&self) -> (Site, Site) {
        (self.base.clone(), self.base.step(Direction::new(self.axis, true)))
    }

    /// Bit-exact byte encoding: LEB128(d), ZigZag-LEB128 of each base
    /// coordinate, LEB128(axis).
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        encode_edge_raw(self.base.coords(), self.axis, out);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.dim() * 2);
        self.encode_into(&mut out);
        out
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} axis {}]", self.base, self.axis)
    }
}

pub(crate) fn encode_edge_raw(base: &[i64], axis: usize, out: &mut Vec<u8>) {
    write_uleb128(base.len() as u64, out);
    for &c in base {
        write_uleb128(zigzag(c), out);
    }
    write_uleb128(axis as u64, out);
}

pub(crate) fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

pub(crate) fn write_uleb128(mut v: u64, out: &mut Vec<u8>) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

/// The 2d sites at graph distance one, in neighbor order.
pub fn neighbors(s: &Site) -> Vec<Site> {
    directions(s.dim()).map(|dir| s.step(dir)).collect()
}

/// Direction leading from `a` to an adjacent `b`, if they are adjacent.
pub fn direction_between(a: &Site, b: &Site) -> Option<Direction> {
    if a.dim() != b.dim() {
        return None;
    }
    let mut found = None;
    for (axis, (x, y)) in a.coords.iter().zip(&b.coords).enumerate() {
        match y - x {
            0 => {}
            1 | -1 if found.is_none() => found = Some(Direction::new(axis, y > x)),
            _ => return None,
        }
    }
    found
}

pub fn canonical_edge(a: &Site, b: &Site) -> Result<Edge> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let dir = direction_between(a, b)
        .ok_or_else(|| Error::NotAdjacent(a.to_string(), b.to_string()))?;
    let base = if dir.positive { a.clone() } else { b.clone() };
    Ok(Edge { base, axis: dir.axis })
}

/// Edge traversed when stepping from `from` in direction `dir`.
pub fn edge_from(from: &Site, dir: Direction) -> Edge {
    if dir.positive {
        Edge { base: from.clone(), axis: dir.axis }
    } else {
        Edge { base: from.step(dir), axis: dir.axis }
    }
}

pub fn graph_distance(a: &Site, b: &Site) -> Result<u64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    Ok(l1(a.coords(), b.coords()))
}

pub(crate) fn l1(a: &[i64], b: &[i64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| (x - y).unsigned_abs()).sum()
}

/// Injective packing of sites in a bounded box into a `u128`, linear in the
/// coordinates so a unit step is a single add or subtract of a stride.
#[derive(Debug, Clone)]
pub(crate) struct SiteCodec {
    bits: u32,
    strides: Vec<u128>,
    bias: i64,
}

impl SiteCodec {
    /// Codec able to represent every site within L∞ radius `radius` of `center`.
    pub fn for_ball(center: &Site, radius: u64) -> Result<Self> {
        let d = center.dim();
        let bits = (128 / d as u32).min(40);
        let bias = 1i64 << (bits - 1);
        let reach = center.coords.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0) + radius + 2;
        if bits < 2 || reach >= bias as u64 {
            return Err(Error::CoordinateOverflow(format!(
                "d={d} needs radius {reach}, codec holds {}",
                bias - 1
            )));
        }
        let strides = (0..d).map(|i| 1u128 << (bits as usize * i)).collect();
        Ok(SiteCodec { bits, strides, bias })
    }

    pub fn encode(&self, coords: &[i64]) -> u128 {
        coords
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| (c + self.bias) as u128 * s)
            .sum()
    }

    #[inline]
    pub fn step(&self, code: u128, dir: Direction) -> u128 {
        if dir.positive {
            code + self.strides[dir.axis]
        } else {
            code - self.strides[dir.axis]
        }
    }

    #[allow(dead_code)]
    pub fn decode(&self, mut code: u128) -> Vec<i64> {
        let mask = (1u128 << self.bits) - 1;
        (0..self.strides.len())
            .map(|_| {
                let c = (code & mask) as i64 - self.bias;
                code >>= self.bits;
                c
            })
            .collect()
    }
}
