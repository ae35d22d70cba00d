use serde::{Deserialize, Serialize};

/// Closed interval `[lo, hi]` with `lo <= hi`. Emptiness is expressed as
/// `Option<Interval>` at use sites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Option<Self> {
        (lo <= hi).then_some(Self { lo, hi })
    }

    pub const fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    /// `self ⊆ other`, endpoints compared within `tol`.
    pub fn is_within(&self, other: &Interval, tol: f64) -> bool {
        self.lo >= other.lo - tol && self.hi <= other.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Bit pattern of both endpoints, for exact-match deduplication.
    pub fn key(&self) -> (u64, u64) {
        (self.lo.to_bits(), self.hi.to_bits())
    }
}
