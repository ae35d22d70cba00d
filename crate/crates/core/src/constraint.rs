//! Per-stage linear constraints on path acceleration `u` and squared path
//! velocity `x`.
//!
//! A joint acceleration limit at stage `i` reads
//! `|qp·u + qpp·x| <= a_max`, i.e. two rows `±qp·u ± qpp·x - a_max <= 0`.
//! Joint velocity limits only involve `x` and become the cap `x_max`.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::path::PathGrid;

/// Ceiling on `x` at stages where no joint moves with the path.
pub const DEFAULT_X_CEILING: f64 = 1e6;

/// Rows with `|a|` at or below this are treated as `x`-only and folded into
/// the velocity cap.
pub const ZERO_A_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    /// rad/s
    pub v_max: Vec<f64>,
    /// rad/s²
    pub a_max: Vec<f64>,
}

impl LimitSpec {
    pub fn new(v_max: Vec<f64>, a_max: Vec<f64>) -> Result<Self> {
        let spec = Self { v_max, a_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(dof: usize, v_max: f64, a_max: f64) -> Self {
        Self {
            v_max: vec![v_max; dof],
            a_max: vec![a_max; dof],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_max.len() != self.a_max.len() {
            return Err(Error::InvalidLimits(format!(
                "{} velocity limits but {} acceleration limits",
                self.v_max.len(),
                self.a_max.len()
            )));
        }
        let bad = self
            .v_max
            .iter()
            .chain(&self.a_max)
            .any(|v| !(v.is_finite() && *v > 0.0));
        if bad {
            return Err(Error::InvalidLimits("non-positive or non-finite entry".into()));
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.v_max.len()
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// `a·u + b·x + c <= 0`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Row {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn value(&self, u: f64, x: f64) -> f64 {
        self.a * u + self.b * x + self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConstraint {
    /// Rows with nonzero `a`.
    pub rows: Vec<Row>,
    /// Folded `x`-only rows `b·x + c <= 0`, kept for the end-of-segment form.
    pub x_rows: Vec<(f64, f64)>,
    pub x_max: f64,
}

impl StageConstraint {
    /// Folds rows with `|a| <= ZERO_A_EPS` into `x_max`. Folded rows must
    /// admit `x = 0` (`c <= 0`).
    pub fn from_rows(rows: impl IntoIterator<Item = Row>, x_cap: f64) -> Self {
        let mut kept = Vec::new();
        let mut x_rows = Vec::new();
        let mut x_max = x_cap;
        for row in rows {
            if row.a.abs() > ZERO_A_EPS {
                kept.push(row);
                continue;
            }
            debug_assert!(row.c <= 0.0, "x-only row excludes rest: {row:?}");
            if row.b > 0.0 {
                x_max = x_max.min(-row.c / row.b);
            }
            x_rows.push((row.b, row.c));
        }
        Self {
            rows: kept,
            x_rows,
            x_max: x_max.max(0.0),
        }
    }

    /// Rows that hold over a whole segment of length `reach` when `u` is
    /// held constant: every row at the entry state, the same row evaluated at
    /// the landing state `x + 2·reach·u`, and the velocity cap at landing.
    /// Linearity in `x` makes the two ends sufficient for the whole segment.
    pub fn segment_rows(&self, reach: f64) -> Vec<Row> {
        let mut out = Vec::with_capacity(2 * self.rows.len() + self.x_rows.len() + 1);
        for r in &self.rows {
            out.push(*r);
            if r.b != 0.0 {
                out.push(Row::new(r.a + 2.0 * reach * r.b, r.b, r.c));
            }
        }
        for &(b, c) in &self.x_rows {
            if b != 0.0 {
                out.push(Row::new(2.0 * reach * b, b, c));
            }
        }
        if self.x_max.is_finite() {
            out.push(Row::new(2.0 * reach, 1.0, -self.x_max));
        }
        out
    }

    pub fn admissible_u(&self, x: f64) -> Option<Interval> {
        if !(0.0..=self.x_max).contains(&x) {
            return None;
        }
        u_interval(&self.rows, x)
    }

    /// Controls admissible over the remaining `reach` of the segment.
    pub fn segment_admissible_u(&self, x: f64, reach: f64) -> Option<Interval> {
        if !(0.0..=self.x_max).contains(&x) {
            return None;
        }
        u_interval(&self.segment_rows(reach), x)
    }
}

/// `u` range satisfying every row at fixed `x`; unbounded sides are infinite.
pub fn u_interval(rows: &[Row], x: f64) -> Option<Interval> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for r in rows {
        let rhs = -(r.b * x + r.c);
        if r.a > 0.0 {
            hi = hi.min(rhs / r.a);
        } else if r.a < 0.0 {
            lo = lo.max(rhs / r.a);
        } else if rhs < 0.0 {
            return None;
        }
    }
    Interval::new(lo, hi)
}

pub fn admissible_u(sc: &StageConstraint, x: f64) -> Option<Interval> {
    sc.admissible_u(x)
}

pub fn build_constraints(grid: &PathGrid, limits: &LimitSpec) -> Vec<StageConstraint> {
    build_constraints_with_ceiling(grid, limits, DEFAULT_X_CEILING)
}

/// # Panics
/// When the grid and limit dimensions differ.
pub fn build_constraints_with_ceiling(
    grid: &PathGrid,
    limits: &LimitSpec,
    ceiling: f64,
) -> Vec<StageConstraint> {
    assert_eq!(grid.dof(), limits.dof(), "grid/limit dimension mismatch");
    (0..grid.stages.len())
        .map(|i| {
            let mut x_cap = ceiling;
            let mut rows = Vec::with_capacity(2 * limits.dof());
            for j in 0..limits.dof() {
                let (qp, qpp) = (grid.qp[i][j], grid.qpp[i][j]);
                if qp != 0.0 {
                    x_cap = x_cap.min((limits.v_max[j] / qp.abs()).powi(2));
                }
                rows.push(Row::new(qp, qpp, -limits.a_max[j]));
                rows.push(Row::new(-qp, -qpp, -limits.a_max[j]));
            }
            StageConstraint::from_rows(rows, x_cap)
        })
        .collect()
}
