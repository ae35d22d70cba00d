//! Small deterministic LP kernels.
//!
//! * [`solve_1d`] maximizes `u` subject to rows `a·u <= b` (`a != 0`). Rows
//!   with `a > 0` give upper bounds `b/a`, rows with `a < 0` lower bounds;
//!   the problem is feasible iff the largest lower bound does not exceed the
//!   smallest upper bound, and the optimum is that smallest upper bound.
//! * [`LpKernel::solve_1d_batch`] runs the same arithmetic over a flat batch
//!   of problems on a thread pool. The inner loop uses only division,
//!   `min`, `max` and selects, so results are bit-identical to the scalar
//!   solver.
//! * [`solve_2d_project_x`] projects a small `(u, x)` polygon onto the `x`
//!   axis by enumerating pairwise constraint intersections.

use rayon::prelude::*;

use crate::constraint::Row;
use crate::interval::Interval;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lp1Solution {
    pub feasible: bool,
    /// Largest feasible `u` (the tightest upper bound); `+inf` when no row
    /// bounds `u` from above.
    pub u_star: f64,
}

#[inline(always)]
fn fold_row(alpha: f64, beta: f64, a: f64, b: f64) -> (f64, f64) {
    let r = b / a;
    let lower = if a < 0.0 { r } else { f64::NEG_INFINITY };
    let upper = if a > 0.0 { r } else { f64::INFINITY };
    (alpha.max(lower), beta.min(upper))
}

#[inline(always)]
fn solve_slices(a: &[f64], b: &[f64]) -> Lp1Solution {
    let mut alpha = f64::NEG_INFINITY;
    let mut beta = f64::INFINITY;
    for (&a, &b) in a.iter().zip(b) {
        (alpha, beta) = fold_row(alpha, beta, a, b);
    }
    Lp1Solution {
        feasible: alpha <= beta,
        u_star: beta,
    }
}

/// `max u  s.t.  a·u <= b` for every `(a, b)` in `rows`.
pub fn solve_1d(rows: &[(f64, f64)]) -> Lp1Solution {
    debug_assert!(rows.iter().all(|r| r.0 != 0.0), "zero coefficient row");
    let mut alpha = f64::NEG_INFINITY;
    let mut beta = f64::INFINITY;
    for &(a, b) in rows {
        (alpha, beta) = fold_row(alpha, beta, a, b);
    }
    Lp1Solution {
        feasible: alpha <= beta,
        u_star: beta,
    }
}

/// Flat storage for many independent 1-D LPs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lp1Batch {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `row_offsets[p]..row_offsets[p + 1]` are the rows of problem `p`.
    pub row_offsets: Vec<usize>,
    /// Squared velocity each problem was instantiated at.
    pub x_fixed: Vec<f64>,
}

impl Lp1Batch {
    pub fn new() -> Self {
        Self {
            row_offsets: vec![0],
            ..Self::default()
        }
    }

    pub fn with_capacity(problems: usize, rows: usize) -> Self {
        let mut batch = Self {
            a: Vec::with_capacity(rows),
            b: Vec::with_capacity(rows),
            row_offsets: Vec::with_capacity(problems + 1),
            x_fixed: Vec::with_capacity(problems),
        };
        batch.row_offsets.push(0);
        batch
    }

    pub fn len(&self) -> usize {
        self.x_fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_fixed.is_empty()
    }

    pub fn clear(&mut self) {
        self.a.clear();
        self.b.clear();
        self.row_offsets.truncate(1);
        self.x_fixed.clear();
    }

    pub fn push_problem(&mut self, rows: impl IntoIterator<Item = (f64, f64)>, x_fixed: f64) {
        for (a, b) in rows {
            debug_assert!(a != 0.0, "zero coefficient row");
            self.a.push(a);
            self.b.push(b);
        }
        self.row_offsets.push(self.a.len());
        self.x_fixed.push(x_fixed);
    }

    /// Appends one row to the problem currently being assembled; close it
    /// with [`Lp1Batch::finish_problem`].
    #[inline]
    pub fn push_row(&mut self, a: f64, b: f64) {
        debug_assert!(a != 0.0, "zero coefficient row");
        self.a.push(a);
        self.b.push(b);
    }

    #[inline]
    pub fn finish_problem(&mut self, x_fixed: f64) {
        self.row_offsets.push(self.a.len());
        self.x_fixed.push(x_fixed);
    }

    pub fn problem_rows(&self, p: usize) -> Vec<(f64, f64)> {
        let r = self.row_offsets[p]..self.row_offsets[p + 1];
        self.a[r.clone()].iter().copied().zip(self.b[r].iter().copied()).collect()
    }

    fn check(&self) {
        debug_assert_eq!(self.a.len(), self.b.len());
        debug_assert_eq!(self.row_offsets.len(), self.x_fixed.len() + 1);
        debug_assert!(self.row_offsets.windows(2).all(|w| w[0] <= w[1]));
        debug_assert_eq!(*self.row_offsets.last().unwrap(), self.a.len());
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchSolution {
    pub feasible: Vec<bool>,
    pub u_star: Vec<f64>,
}

impl BatchSolution {
    pub fn len(&self) -> usize {
        self.u_star.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_star.is_empty()
    }

    pub fn get(&self, p: usize) -> Lp1Solution {
        Lp1Solution {
            feasible: self.feasible[p],
            u_star: self.u_star[p],
        }
    }
}

const CHUNK: usize = 2048;

/// Owns the worker pool used for batched solves.
pub struct LpKernel {
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for LpKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LpKernel")
            .field("threads", &self.threads())
            .finish()
    }
}

impl LpKernel {
    /// `threads == 0` uses one worker per available core.
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("lp-kernel-{i}"))
            .build()
            .expect("failed to build LP worker pool");
        Self { pool }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    pub fn solve_1d_batch(&self, batch: &Lp1Batch) -> BatchSolution {
        let mut out = BatchSolution::default();
        self.solve_1d_batch_into(batch, &mut out);
        out
    }

    pub fn solve_1d_batch_into(&self, batch: &Lp1Batch, out: &mut BatchSolution) {
        batch.check();
        let n = batch.len();
        out.feasible.clear();
        out.feasible.resize(n, false);
        out.u_star.clear();
        out.u_star.resize(n, 0.0);
        let solve_chunk = |(c, (flags, us)): (usize, (&mut [bool], &mut [f64]))| {
            let base = c * CHUNK;
            for (k, (flag, u)) in flags.iter_mut().zip(us.iter_mut()).enumerate() {
                let p = base + k;
                let (r0, r1) = (batch.row_offsets[p], batch.row_offsets[p + 1]);
                let sol = solve_slices(&batch.a[r0..r1], &batch.b[r0..r1]);
                *flag = sol.feasible;
                *u = sol.u_star;
            }
        };
        if n <= CHUNK || self.threads() == 1 {
            out.feasible
                .chunks_mut(CHUNK)
                .zip(out.u_star.chunks_mut(CHUNK))
                .enumerate()
                .for_each(solve_chunk);
        } else {
            self.pool.install(|| {
                out.feasible
                    .par_chunks_mut(CHUNK)
                    .zip(out.u_star.par_chunks_mut(CHUNK))
                    .enumerate()
                    .for_each(solve_chunk);
            });
        }
    }
}

/// Batch solve on a fresh pool of `threads` workers.
pub fn solve_1d_batch(batch: &Lp1Batch, threads: usize) -> BatchSolution {
    LpKernel::new(threads).solve_1d_batch(batch)
}

/// Relative slack accepted when testing polygon vertices against rows.
const VERTEX_TOL: f64 = 1e-9;

/// Projection onto `x` of
/// `{(u, x) : rows, 0 <= x <= x_max, lo <= x + 2·delta·u <= hi}`.
pub fn solve_2d_project_x(
    rows: &[Row],
    x_max: f64,
    delta: f64,
    bridge: Interval,
) -> Option<Interval> {
    debug_assert!(delta > 0.0);
    if x_max < 0.0 {
        return None;
    }
    let mut all: Vec<Row> = Vec::with_capacity(rows.len() + 4);
    all.extend_from_slice(rows);
    all.push(Row::new(0.0, -1.0, 0.0));
    all.push(Row::new(0.0, 1.0, -x_max));
    all.push(Row::new(2.0 * delta, 1.0, -bridge.hi));
    all.push(Row::new(-2.0 * delta, -1.0, bridge.lo));

    let satisfied = |u: f64, x: f64| {
        all.iter().all(|r| {
            let scale = 1.0 + (r.a * u).abs() + (r.b * x).abs() + r.c.abs();
            r.value(u, x) <= VERTEX_TOL * scale
        })
    };

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in 0..all.len() {
        for q in p + 1..all.len() {
            let (r, s) = (&all[p], &all[q]);
            let det = r.a * s.b - s.a * r.b;
            let norm = (r.a.abs() + r.b.abs()) * (s.a.abs() + s.b.abs());
            if det.abs() <= 1e-14 * norm {
                continue;
            }
            let u = (-r.c * s.b + s.c * r.b) / det;
            let x = (-r.a * s.c + s.a * r.c) / det;
            if satisfied(u, x) {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
    }
    if lo > hi {
        return None;
    }
    Interval::new(lo.clamp(0.0, x_max), hi.clamp(0.0, x_max))
}
