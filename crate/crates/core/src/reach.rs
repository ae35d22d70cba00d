//! Precomputation: stoppable sets and the Time-to-Reach tables.
//!
//! `K[j][i]` is the interval of squared path velocities at stage `i` from
//! which the robot can be brought to rest exactly at stage `j`. It is built
//! backward from `K[j][j] = {0}` with one-step projections.
//!
//! The tables discretize path velocity uniformly with step `delta_v`. For
//! every stopping stage `j`, stage `i < j` and in-band velocity index `k`,
//! the greedy control `u*` (largest admissible `u` landing in `K[j][i+1]`)
//! gives the travel time to stage `i + 1` and the successor index
//! `rho = floor(v*/delta_v)`; `tau[j][i][k]` accumulates those times back
//! from `tau[j][j][0] = 0`.
//!
//! For a fixed `i` every `(j, k)` problem depends only on `K[j][i+1]` and
//! `k`, so each sweep step is one batch. Problems with bit-identical
//! `K[j][i+1]` are solved once.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::constraint::{Row, StageConstraint};
use crate::error::{Error, Result};
use crate::interval::Interval;
use crate::lp::{solve_1d, solve_2d_project_x, BatchSolution, Lp1Batch, LpKernel};
use crate::path::PathGrid;

/// Slack used when converting `sqrt(x)/delta_v` to grid indices.
const INDEX_TOL: f64 = 1e-9;
/// Lower-bound rows of the greedy LP are relaxed by this relative amount so
/// that states on the boundary of a stoppable set stay feasible under
/// rounding. Upper bounds, and therefore `u*`, are untouched.
pub(crate) const LOWER_SLACK: f64 = 1e-9;

#[inline]
fn tri(j: usize, i: usize) -> usize {
    j * (j + 1) / 2 + i
}

/// Triangular family of stoppable sets, `K[j][i]` for `0 <= i <= j <= N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppableSetFamily {
    n: usize,
    sets: Vec<Option<Interval>>,
}

impl StoppableSetFamily {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `K[j][i]`; `None` when empty or when `i > j`.
    pub fn get(&self, j: usize, i: usize) -> Option<Interval> {
        if i > j || j > self.n {
            return None;
        }
        self.sets[tri(j, i)]
    }

    pub fn from_sets(n: usize, sets: Vec<Option<Interval>>) -> Result<Self> {
        if sets.len() != tri(n, n) + 1 {
            return Err(Error::Artifact(format!(
                "stoppable family for N={n} needs {} sets, got {}",
                tri(n, n) + 1,
                sets.len()
            )));
        }
        Ok(Self { n, sets })
    }

    pub fn sets(&self) -> &[Option<Interval>] {
        &self.sets
    }

    /// Largest squared velocity in `K[N][·]`, which contains every other set.
    pub fn max_upper(&self) -> Option<f64> {
        (0..=self.n)
            .filter_map(|i| self.get(self.n, i))
            .map(|k| k.hi)
            .reduce(f64::max)
    }
}

fn stage_rows(constraints: &[StageConstraint], grid: &PathGrid) -> Vec<Vec<Row>> {
    (0..grid.n())
        .map(|i| constraints[i].segment_rows(grid.deltas[i]))
        .collect()
}

/// Backward passes from every stopping stage, swept stage by stage so that
/// identical bridge intervals are projected once.
pub fn compute_stoppable_sets(
    constraints: &[StageConstraint],
    grid: &PathGrid,
) -> StoppableSetFamily {
    let n = grid.n();
    assert_eq!(constraints.len(), n + 1, "one constraint per stage");
    let rows = stage_rows(constraints, grid);
    let mut sets = vec![None; tri(n, n) + 1];
    for j in 0..=n {
        sets[tri(j, j)] = Some(Interval::point(0.0));
    }
    for i in (0..n).rev() {
        let mut unique: Vec<Interval> = Vec::new();
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        let mut slot = vec![usize::MAX; n + 1];
        for j in i + 1..=n {
            if let Some(next) = sets[tri(j, i + 1)] {
                slot[j] = *index.entry(next.key()).or_insert_with(|| {
                    unique.push(next);
                    unique.len() - 1
                });
            }
        }
        let projected: Vec<Option<Interval>> = unique
            .par_iter()
            .map(|&bridge| {
                solve_2d_project_x(&rows[i], constraints[i].x_max, grid.deltas[i], bridge)
            })
            .collect();
        for j in i + 1..=n {
            if slot[j] != usize::MAX {
                sets[tri(j, i)] = projected[slot[j]];
            }
        }
    }
    StoppableSetFamily { n, sets }
}

pub fn compute_delta_v(family: &StoppableSetFamily, m: usize) -> Result<f64> {
    assert!(m >= 1, "M must be at least 1");
    let top = family.max_upper().ok_or(Error::EmptyFamily)?;
    Ok(top.max(0.0).sqrt() / m as f64)
}

/// Time-to-Reach and fastest-travel tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachTables {
    n: usize,
    m: usize,
    delta_v: f64,
    /// `band[tri(j, i)]` = in-band index range `[l, m]` of `K[j][i]`.
    band: Vec<Option<(u32, u32)>>,
    /// `tau[j][i * (m + 1) + k]`, seconds.
    tau: Vec<Vec<f64>>,
    rho: Vec<Vec<u32>>,
}

/// How the per-cell greedy LPs are evaluated.
#[derive(Debug, Clone, Copy)]
pub enum TableBackend<'a> {
    /// One batch per stage on the kernel's worker pool, deduplicated.
    Batched(&'a LpKernel),
    /// Same deduplicated sweep, scalar solves on the calling thread.
    SerialMemo,
    /// Every `(j, i, k)` cell solved independently with freshly built rows.
    Naive,
}

impl ReachTables {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest velocity index (`M`, or 0 when `delta_v == 0`).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn delta_v(&self) -> f64 {
        self.delta_v
    }

    pub fn band(&self, j: usize, i: usize) -> Option<(usize, usize)> {
        if i > j || j > self.n {
            return None;
        }
        self.band[tri(j, i)].map(|(l, m)| (l as usize, m as usize))
    }

    #[inline]
    pub fn tau(&self, j: usize, i: usize, k: usize) -> f64 {
        if i > j || k > self.m {
            return f64::INFINITY;
        }
        self.tau[j][i * (self.m + 1) + k]
    }

    #[inline]
    pub fn rho(&self, j: usize, i: usize, k: usize) -> usize {
        self.rho[j][i * (self.m + 1) + k] as usize
    }

    /// Grid velocity of index `k`.
    pub fn velocity(&self, k: usize) -> f64 {
        k as f64 * self.delta_v
    }

    /// Index of the largest grid velocity not above `v`.
    pub fn floor_index(&self, v: f64) -> usize {
        floor_index(v, self.delta_v, self.m)
    }

    pub(crate) fn raw_parts(&self) -> (&[Option<(u32, u32)>], &[Vec<f64>], &[Vec<u32>]) {
        (&self.band, &self.tau, &self.rho)
    }

    pub(crate) fn from_raw_parts(
        n: usize,
        m: usize,
        delta_v: f64,
        band: Vec<Option<(u32, u32)>>,
        tau: Vec<Vec<f64>>,
        rho: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let ok = band.len() == tri(n, n) + 1
            && tau.len() == n + 1
            && rho.len() == n + 1
            && (0..=n).all(|j| tau[j].len() == (j + 1) * (m + 1) && rho[j].len() == tau[j].len());
        if !ok {
            return Err(Error::Artifact("table dimensions disagree with header".into()));
        }
        Ok(Self {
            n,
            m,
            delta_v,
            band,
            tau,
            rho,
        })
    }

    /// Approximate heap footprint in bytes; grows as `O(N² M)`.
    pub fn memory_bytes(&self) -> usize {
        self.tau.iter().map(|t| t.len() * 12).sum::<usize>() + self.band.len() * 12
    }
}

fn floor_index(v: f64, delta_v: f64, m: usize) -> usize {
    if delta_v <= 0.0 {
        return 0;
    }
    let r = v / delta_v;
    ((r + INDEX_TOL * (1.0 + r)).floor().max(0.0) as usize).min(m)
}

fn band_of(k: Interval, delta_v: f64, m: usize) -> Option<(u32, u32)> {
    if delta_v <= 0.0 {
        return (k.lo <= 0.0).then_some((0, 0));
    }
    let lo = k.lo.max(0.0).sqrt() / delta_v;
    let hi = k.hi.max(0.0).sqrt() / delta_v;
    let l = (lo - INDEX_TOL * (1.0 + lo)).ceil().max(0.0) as usize;
    let h = ((hi + INDEX_TOL * (1.0 + hi)).floor() as usize).min(m);
    (l <= h).then_some((l as u32, h as u32))
}

/// Rows of the greedy LP at `x`: stage rows as `a·u <= -(b·x + c)` and the
/// bridge `lo <= x + 2·reach·u <= hi`.
pub(crate) fn push_greedy_rows(
    out: &mut impl FnMut(f64, f64),
    rows: &[Row],
    x: f64,
    reach: f64,
    bridge: Interval,
) {
    for r in rows {
        let rhs = -(r.b * x + r.c);
        push_u_row(out, r.a, rhs);
    }
    let two = 2.0 * reach;
    out(two, bridge.hi - x);
    out(-two, x - bridge.lo + LOWER_SLACK * (1.0 + bridge.lo.abs()));
}

#[inline]
fn push_u_row(out: &mut impl FnMut(f64, f64), a: f64, rhs: f64) {
    if a == 0.0 {
        if rhs < 0.0 {
            out(1.0, -1.0);
            out(-1.0, -1.0);
        }
    } else if a < 0.0 {
        out(a, rhs + LOWER_SLACK * (rhs.abs() + a.abs()));
    } else {
        out(a, rhs);
    }
}

/// Outcome of one greedy step from grid velocity `v` at stage `i`.
#[derive(Debug, Clone, Copy)]
struct Step {
    time: f64,
    rho: u32,
}

fn finish_step(u_star: f64, feasible: bool, x: f64, v: f64, reach: f64, delta_v: f64, m: usize) -> Option<Step> {
    if !feasible {
        return None;
    }
    let x_next = (x + 2.0 * reach * u_star).max(0.0);
    let v_next = x_next.sqrt();
    Some(Step {
        time: 2.0 * reach / (v_next + v),
        rho: floor_index(v_next, delta_v, m) as u32,
    })
}

pub fn compute_tables(
    family: &StoppableSetFamily,
    constraints: &[StageConstraint],
    grid: &PathGrid,
    m: usize,
    backend: TableBackend<'_>,
) -> Result<ReachTables> {
    let n = grid.n();
    assert_eq!(family.n(), n, "family built on a different grid");
    let delta_v = compute_delta_v(family, m)?;
    let m = if delta_v > 0.0 { m } else { 0 };
    let width = m + 1;

    let band: Vec<Option<(u32, u32)>> = family
        .sets()
        .iter()
        .map(|k| k.and_then(|k| band_of(k, delta_v, m)))
        .collect();
    let mut tau: Vec<Vec<f64>> = (0..=n).map(|j| vec![f64::INFINITY; (j + 1) * width]).collect();
    let rho: Vec<Vec<u32>> = (0..=n).map(|j| vec![0; (j + 1) * width]).collect();
    for j in 0..=n {
        tau[j][j * width] = 0.0;
    }

    let rows = stage_rows(constraints, grid);
    let mut tables = ReachTables {
        n,
        m,
        delta_v,
        band,
        tau,
        rho,
    };
    match backend {
        TableBackend::Naive => fill_naive(&mut tables, family, &rows, grid),
        TableBackend::SerialMemo => fill_swept(&mut tables, family, &rows, grid, None),
        TableBackend::Batched(kernel) => fill_swept(&mut tables, family, &rows, grid, Some(kernel)),
    }
    Ok(tables)
}

fn fill_naive(t: &mut ReachTables, family: &StoppableSetFamily, rows: &[Vec<Row>], grid: &PathGrid) {
    let width = t.m + 1;
    let mut lp: Vec<(f64, f64)> = Vec::new();
    for j in 1..=t.n {
        for i in (0..j).rev() {
            let (Some((l, h)), Some(next)) = (t.band[tri(j, i)], family.get(j, i + 1)) else {
                continue;
            };
            let reach = grid.deltas[i];
            for k in l as usize..=h as usize {
                let v = t.velocity(k);
                let x = v * v;
                lp.clear();
                push_greedy_rows(&mut |a, b| lp.push((a, b)), &rows[i], x, reach, next);
                let sol = solve_1d(&lp);
                debug_assert!(sol.feasible, "in-band state infeasible at j={j} i={i} k={k}");
                let Some(step) = finish_step(sol.u_star, sol.feasible, x, v, reach, t.delta_v, t.m) else {
                    continue;
                };
                let cell = i * width + k;
                t.rho[j][cell] = step.rho;
                t.tau[j][cell] = t.tau[j][(i + 1) * width + step.rho as usize] + step.time;
            }
        }
    }
}

/// One unique `(K[j][i+1], band)` combination at the current stage.
struct Group {
    bridge: Interval,
    lo: usize,
    hi: usize,
    /// Offset of this group's first problem in the stage batch.
    first: usize,
}

fn fill_swept(
    t: &mut ReachTables,
    family: &StoppableSetFamily,
    rows: &[Vec<Row>],
    grid: &PathGrid,
    kernel: Option<&LpKernel>,
) {
    let n = t.n;
    let width = t.m + 1;
    let mut batch = Lp1Batch::new();
    let mut solved = BatchSolution::default();
    let mut group_of = vec![usize::MAX; n + 1];
    let mut steps: Vec<Option<Step>> = Vec::new();

    for i in (0..n).rev() {
        let reach = grid.deltas[i];
        let mut groups: Vec<Group> = Vec::new();
        let mut index: HashMap<(u64, u64), usize> = HashMap::new();
        group_of[..].fill(usize::MAX);
        batch.clear();
        for j in i + 1..=n {
            let (Some((l, h)), Some(next)) = (t.band[tri(j, i)], family.get(j, i + 1)) else {
                continue;
            };
            let g = *index.entry(next.key()).or_insert_with(|| {
                groups.push(Group {
                    bridge: next,
                    lo: l as usize,
                    hi: h as usize,
                    first: 0,
                });
                groups.len() - 1
            });
            group_of[j] = g;
        }
        for g in groups.iter_mut() {
            g.first = batch.len();
            for k in g.lo..=g.hi {
                let v = k as f64 * t.delta_v;
                let x = v * v;
                push_greedy_rows(&mut |a, b| batch.push_row(a, b), &rows[i], x, reach, g.bridge);
                batch.finish_problem(x);
            }
        }
        match kernel {
            Some(kernel) => kernel.solve_1d_batch_into(&batch, &mut solved),
            None => {
                solved.feasible.clear();
                solved.u_star.clear();
                for p in 0..batch.len() {
                    let r = batch.row_offsets[p]..batch.row_offsets[p + 1];
                    let rows: Vec<(f64, f64)> =
                        batch.a[r.clone()].iter().copied().zip(batch.b[r].iter().copied()).collect();
                    let sol = solve_1d(&rows);
                    solved.feasible.push(sol.feasible);
                    solved.u_star.push(sol.u_star);
                }
            }
        }
        steps.clear();
        for g in &groups {
            for (offset, k) in (g.lo..=g.hi).enumerate() {
                let p = g.first + offset;
                let v = k as f64 * t.delta_v;
                debug_assert!(solved.feasible[p], "in-band state infeasible at i={i} k={k}");
                steps.push(finish_step(
                    solved.u_star[p],
                    solved.feasible[p],
                    batch.x_fixed[p],
                    v,
                    reach,
                    t.delta_v,
                    t.m,
                ));
            }
        }

        let groups = &groups;
        let steps = &steps;
        let group_of = &group_of;
        let fill = |(j, (tau_j, rho_j)): (usize, (&mut Vec<f64>, &mut Vec<u32>))| {
            let g = group_of[j];
            if g == usize::MAX {
                return;
            }
            let group = &groups[g];
            for (offset, k) in (group.lo..=group.hi).enumerate() {
                if let Some(step) = steps[group.first + offset] {
                    let cell = i * width + k;
                    rho_j[cell] = step.rho;
                    tau_j[cell] = tau_j[(i + 1) * width + step.rho as usize] + step.time;
                }
            }
        };
        let tau_rest = &mut t.tau[i + 1..];
        let rho_rest = &mut t.rho[i + 1..];
        match kernel {
            Some(kernel) if kernel.threads() > 1 => kernel.install(|| {
                tau_rest
                    .par_iter_mut()
                    .zip(rho_rest.par_iter_mut())
                    .enumerate()
                    .for_each(|(o, pair)| fill((i + 1 + o, pair)));
            }),
            _ => tau_rest
                .iter_mut()
                .zip(rho_rest.iter_mut())
                .enumerate()
                .for_each(|(o, pair)| fill((i + 1 + o, pair))),
        }
    }
}

/// Grid velocity indices `m_i … m_j` of the fastest stopping route.
pub fn trace_route(tables: &ReachTables, j: usize, i: usize, k: usize) -> Option<Vec<usize>> {
    if !tables.tau(j, i, k).is_finite() {
        return None;
    }
    let mut route = Vec::with_capacity(j - i + 1);
    let mut m = k;
    route.push(m);
    for l in i..j {
        m = tables.rho(j, l, m);
        route.push(m);
    }
    Some(route)
}

/// Family plus tables, with the wall time spent in each phase.
#[derive(Debug, Clone)]
pub struct Precomputed {
    pub family: StoppableSetFamily,
    pub tables: ReachTables,
    pub stoppable_secs: f64,
    pub tables_secs: f64,
}

pub fn precompute(
    constraints: &[StageConstraint],
    grid: &PathGrid,
    m: usize,
    kernel: &LpKernel,
) -> Result<Precomputed> {
    let start = std::time::Instant::now();
    let family = kernel.install(|| compute_stoppable_sets(constraints, grid));
    let stoppable_secs = start.elapsed().as_secs_f64();
    let start = std::time::Instant::now();
    let tables = compute_tables(&family, constraints, grid, m, TableBackend::Batched(kernel))?;
    Ok(Precomputed {
        family,
        tables,
        stoppable_secs,
        tables_secs: start.elapsed().as_secs_f64(),
    })
}
