#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use safe_topp::{
    build_constraints, build_spline, discretize, Controller, Interval, LimitSpec, LpKernel, PathGrid,
    ReachTables, StageConstraint, StoppableSetFamily,
};
use safe_topp::trace_route;

pub struct RandomProblem {
    pub grid: PathGrid,
    pub limits: LimitSpec,
    pub constraints: Vec<StageConstraint>,
}

/// Spline through 3 to 5 random waypoints with random positive limits.
pub fn random_problem(rng: &mut impl Rng, dof: usize, n: usize) -> RandomProblem {
    let count = rng.random_range(3..=5);
    let waypoints: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..dof).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let path = build_spline(&waypoints).expect("random waypoints are valid");
    let grid = discretize(&path, n);
    let limits = LimitSpec::new(
        (0..dof).map(|_| rng.random_range(0.3..2.5)).collect(),
        (0..dof).map(|_| rng.random_range(0.5..8.0)).collect(),
    )
    .unwrap();
    let constraints = build_constraints(&grid, &limits);
    RandomProblem {
        grid,
        limits,
        constraints,
    }
}

/// Every joint advances monotonically between waypoints, so no joint's
/// path derivative crosses zero.
pub fn smooth_problem(rng: &mut impl Rng, dof: usize, n: usize) -> RandomProblem {
    let mut q: Vec<f64> = (0..dof).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut waypoints = vec![q.clone()];
    for _ in 0..3 {
        for v in &mut q {
            *v += rng.random_range(0.4..0.9);
        }
        waypoints.push(q.clone());
    }
    let path = build_spline(&waypoints).expect("monotone waypoints are valid");
    let grid = discretize(&path, n);
    let limits = LimitSpec::new(
        (0..dof).map(|_| rng.random_range(0.5..2.0)).collect(),
        (0..dof).map(|_| rng.random_range(1.0..6.0)).collect(),
    )
    .unwrap();
    let constraints = build_constraints(&grid, &limits);
    RandomProblem {
        grid,
        limits,
        constraints,
    }
}

pub fn controller(p: &RandomProblem, m: usize) -> Controller {
    let pre = safe_topp::precompute(&p.constraints, &p.grid, m, &LpKernel::new(1)).unwrap();
    Controller::new(p.grid.clone(), p.constraints.clone(), pre.family, pre.tables)
}

/// Admissible `u` at `x` over a segment of length `reach`, straight from the
/// rows: every row holds at `x` and at the landing `x + 2·reach·u`, and the
/// landing stays under the stage's velocity cap.
pub fn admissible_range(c: &StageConstraint, x: f64, reach: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut bound = |coef: f64, rest: f64| {
        // coef·u + rest <= 0
        if coef > 0.0 {
            hi = hi.min(-rest / coef);
        } else if coef < 0.0 {
            lo = lo.max(-rest / coef);
        } else if rest > 1e-12 {
            hi = f64::NEG_INFINITY;
        }
    };
    for r in &c.rows {
        bound(r.a, r.b * x + r.c);
        bound(r.a + 2.0 * reach * r.b, r.b * x + r.c);
    }
    for &(b, cc) in &c.x_rows {
        bound(0.0, b * x + cc);
        bound(2.0 * reach * b, b * x + cc);
    }
    if c.x_max.is_finite() {
        bound(2.0 * reach, x - c.x_max);
    }
    if lo > hi && lo - hi <= 1e-8 * (1.0 + lo.abs() + hi.abs()) {
        // Empty only through rounding; the tables' LP relaxes lower rows.
        return Some((hi, hi));
    }
    (lo <= hi).then_some((lo, hi))
}

/// Best stopping times over every sequence of grid velocities from
/// `(i, k)` to rest at `j`, found by enumerating successor indices.
///
/// A step `m -> m'` over segment `l` exists when some admissible `u` lands
/// at a squared velocity inside `K[j][l+1]` whose grid floor is `m'`, with
/// `m'` itself in `K[j][l+1]`. Each step is timed twice: optimistically
/// with the fastest landing inside the cell and pessimistically with the
/// slowest. Sequences that never move are dropped. Results are `(fast, slow)`
/// minima over all sequences.
pub struct GridOracle<'a> {
    pub grid: &'a PathGrid,
    pub constraints: &'a [StageConstraint],
    pub family: &'a StoppableSetFamily,
    pub delta_v: f64,
    pub m: usize,
    memo: HashMap<(usize, usize, usize), Option<(f64, f64)>>,
}

const ORACLE_TOL: f64 = 1e-9;

impl<'a> GridOracle<'a> {
    pub fn new(
        grid: &'a PathGrid,
        constraints: &'a [StageConstraint],
        family: &'a StoppableSetFamily,
        tables: &ReachTables,
    ) -> Self {
        Self {
            grid,
            constraints,
            family,
            delta_v: tables.delta_v(),
            m: tables.m(),
            memo: HashMap::new(),
        }
    }

    fn v(&self, k: usize) -> f64 {
        k as f64 * self.delta_v
    }

    fn on_grid(&self, k: usize, set: Interval) -> bool {
        let x = self.v(k).powi(2);
        set.contains(x, ORACLE_TOL * (1.0 + set.hi))
    }

    /// Successor indices with the fastest and slowest landing velocity
    /// reachable inside each one's grid cell.
    pub fn successors(&self, j: usize, l: usize, k: usize) -> Vec<(usize, f64, f64)> {
        let Some(next) = self.family.get(j, l + 1) else {
            return Vec::new();
        };
        let reach = self.grid.deltas[l];
        let x = self.v(k).powi(2);
        let Some((u_lo, u_hi)) = admissible_range(&self.constraints[l], x, reach) else {
            return Vec::new();
        };
        // Matches the relative slack the tables allow on lower-bound rows.
        let tol = 10.0 * ORACLE_TOL * (1.0 + x + next.hi);
        let mut land_lo = (x + 2.0 * reach * u_lo).max(next.lo).max(0.0);
        let mut land_hi = (x + 2.0 * reach * u_hi).min(next.hi);
        if land_lo > land_hi + tol {
            return Vec::new();
        }
        if land_lo > land_hi {
            // Touches the set only within rounding.
            land_lo = land_lo.min(land_hi).max(0.0);
            land_hi = land_lo;
        }
        (0..=self.m)
            .filter_map(|m| {
                let cell_lo = self.v(m).powi(2) * (1.0 - ORACLE_TOL);
                let cell_hi = if m == self.m { f64::INFINITY } else { self.v(m + 1).powi(2) * (1.0 + ORACLE_TOL) };
                let lo = land_lo.max(cell_lo);
                let hi = land_hi.min(cell_hi);
                (self.on_grid(m, next) && lo <= hi).then(|| (m, hi.sqrt(), lo.max(0.0).sqrt()))
            })
            .collect()
    }

    fn step_times(&self, l: usize, k: usize, top: f64, bottom: f64) -> (f64, f64) {
        let d = 2.0 * self.grid.deltas[l];
        (d / (self.v(k) + top), d / (self.v(k) + bottom))
    }

    /// Memoized minimum over sequences; equal to [`Self::enumerate`].
    pub fn best(&mut self, j: usize, i: usize, k: usize) -> Option<(f64, f64)> {
        if i == j {
            return (k == 0).then_some((0.0, 0.0));
        }
        if let Some(&r) = self.memo.get(&(j, i, k)) {
            return r;
        }
        let mut out: Option<(f64, f64)> = None;
        for (m, top, bottom) in self.successors(j, i, k) {
            if let Some((f, s)) = self.best(j, i + 1, m) {
                let (tf, ts) = self.step_times(i, k, top, bottom);
                let cand = (tf + f, ts + s);
                if !cand.0.is_finite() {
                    continue;
                }
                out = Some(match out {
                    None => cand,
                    Some(o) => (o.0.min(cand.0), o.1.min(cand.1)),
                });
            }
        }
        self.memo.insert((j, i, k), out);
        out
    }

    /// Literal depth-first enumeration of every sequence; exponential.
    pub fn enumerate(&self, j: usize, i: usize, k: usize) -> Option<(f64, f64)> {
        if i == j {
            return (k == 0).then_some((0.0, 0.0));
        }
        let mut out: Option<(f64, f64)> = None;
        for (m, top, bottom) in self.successors(j, i, k) {
            if let Some((f, s)) = self.enumerate(j, i + 1, m) {
                let (tf, ts) = self.step_times(i, k, top, bottom);
                let cand = (tf + f, ts + s);
                if !cand.0.is_finite() {
                    continue;
                }
                out = Some(match out {
                    None => cand,
                    Some(o) => (o.0.min(cand.0), o.1.min(cand.1)),
                });
            }
        }
        out
    }
}

/// Outcome of comparing the tables against the oracle on every cell.
#[derive(Debug, Default)]
pub struct OracleReport {
    pub cells: usize,
    pub below_fast: usize,
    /// Cells where the greedy route is slower than the best sequence.
    pub greedy_excess: usize,
    pub above_slack: usize,
    pub finite_without_route: usize,
    pub missed_route: usize,
    pub worst_excess: f64,
}

impl OracleReport {
    pub fn clean(&self) -> bool {
        self.below_fast == 0 && self.above_slack == 0 && self.finite_without_route == 0
    }
}

/// One-δv rounding slack summed along the route: per step, the time lost
/// by landing one grid cell lower.
pub fn route_slack(grid: &PathGrid, tables: &ReachTables, route: &[usize], i: usize) -> f64 {
    let dv = tables.delta_v();
    route
        .windows(2)
        .enumerate()
        .map(|(s, w)| {
            let d = 2.0 * grid.deltas[i + s];
            let v = (w[0] + w[1]) as f64 * dv;
            d / v.max(f64::MIN_POSITIVE) - d / (v + dv)
        })
        .filter(|t| t.is_finite())
        .sum()
}

/// `fast <= tau` and `tau <= slow + route slack` on every in-band cell.
pub fn check_against_oracle(
    grid: &PathGrid,
    constraints: &[StageConstraint],
    family: &StoppableSetFamily,
    tables: &ReachTables,
    report: &mut OracleReport,
) {
    let mut oracle = GridOracle::new(grid, constraints, family, tables);
    let n = grid.n();
    for j in 1..=n {
        for i in 0..j {
            let Some((l, h)) = tables.band(j, i) else { continue };
            for k in l..=h {
                report.cells += 1;
                let tau = tables.tau(j, i, k);
                match oracle.best(j, i, k) {
                    None if tau.is_finite() => report.finite_without_route += 1,
                    None => {}
                    Some(_) if !tau.is_finite() => report.missed_route += 1,
                    Some((fast, slow)) => {
                        // LP slack of 1e-9 in x shows up amplified in times near rest.
                        let tol = 1e-7 * (1.0 + tau);
                        if tau < fast - tol {
                            report.below_fast += 1;
                        }
                        if tau > slow + tol {
                            report.greedy_excess += 1;
                            report.worst_excess = report.worst_excess.max(tau - slow);
                            let route = trace_route(tables, j, i, k).expect("finite tau has a route");
                            if tau > slow + route_slack(grid, tables, &route, i) + tol {
                                report.above_slack += 1;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Least-squares polynomial fit of the given degree; returns R².
pub fn r_squared(xs: &[f64], ys: &[f64], degree: usize) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let a = DMatrix::from_fn(xs.len(), degree + 1, |r, c| xs[r].powi(c as i32));
    let y = DVector::from_column_slice(ys);
    let coef = a.clone().svd(true, true).solve(&y, 1e-14).expect("fit");
    let fitted = &a * coef;
    let mean = y.mean();
    let ss_res: f64 = (&y - fitted).iter().map(|e| e * e).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}
