//! Execution phase: Time-to-Arrive, farthest safe stopping stage, and the
//! greedy control step toward the committed stoppable set.

use serde::{Deserialize, Serialize};

use crate::constraint::StageConstraint;
use crate::interval::Interval;
use crate::lp::{solve_1d, Lp1Solution};
use crate::path::PathGrid;
use crate::reach::{push_greedy_rows, ReachTables, StoppableSetFamily};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleInfo {
    pub id: u32,
    pub position: [f64; 3],
    /// Declared maximum speed (m/s).
    pub v_max: f64,
    pub radius: f64,
}

/// `d[l][q]`: distance (m) between the robot posed at stage `l` and obstacle `q`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceField {
    pub d: Vec<Vec<f64>>,
}

/// `psi[l] = min_q (d[l][q] - d_protective) / v_max[q]`. Negative values are
/// kept. A motionless obstacle gives `+inf` outside the protective distance
/// and `-inf` inside it.
pub fn time_to_arrive(field: &DistanceField, d_protective: f64, obstacles: &[ObstacleInfo]) -> Vec<f64> {
    field
        .d
        .iter()
        .map(|row| {
            row.iter()
                .zip(obstacles)
                .map(|(&d, o)| {
                    let gap = d - d_protective;
                    if o.v_max > 0.0 {
                        gap / o.v_max
                    } else if gap > 0.0 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutorState {
    /// Last stage crossed.
    pub stage: usize,
    /// Path position, `stages[stage] <= s < stages[stage + 1]`.
    pub s: f64,
    /// Distance left to `stages[stage + 1]`, integrated directly so it keeps
    /// full relative precision near the stage.
    pub to_next: f64,
    /// Squared path velocity.
    pub x: f64,
    pub committed_j: usize,
    pub t: f64,
    pub d_protective: f64,
    /// Value of `to_next` where an active one-segment hop stops accelerating.
    #[serde(default)]
    pub hop_until: Option<f64>,
}

impl ExecutorState {
    pub fn sdot(&self) -> f64 {
        self.x.sqrt()
    }
}

/// Result of one control cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub j_stop: usize,
    /// Path acceleration applied at the end of the cycle.
    pub u: f64,
    pub qdot: Vec<f64>,
    pub qddot: Vec<f64>,
    /// Exact time the goal stage was reached, if during this cycle.
    pub arrived: Option<f64>,
    /// Forward LPs that came back infeasible (expected to stay 0).
    pub infeasible: usize,
    /// The cycle ran the acceleration half of a hop instead of the LP.
    pub hop: bool,
}

/// Per-segment greedy profile from rest to rest at the goal, no obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyProfile {
    /// Squared velocity at every stage.
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub duration: f64,
}

/// Precomputed data plus the online decision rules.
#[derive(Debug, Clone)]
pub struct Controller {
    pub grid: PathGrid,
    pub constraints: Vec<StageConstraint>,
    pub family: StoppableSetFamily,
    pub tables: ReachTables,
    /// Compare every route stage against `psi[j_stop]` instead of `psi[l]`.
    pub stop_stage_psi_only: bool,
    hop_accel: Vec<f64>,
}

const SNAP_REL: f64 = 1e-9;

impl Controller {
    pub fn new(
        grid: PathGrid,
        constraints: Vec<StageConstraint>,
        family: StoppableSetFamily,
        tables: ReachTables,
    ) -> Self {
        assert_eq!(grid.n(), tables.n(), "tables built on a different grid");
        assert_eq!(constraints.len(), grid.n() + 1);
        let hop_accel = (0..grid.n()).map(|i| hop_accel(&constraints[i], grid.deltas[i])).collect();
        Self {
            grid,
            constraints,
            family,
            tables,
            stop_stage_psi_only: false,
            hop_accel,
        }
    }

    /// Symmetric acceleration of a rest-to-rest hop across segment `i`.
    pub fn hop_accel(&self, i: usize) -> f64 {
        self.hop_accel[i]
    }

    /// Duration of a rest-to-rest hop over the remaining `reach` of segment `i`.
    pub fn hop_time(&self, i: usize, reach: f64) -> f64 {
        let a = self.hop_accel[i];
        if a > 0.0 {
            2.0 * (reach / a).sqrt()
        } else {
            f64::INFINITY
        }
    }

    /// A hop to stage `i + 1` finishes before any obstacle can reach the
    /// poses it sweeps.
    fn hop_clear(&self, i: usize, reach: f64, psi: &[f64]) -> bool {
        let t = self.hop_time(i, reach);
        let (b0, b1) = if self.stop_stage_psi_only {
            (psi[i + 1], psi[i + 1])
        } else {
            (psi[i], psi[i + 1])
        };
        0.0 < b0 && t < b1
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// At rest on stage 0.
    pub fn start_state(&self, d_protective: f64) -> ExecutorState {
        let mut state = ExecutorState {
            stage: 0,
            s: 0.0,
            to_next: 0.0,
            x: 0.0,
            committed_j: 0,
            t: 0.0,
            d_protective,
            hop_until: None,
        };
        self.enter_stage(&mut state, 0);
        state
    }

    fn enter_stage(&self, state: &mut ExecutorState, i: usize) {
        state.stage = i;
        state.s = self.grid.stages[i];
        state.to_next = if i < self.n() { self.grid.deltas[i] } else { 0.0 };
    }

    /// Moves `dist` along the current segment without crossing the next stage.
    fn move_by(&self, state: &mut ExecutorState, dist: f64) {
        let i = state.stage;
        state.to_next = (state.to_next - dist).max(0.0);
        state.s = (self.grid.stages[i + 1] - state.to_next).max(self.grid.stages[i]);
    }

    /// Resting exactly on the current stage.
    pub fn at_stage_rest(&self, state: &ExecutorState) -> bool {
        state.x == 0.0 && (state.stage >= self.n() || state.to_next == self.grid.deltas[state.stage])
    }

    /// Distance left to the next stage.
    pub fn remaining(&self, state: &ExecutorState) -> f64 {
        if state.stage >= self.n() {
            0.0
        } else {
            state.to_next
        }
    }

    /// Greedy LP from `(x, reach)` inside segment `i` toward `K[j][i+1]`.
    pub fn forward_lp(&self, i: usize, x: f64, reach: f64, j: usize) -> Lp1Solution {
        let infeasible = Lp1Solution {
            feasible: false,
            u_star: f64::NEG_INFINITY,
        };
        if i >= j || i >= self.n() {
            return infeasible;
        }
        let Some(target) = self.family.get(j, i + 1) else {
            return infeasible;
        };
        self.greedy_into(i, x, reach, target)
    }

    fn greedy_into(&self, i: usize, x: f64, reach: f64, target: Interval) -> Lp1Solution {
        let rows = self.constraints[i].segment_rows(reach);
        let mut lp = Vec::with_capacity(rows.len() + 2);
        push_greedy_rows(&mut |a, b| lp.push((a, b)), &rows, x, reach, target);
        solve_1d(&lp)
    }

    /// Grid index used for table lookups at the current state.
    pub fn velocity_index(&self, state: &ExecutorState) -> usize {
        let k = self.tables.floor_index(state.x.max(0.0).sqrt());
        match self.tables.band(state.committed_j.max(state.stage), state.stage) {
            Some((l, h)) => k.clamp(l, h),
            None => k,
        }
    }

    /// Farthest stage `j` whose fastest stopping route arrives at every
    /// stage before any obstacle can, and whose forward LP is feasible from
    /// the exact current state. Falls back to the committed stage.
    pub fn select_stop_stage(&self, state: &ExecutorState, psi: &[f64]) -> usize {
        let i = state.stage;
        let n = self.n();
        if i >= n {
            return n;
        }
        let k = self.velocity_index(state);
        let reach = self.remaining(state);
        let at_stage_rest = self.at_stage_rest(state);
        for j in (i..=n).rev() {
            if j == i && !at_stage_rest {
                break;
            }
            if self.route_clear(j, i, if j == i { 0 } else { k }, psi)
                && (j == i || self.forward_lp(i, state.x, reach, j).feasible)
            {
                return j;
            }
        }
        self.fallback(state)
    }

    fn fallback(&self, state: &ExecutorState) -> usize {
        if self.at_stage_rest(state) || state.committed_j < state.stage {
            state.stage
        } else {
            state.committed_j
        }
    }

    /// Arrival-time check along the traced route to `j`.
    pub fn route_clear(&self, j: usize, i: usize, k: usize, psi: &[f64]) -> bool {
        let t = &self.tables;
        let total = t.tau(j, i, k);
        if !total.is_finite() {
            return false;
        }
        let mut m = k;
        for l in i..=j {
            let bound = if self.stop_stage_psi_only { psi[j] } else { psi[l] };
            if !(total - t.tau(j, l, m) < bound) {
                return false;
            }
            if l < j {
                m = t.rho(j, l, m);
            }
        }
        true
    }

    /// Selects `j_stop`, applies the greedy control for `dt` seconds with
    /// exact constant-`u` kinematics, and commits to `j_stop`. Crossing a
    /// stage mid-cycle re-solves the LP for the new segment.
    pub fn step_control(&self, state: &mut ExecutorState, psi: &[f64], dt: f64) -> ControlStep {
        let n = self.n();
        let mut j = self.select_stop_stage(state, psi);
        let i = state.stage;
        if i < n && j <= i + 1 {
            let reach = self.remaining(state);
            let continuing = state.hop_until.is_some_and(|mid| reach > mid) && state.committed_j == i + 1;
            if continuing {
                j = i + 1;
            } else if state.x == 0.0 && self.hop_clear(i, reach, psi) {
                j = i + 1;
                state.hop_until = Some(0.5 * reach);
            } else {
                state.hop_until = None;
            }
        } else {
            state.hop_until = None;
        }
        state.committed_j = j;
        let start = state.t;
        let mut elapsed = 0.0;
        let mut u = 0.0;
        let mut arrived = None;
        let mut infeasible = 0;
        let mut hopped = false;

        while elapsed < dt {
            let rest = dt - elapsed;
            let i = state.stage;
            if let Some(mid) = state.hop_until {
                let a = self.hop_accel[i];
                hopped = true;
                u = a;
                let v = state.x.sqrt();
                let gap = (state.to_next - mid).max(0.0);
                let x_mid = state.x + 2.0 * a * gap;
                let t_mid = 2.0 * gap / (v + x_mid.sqrt());
                if t_mid > rest {
                    self.advance(state, a, rest, gap);
                    break;
                }
                elapsed += t_mid;
                self.move_by(state, gap);
                state.x = x_mid;
                state.hop_until = None;
                continue;
            }
            if i >= n || i >= j {
                if i >= j {
                    state.x = 0.0;
                }
                u = 0.0;
                break;
            }
            let reach = self.remaining(state);
            let sol = self.forward_lp(i, state.x, reach, j);
            if !sol.feasible {
                debug_assert!(false, "forward LP infeasible at stage {i}, x={}, j={j}", state.x);
                infeasible += 1;
            }
            u = if sol.feasible {
                sol.u_star
            } else {
                self.constraints[i]
                    .segment_admissible_u(state.x.min(self.constraints[i].x_max), reach)
                    .map_or(0.0, |r| r.lo.max(-1e12))
            };
            if state.x == 0.0 && u <= 0.0 {
                u = 0.0;
                break;
            }
            let v = state.x.sqrt();
            let x_land = state.x + 2.0 * reach * u;
            let snap = SNAP_REL * (1.0 + state.x);
            if x_land < -snap {
                // Comes to rest inside the segment.
                let t_stop = v / -u;
                if t_stop >= rest {
                    self.advance(state, u, rest, reach);
                    break;
                }
                self.move_by(state, state.x / (-2.0 * u));
                state.x = 0.0;
                elapsed += t_stop;
                continue;
            }
            let x_land = if x_land <= snap { 0.0 } else { x_land };
            let t_cross = 2.0 * reach / (v + x_land.sqrt());
            if t_cross > rest {
                self.advance(state, u, rest, reach);
                break;
            }
            elapsed += t_cross;
            self.enter_stage(state, i + 1);
            state.x = x_land;
            if state.stage == n {
                arrived = Some(start + elapsed);
            }
        }
        state.t = start + dt;

        let i = state.stage;
        let v = state.x.sqrt();
        let qp = &self.grid.qp[i];
        let qpp = &self.grid.qpp[i];
        ControlStep {
            j_stop: j,
            u,
            qdot: qp.iter().map(|p| p * v).collect(),
            qddot: qp.iter().zip(qpp).map(|(p, pp)| pp * state.x + p * u).collect(),
            arrived,
            infeasible,
            hop: hopped,
        }
    }

    /// Constant `u` for `dt` seconds, moving at most `limit`.
    fn advance(&self, state: &mut ExecutorState, u: f64, dt: f64, limit: f64) {
        let v = state.x.sqrt();
        let v_next = (v + u * dt).max(0.0);
        self.move_by(state, (0.5 * (v + v_next) * dt).min(limit));
        state.x = v_next * v_next;
    }

    /// Continuous greedy pass from rest at stage 0 into `K[N][·]`.
    pub fn greedy_forward_pass(&self) -> GreedyProfile {
        let n = self.n();
        let mut x = vec![0.0; n + 1];
        let mut u = vec![0.0; n];
        let mut duration = 0.0;
        for i in 0..n {
            let reach = self.grid.deltas[i];
            let sol = self.forward_lp(i, x[i], reach, n);
            assert!(sol.feasible, "goal unreachable from stage {i}");
            u[i] = sol.u_star;
            let mut next = x[i] + 2.0 * reach * sol.u_star;
            if next <= SNAP_REL * (1.0 + x[i]) {
                next = 0.0;
            }
            x[i + 1] = next;
            duration += 2.0 * reach / (x[i].sqrt() + next.sqrt());
        }
        GreedyProfile { x, u, duration }
    }
}

/// Largest `a` such that `u = ±a` stays admissible for every
/// `x ∈ [0, a·reach]`, the squared velocities a rest-to-rest hop passes.
fn hop_accel(c: &StageConstraint, reach: f64) -> f64 {
    let mut a = c.x_max / reach;
    for r in &c.rows {
        for sign in [1.0, -1.0] {
            // Both ends of the x range; rows are linear in x.
            for coef in [sign * r.a, sign * r.a + r.b * reach] {
                if coef > 0.0 {
                    a = a.min(-r.c / coef);
                }
            }
        }
    }
    for &(b, cc) in &c.x_rows {
        if b > 0.0 {
            a = a.min(-cc / (b * reach));
        }
    }
    a.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{build_constraints, LimitSpec};
    use crate::lp::LpKernel;
    use crate::path::{build_spline, discretize, JointPath};
    use crate::reach::precompute;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn controller(grid: PathGrid, limits: &LimitSpec, m: usize) -> Controller {
        let cs = build_constraints(&grid, limits);
        let pre = precompute(&cs, &grid, m, &LpKernel::new(1)).unwrap();
        Controller::new(grid, cs, pre.family, pre.tables)
    }

    fn car() -> Controller {
        let grid = discretize(&JointPath::line(&[0.0], &[25.0]).unwrap(), 50);
        controller(grid, &LimitSpec::uniform(1, 20.0, 100.0), 50)
    }

    fn obstacle(v_max: f64) -> ObstacleInfo {
        ObstacleInfo {
            id: 0,
            position: [0.0; 3],
            v_max,
            radius: 0.0,
        }
    }

    #[test]
    fn psi_examples() {
        let field = DistanceField {
            d: vec![vec![5.0]; 4],
        };
        assert_eq!(time_to_arrive(&field, 0.0, &[obstacle(20.0)]), vec![0.25; 4]);
        let at = DistanceField { d: vec![vec![0.3]] };
        assert_eq!(time_to_arrive(&at, 0.3, &[obstacle(1.6)]), vec![0.0]);
        let none = DistanceField { d: vec![vec![]; 3] };
        assert_eq!(time_to_arrive(&none, 0.1, &[]), vec![f64::INFINITY; 3]);
        let inside = DistanceField { d: vec![vec![0.1, 4.0]] };
        let psi = time_to_arrive(&inside, 0.2, &[obstacle(1.0), obstacle(2.0)]);
        assert_abs_diff_eq!(psi[0], -0.1, epsilon = 1e-15);
        let still = time_to_arrive(&DistanceField { d: vec![vec![1.0], vec![0.0]] }, 0.5, &[obstacle(0.0)]);
        assert_eq!(still, vec![f64::INFINITY, f64::NEG_INFINITY]);
    }

    #[test]
    fn unobstructed_selects_goal_and_accelerates() {
        let c = car();
        let mut state = c.start_state(0.0);
        let psi = vec![f64::INFINITY; 51];
        assert_eq!(c.select_stop_stage(&state, &psi), 50);
        let step = c.step_control(&mut state, &psi, 0.004);
        assert_eq!(step.j_stop, 50);
        assert_abs_diff_eq!(step.u, 100.0, epsilon = 1e-9);
        assert!(state.x > 0.0);
    }

    #[test]
    fn blocked_robot_holds() {
        let c = car();
        let mut state = c.start_state(0.0);
        let psi = vec![0.0; 51];
        assert_eq!(c.select_stop_stage(&state, &psi), 0);
        let step = c.step_control(&mut state, &psi, 0.004);
        assert_eq!(step.u, 0.0);
        assert_eq!(step.qdot, vec![0.0]);
        assert_eq!((state.x, state.s, state.stage), (0.0, 0.0, 0));
    }

    #[test]
    fn greedy_pass_matches_bang_bang_car() {
        let c = car();
        let p = c.greedy_forward_pass();
        // 0.2 s up to 20 m/s, 21 m cruise, 0.2 s down.
        assert_abs_diff_eq!(p.duration, 0.2 + 21.0 / 20.0 + 0.2, epsilon = 1e-9);
        assert_eq!(p.x[50], 0.0);
        assert!(c.tables.tau(50, 0, 0) >= p.duration);
    }

    #[test]
    fn unobstructed_run_matches_greedy_pass() {
        let grid = discretize(
            &build_spline(&[vec![0.0, 0.3], vec![0.8, -0.4], vec![1.2, 0.5]]).unwrap(),
            60,
        );
        let c = controller(grid, &LimitSpec::new(vec![1.0, 1.5], vec![3.0, 4.0]).unwrap(), 30);
        let ideal = c.greedy_forward_pass().duration;
        let psi = vec![f64::INFINITY; c.n() + 1];
        let mut state = c.start_state(0.0);
        let mut arrival = None;
        for _ in 0..100_000 {
            let step = c.step_control(&mut state, &psi, 0.004);
            assert_eq!(step.infeasible, 0);
            if let Some(t) = step.arrived {
                arrival = Some(t);
                break;
            }
        }
        let arrival = arrival.expect("reaches goal");
        assert!((arrival - ideal).abs() <= 0.01 * ideal, "{arrival} vs {ideal}");
    }

    #[test]
    fn selection_matches_brute_force() {
        let c = car();
        let n = c.n();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let psi_of = |wall: f64, c: &Controller| -> Vec<f64> {
            c.grid.stages.iter().map(|s| (wall - s - 0.5) / 20.0).collect()
        };
        let mut state = c.start_state(0.0);
        let mut wall = 40.0;
        for _ in 0..300 {
            let psi = psi_of(wall, &c);
            let chosen = c.select_stop_stage(&state, &psi);
            // Direct re-evaluation over every j and every route stage.
            let i = state.stage;
            let k = c.velocity_index(&state);
            let mut expected = None;
            for j in (i + 1..=n).rev() {
                let tau = c.tables.tau(j, i, k);
                if !tau.is_finite() {
                    continue;
                }
                let mut ok = true;
                let mut m = k;
                for l in i..=j {
                    ok &= tau - c.tables.tau(j, l, m) < psi[l];
                    if l < j {
                        m = c.tables.rho(j, l, m);
                    }
                }
                if ok && c.forward_lp(i, state.x, c.remaining(&state), j).feasible {
                    expected = Some(j);
                    break;
                }
            }
            let expected = expected.unwrap_or_else(|| c.fallback(&state));
            assert_eq!(chosen, expected);
            c.step_control(&mut state, &psi, 0.004);
            wall -= rng.random_range(0.0..0.08);
        }
    }

    #[test]
    fn commitment_and_greedy_optimality() {
        let grid = discretize(
            &build_spline(&[vec![0.0, 0.0, 0.2], vec![0.5, -0.6, 0.9], vec![-0.3, 0.4, 0.1]]).unwrap(),
            50,
        );
        let limits = LimitSpec::new(vec![1.2, 0.9, 1.5], vec![4.0, 3.0, 5.0]).unwrap();
        let c = controller(grid, &limits, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = c.start_state(0.0);
        let mut checked = 0;
        for _ in 0..3000 {
            let psi: Vec<f64> = (0..=c.n()).map(|_| rng.random_range(0.2..3.0)).collect();
            let before = state.clone();
            let step = c.step_control(&mut state, &psi, 0.01);
            assert_eq!(step.infeasible, 0);
            if before.stage < step.j_stop {
                let reach = c.remaining(&before);
                let sol = c.forward_lp(before.stage, before.x, reach, step.j_stop);
                let target = c.family.get(step.j_stop, before.stage + 1).unwrap();
                let adm = c.constraints[before.stage].segment_admissible_u(before.x, reach);
                for _ in 0..5 {
                    let up = sol.u_star + 1e-9 + rng.random_range(0.0..1.0f64).powi(4) * 10.0;
                    let admissible = adm.is_some_and(|r| r.contains(up, 0.0));
                    let inside = target.contains(before.x + 2.0 * reach * up, 0.0);
                    assert!(!(admissible && inside));
                    checked += 1;
                }
            }
            if state.stage < state.committed_j && state.to_next == c.grid.deltas[state.stage] {
                let k = c.family.get(state.committed_j, state.stage).unwrap();
                assert!(k.contains(state.x, 1e-7 * (1.0 + k.hi)));
            }
            for (jd, lim) in step.qdot.iter().zip(&limits.v_max) {
                assert!(jd.abs() <= lim + 1e-6);
            }
            for (ja, lim) in step.qddot.iter().zip(&limits.a_max) {
                assert!(ja.abs() <= lim + 1e-6, "{ja} > {lim}");
            }
            if state.stage == c.n() {
                state = c.start_state(0.0);
            }
        }
        assert!(checked > 1000);
    }
}
