//! Fixed-step simulation of one or more robots sharing the same obstacles.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::baseline::{baseline_step, BaselineInput, BaselineParams};
use super::kinematics::{sphere_distance, Sphere};
use super::obstacles::ObstacleSim;
use super::scenario::{ControllerKind, Problem, Scenario};
use crate::error::{Error, Result};
use crate::executor::{time_to_arrive, Controller, ExecutorState, ObstacleInfo};

/// Path speed below which the robot counts as stationary.
pub const STOPPED_SPEED: f64 = 1e-9;
/// Slack on logged joint limits.
pub const LIMIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contact {
    None,
    Safe,
    Violation,
}

impl Contact {
    pub fn classify(min_dist: f64, d_protective: f64, sdot: f64) -> Self {
        if min_dist > d_protective {
            Contact::None
        } else if sdot > STOPPED_SPEED {
            Contact::Violation
        } else {
            Contact::Safe
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Contact::None => "none",
            Contact::Safe => "safe",
            Contact::Violation => "violation",
        }
    }
}

/// One robot's state at the end of a control cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub stage: usize,
    pub s: f64,
    pub sdot: f64,
    pub j_stop: Option<usize>,
    pub min_dist: f64,
    pub psi_min: Option<f64>,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub qddot: Vec<f64>,
    pub contact: Contact,
}

pub fn write_log_header<W: Write + ?Sized>(out: &mut W, dof: usize) -> std::io::Result<()> {
    let mut cols: Vec<String> = ["t", "stage", "s", "sdot", "j_stop", "min_dist", "psi_min"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for prefix in ["q", "qdot", "qddot"] {
        cols.extend((0..dof).map(|j| format!("{prefix}_{j}")));
    }
    cols.push("contact_class".into());
    writeln!(out, "{}", cols.join(","))
}

impl LogRow {
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        write!(
            out,
            "{:.6},{},{},{},{},{},{}",
            self.t,
            self.stage,
            self.s,
            self.sdot,
            self.j_stop.map(|j| j.to_string()).unwrap_or_default(),
            self.min_dist,
            self.psi_min.map(|p| p.to_string()).unwrap_or_default()
        )?;
        for v in self.q.iter().chain(&self.qdot).chain(&self.qddot) {
            write!(out, ",{v}")?;
        }
        writeln!(out, ",{}", self.contact.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub controller: ControllerKind,
    /// First time the goal stage was reached.
    pub arrival_time: Option<f64>,
    pub steps: usize,
    /// Cycles ending inside the protective distance while moving.
    pub violations: usize,
    /// Cycles ending inside the protective distance at rest.
    pub safe_contacts: usize,
    pub min_distance: f64,
    /// Smallest distance seen while moving.
    pub min_distance_moving: f64,
    /// Path speed at the first cycle inside the protective distance.
    pub first_contact_speed: Option<f64>,
    pub first_contact_time: Option<f64>,
    /// Cycles whose joint velocity or acceleration exceeded the limits.
    pub limit_violations: usize,
    pub max_velocity_ratio: f64,
    pub max_acceleration_ratio: f64,
    /// Times the robot came to rest before the goal.
    pub stops: usize,
    /// Forward LPs that came back infeasible.
    pub infeasible: usize,
    /// Obstacle retreat start times.
    pub retreats: Vec<f64>,
}

impl RunSummary {
    fn new(controller: ControllerKind) -> Self {
        Self {
            controller,
            arrival_time: None,
            steps: 0,
            violations: 0,
            safe_contacts: 0,
            min_distance: f64::INFINITY,
            min_distance_moving: f64::INFINITY,
            first_contact_speed: None,
            first_contact_time: None,
            limit_violations: 0,
            max_velocity_ratio: 0.0,
            max_acceleration_ratio: 0.0,
            stops: 0,
            infeasible: 0,
            retreats: Vec::new(),
        }
    }

    fn record(&mut self, row: &LogRow, prev_moving: bool, limits: &crate::constraint::LimitSpec) {
        self.steps += 1;
        match row.contact {
            Contact::Violation => self.violations += 1,
            Contact::Safe => self.safe_contacts += 1,
            Contact::None => {}
        }
        if row.contact != Contact::None && self.first_contact_time.is_none() {
            self.first_contact_time = Some(row.t);
            self.first_contact_speed = Some(row.sdot);
        }
        self.min_distance = self.min_distance.min(row.min_dist);
        let moving = row.sdot > STOPPED_SPEED;
        if moving {
            self.min_distance_moving = self.min_distance_moving.min(row.min_dist);
        }
        if prev_moving && !moving && self.arrival_time.is_none() {
            self.stops += 1;
        }
        let mut over = false;
        for ((qd, qdd), (v, a)) in row.qdot.iter().zip(&row.qddot).zip(limits.v_max.iter().zip(&limits.a_max)) {
            self.max_velocity_ratio = self.max_velocity_ratio.max(qd.abs() / v);
            self.max_acceleration_ratio = self.max_acceleration_ratio.max(qdd.abs() / a);
            over |= qd.abs() > v + LIMIT_TOL || qdd.abs() > a + LIMIT_TOL;
        }
        if over {
            self.limit_violations += 1;
        }
    }
}

#[derive(Debug, Clone)]
enum Policy {
    Ours { controller: Arc<Controller>, state: ExecutorState },
    Baseline { params: BaselineParams, s: f64, v: f64, goal_decel: f64 },
}

/// One simulated robot.
#[derive(Debug, Clone)]
pub struct Agent {
    policy: Policy,
    pub kind: ControllerKind,
    pub last: LogRow,
    pub summary: RunSummary,
    spheres: Vec<Sphere>,
}

impl Agent {
    pub fn spheres(&self) -> &[Sphere] {
        &self.spheres
    }

    pub fn arrived(&self) -> bool {
        self.summary.arrival_time.is_some()
    }

    pub fn state(&self) -> Option<&ExecutorState> {
        match &self.policy {
            Policy::Ours { state, .. } => Some(state),
            Policy::Baseline { .. } => None,
        }
    }
}

/// Robots, obstacles and the shared clock.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: Scenario,
    pub problem: Arc<Problem>,
    controller: Option<Arc<Controller>>,
    kinds: Vec<ControllerKind>,
    pub agents: Vec<Agent>,
    pub obstacles: Vec<ObstacleSim>,
    pub t: f64,
}

impl Simulation {
    /// `controller` is required for every `Ours` agent.
    pub fn new(
        scenario: Scenario,
        problem: Arc<Problem>,
        controller: Option<Arc<Controller>>,
        kinds: &[ControllerKind],
    ) -> Result<Self> {
        if kinds.contains(&ControllerKind::Ours) && controller.is_none() {
            return Err(Error::Scenario("precompute artifact missing for controller \"ours\"".into()));
        }
        let mut sim = Self {
            scenario,
            problem,
            controller,
            kinds: kinds.to_vec(),
            agents: Vec::new(),
            obstacles: Vec::new(),
            t: 0.0,
        };
        sim.reset();
        Ok(sim)
    }

    pub fn controller(&self) -> Option<&Arc<Controller>> {
        self.controller.as_ref()
    }

    /// Back to `t = 0`; precomputed tables are kept.
    pub fn reset(&mut self) {
        let p = &self.problem;
        let goal_decel = p
            .constraints
            .iter()
            .filter_map(|c| c.admissible_u(0.0))
            .map(|r| -r.lo)
            .fold(f64::INFINITY, f64::min)
            .max(0.0);
        let q0 = p.grid.q[0].clone();
        let spheres = p.model.spheres(&q0);
        self.agents = self
            .kinds
            .iter()
            .map(|&kind| {
                let policy = match kind {
                    ControllerKind::Ours => {
                        let controller = self.controller.clone().expect("checked in new");
                        let state = controller.start_state(self.scenario.d_protective);
                        Policy::Ours { controller, state }
                    }
                    ControllerKind::Baseline => Policy::Baseline {
                        params: self.scenario.baseline,
                        s: 0.0,
                        v: 0.0,
                        goal_decel,
                    },
                };
                Agent {
                    policy,
                    kind,
                    last: LogRow {
                        t: 0.0,
                        stage: 0,
                        s: 0.0,
                        sdot: 0.0,
                        j_stop: None,
                        min_dist: f64::INFINITY,
                        psi_min: None,
                        q: q0.clone(),
                        qdot: vec![0.0; q0.len()],
                        qddot: vec![0.0; q0.len()],
                        contact: Contact::None,
                    },
                    summary: RunSummary::new(kind),
                    spheres: spheres.clone(),
                }
            })
            .collect();
        let base = p.model.base;
        self.obstacles = self
            .scenario
            .obstacles
            .iter()
            .enumerate()
            .map(|(id, spec)| ObstacleSim::new(id as u32, spec.clone(), base))
            .collect();
        self.t = 0.0;
        let infos = self.obstacle_infos();
        for agent in &mut self.agents {
            agent.last.min_dist = min_dist(&agent.spheres, &infos);
        }
    }

    pub fn obstacle_infos(&self) -> Vec<ObstacleInfo> {
        self.obstacles.iter().map(ObstacleSim::info).collect()
    }

    pub fn done(&self) -> bool {
        self.t >= self.scenario.t_max - 1e-12 || self.agents.iter().all(Agent::arrived)
    }

    /// One control cycle for every agent, then the obstacles move.
    pub fn step(&mut self) {
        let dt = self.scenario.dt;
        let d_p = self.scenario.d_protective;
        let infos = self.obstacle_infos();
        let p = self.problem.clone();
        let t_end = self.t + dt;
        let was_moving: Vec<bool> = self.agents.iter().map(|a| a.last.sdot > STOPPED_SPEED).collect();
        for agent in &mut self.agents {
            let mut row = match &mut agent.policy {
                Policy::Ours { controller, state } => {
                    let field = p.geometry.planning_field(&infos);
                    let psi = time_to_arrive(&field, d_p, &infos);
                    let step = controller.step_control(state, &psi, dt);
                    agent.summary.infeasible += step.infeasible;
                    if let (Some(t), None) = (step.arrived, agent.summary.arrival_time) {
                        agent.summary.arrival_time = Some(t);
                    }
                    LogRow {
                        t: t_end,
                        stage: state.stage,
                        s: state.s,
                        sdot: state.sdot(),
                        j_stop: Some(step.j_stop),
                        min_dist: 0.0,
                        psi_min: Some(psi.iter().copied().fold(f64::INFINITY, f64::min)),
                        q: p.path.position(state.s),
                        qdot: step.qdot,
                        qddot: step.qddot,
                        contact: Contact::None,
                    }
                }
                Policy::Baseline {
                    params,
                    s,
                    v,
                    goal_decel,
                } => {
                    let n = p.grid.n();
                    let s_end = p.grid.s_end();
                    let i = p.grid.stage_at(*s);
                    let c = &p.constraints[i];
                    let x = *v * *v;
                    let range = c.admissible_u(x.min(c.x_max));
                    let cap = c.x_max.min(p.constraints[(i + 1).min(n)].x_max);
                    let input = BaselineInput {
                        v: *v,
                        distance: min_dist(&agent.spheres, &infos),
                        d_protective: d_p,
                        v_obstacle: infos.iter().map(|o| o.v_max).fold(0.0, f64::max),
                        v_max: cap.sqrt(),
                        accel: range.map_or(0.0, |r| r.hi.max(0.0)),
                        decel: range.map_or(0.0, |r| (-r.lo).max(0.0)).min(*goal_decel).max(1e-9),
                        to_goal: s_end - *s,
                        dt,
                    };
                    let v_next = baseline_step(params, &input);
                    let u = (v_next - *v) / dt;
                    let s_next = (*s + 0.5 * (*v + v_next) * dt).min(s_end);
                    *s = s_next;
                    *v = if s_next >= s_end - 1e-9 { 0.0 } else { v_next };
                    if s_next >= s_end - 1e-9 && agent.summary.arrival_time.is_none() {
                        agent.summary.arrival_time = Some(t_end);
                    }
                    let sample = p.path.sample(s_next);
                    let x = *v * *v;
                    LogRow {
                        t: t_end,
                        stage: p.grid.stage_at(s_next),
                        s: s_next,
                        sdot: *v,
                        j_stop: None,
                        min_dist: 0.0,
                        psi_min: None,
                        q: sample.q,
                        qdot: sample.qp.iter().map(|d| d * *v).collect(),
                        qddot: sample.qp.iter().zip(&sample.qpp).map(|(d, dd)| dd * x + d * u).collect(),
                        contact: Contact::None,
                    }
                }
            };
            agent.spheres = p.model.spheres(&row.q);
            row.min_dist = f64::NAN;
            agent.last = row;
        }

        let robots: Vec<&[Sphere]> = self.agents.iter().map(|a| a.spheres.as_slice()).collect();
        for o in &mut self.obstacles {
            o.advance(dt, t_end, &robots);
        }
        self.t = t_end;
        let infos = self.obstacle_infos();
        let limits = &self.problem.limits;
        let retreats: Vec<f64> = self.obstacles.iter().flat_map(|o| o.retreats.iter().copied()).collect();
        for (agent, prev_moving) in self.agents.iter_mut().zip(was_moving) {
            let row = &mut agent.last;
            row.min_dist = min_dist(&agent.spheres, &infos);
            row.contact = Contact::classify(row.min_dist, d_p, row.sdot);
            agent.summary.record(row, prev_moving, limits);
            agent.summary.retreats.clone_from(&retreats);
        }
    }

    /// Runs to completion, streaming agent `log_agent`'s rows to `log`.
    pub fn run_to_end(&mut self, mut log: Option<&mut dyn Write>, log_agent: usize) -> Result<()> {
        if let Some(out) = log.as_deref_mut() {
            write_log_header(out, self.problem.grid.dof())?;
        }
        while !self.done() {
            self.step();
            if let Some(out) = log.as_deref_mut() {
                self.agents[log_agent].last.write_csv(out)?;
            }
        }
        Ok(())
    }
}

/// Runs the scenario's own controller alone.
pub fn run_scenario(
    sc: &Scenario,
    controller: Option<Arc<Controller>>,
    log: Option<&mut dyn Write>,
) -> Result<RunSummary> {
    let problem = Arc::new(sc.problem()?);
    let controller = controller.map(|c| {
        let mut c = (*c).clone();
        c.stop_stage_psi_only = sc.stop_stage_psi_only;
        Arc::new(c)
    });
    let mut sim = Simulation::new(sc.clone(), problem, controller, &[sc.controller])?;
    sim.run_to_end(log, 0)?;
    Ok(sim.agents.remove(0).summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaceSummary {
    pub ours: RunSummary,
    pub baseline: RunSummary,
}

/// Both controllers in lockstep against the same obstacles.
pub fn race(sc: &Scenario, controller: Arc<Controller>) -> Result<RaceSummary> {
    let problem = Arc::new(sc.problem()?);
    let mut sim = Simulation::new(
        sc.clone(),
        problem,
        Some(controller),
        &[ControllerKind::Ours, ControllerKind::Baseline],
    )?;
    sim.run_to_end(None, 0)?;
    let baseline = sim.agents.pop().expect("two agents").summary;
    let ours = sim.agents.pop().expect("two agents").summary;
    Ok(RaceSummary { ours, baseline })
}

fn min_dist(spheres: &[Sphere], obstacles: &[ObstacleInfo]) -> f64 {
    obstacles
        .iter()
        .map(|o| sphere_distance(spheres, o))
        .fold(f64::INFINITY, f64::min)
}
