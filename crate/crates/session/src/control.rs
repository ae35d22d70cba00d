//! The control side: scenario catalog, the live session and its loop.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{Receiver, TryRecvError};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use safe_topp::sim::obstacles::move_toward;
use safe_topp::sim::run::STOPPED_SPEED;
use safe_topp::sim::{ControllerKind, Problem, Scenario, Simulation};
use safe_topp::{Controller, LpKernel};
use tokio::sync::{broadcast, watch};

use crate::protocol::{finite, ObstacleMsg, SphereMsg, StateFrame, SummaryMsg};

/// Truncates a requested position so the obstacle moves at most
/// `v_max * tick` from `from`.
pub fn clamp_command(from: [f64; 3], requested: [f64; 3], v_max: f64, tick: f64) -> [f64; 3] {
    move_toward(from, requested, v_max * tick)
}

struct Entry {
    scenario: Scenario,
    problem: Option<Arc<Problem>>,
    controller: Option<Arc<Controller>>,
}

/// Scenarios a client may `load`, with their tables built on first use.
pub struct Catalog {
    entries: BTreeMap<String, Entry>,
    threads: usize,
}

impl Catalog {
    pub fn new(threads: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            threads,
        }
    }

    /// The built-in car and arm scenarios.
    pub fn with_presets(mut self) -> Self {
        self.insert(Scenario::car_race(20.0), None);
        self.insert(Scenario::arm_pursuit(0), None);
        self
    }

    /// Adds or replaces `sc` under its name. A supplied controller must
    /// belong to the scenario's problem.
    pub fn insert(&mut self, sc: Scenario, controller: Option<Arc<Controller>>) {
        self.entries.insert(
            sc.name.clone(),
            Entry {
                scenario: sc,
                problem: None,
                controller,
            },
        );
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    fn open(&mut self, name: &str) -> Result<Simulation, String> {
        let threads = self.threads;
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| format!("unknown scenario \"{name}\""))?;
        let problem = match &e.problem {
            Some(p) => p.clone(),
            None => {
                let p = Arc::new(e.scenario.problem().map_err(|err| err.to_string())?);
                e.problem = Some(p.clone());
                p
            }
        };
        let kind = e.scenario.controller;
        if kind == ControllerKind::Ours && e.controller.is_none() {
            let mut c = problem
                .precompute(e.scenario.m, &LpKernel::new(threads))
                .map_err(|err| err.to_string())?;
            c.stop_stage_psi_only = e.scenario.stop_stage_psi_only;
            e.controller = Some(Arc::new(c));
        }
        Simulation::new(e.scenario.clone(), problem, e.controller.clone(), &[kind]).map_err(|err| err.to_string())
    }
}

/// One running episode plus the catalog it was loaded from.
pub struct Session {
    catalog: Catalog,
    pub sim: Simulation,
    reported: bool,
}

impl Session {
    pub fn new(mut catalog: Catalog, name: &str) -> Result<Self, String> {
        let sim = catalog.open(name)?;
        Ok(Self {
            catalog,
            sim,
            reported: false,
        })
    }

    pub fn name(&self) -> &str {
        &self.sim.scenario.name
    }

    pub fn reset(&mut self) {
        self.sim.reset();
        self.reported = false;
    }

    pub fn load(&mut self, name: &str) -> Result<(), String> {
        self.sim = self.catalog.open(name)?;
        self.reported = false;
        Ok(())
    }

    /// Points obstacle `id` at `requested`, clamped to one command tick.
    pub fn command_obstacle(&mut self, id: usize, requested: [f64; 3], tick: f64) -> Result<(), String> {
        let o = self
            .sim
            .obstacles
            .get_mut(id)
            .ok_or_else(|| format!("no obstacle {id}"))?;
        let target = clamp_command(o.position, requested, o.spec.v_max, tick);
        o.set_target(target);
        Ok(())
    }

    pub fn freeze(&mut self, id: usize) {
        if let Some(o) = self.sim.obstacles.get_mut(id) {
            o.freeze();
        }
    }

    /// One control cycle. Returns the summary the first time the episode
    /// is over; after that the world holds still.
    pub fn tick(&mut self) -> Option<SummaryMsg> {
        if !self.sim.done() {
            self.sim.step();
        }
        if self.sim.done() && !self.reported {
            self.reported = true;
            return Some(SummaryMsg::new(self.name(), &self.sim.agents[0].summary));
        }
        None
    }

    pub fn frame(&self) -> StateFrame {
        let sim = &self.sim;
        let agent = &sim.agents[0];
        let row = &agent.last;
        StateFrame {
            scenario: sim.scenario.name.clone(),
            t: sim.t,
            n: sim.problem.grid.n(),
            stage: row.stage,
            s: row.s,
            sdot: row.sdot,
            joints: row.q.clone(),
            spheres: agent
                .spheres()
                .iter()
                .map(|s| SphereMsg {
                    x: s.center[0],
                    y: s.center[1],
                    z: s.center[2],
                    r: s.radius,
                })
                .collect(),
            obstacles: sim
                .obstacles
                .iter()
                .map(|o| ObstacleMsg {
                    id: o.id,
                    x: o.position[0],
                    y: o.position[1],
                    z: o.position[2],
                    r: o.spec.radius,
                })
                .collect(),
            min_dist: finite(row.min_dist),
            j_stop: row.j_stop,
            stopped: row.sdot <= STOPPED_SPEED,
            contact: row.contact,
            psi_min: row.psi_min.and_then(finite),
        }
    }
}

/// Latest requested position per obstacle. Writers overwrite; the control
/// loop takes whatever is there once per cycle.
#[derive(Default)]
pub struct Mailbox {
    slots: Mutex<BTreeMap<u32, [f64; 3]>>,
}

impl Mailbox {
    pub fn post(&self, id: u32, p: [f64; 3]) {
        self.slots.lock().unwrap_or_else(|e| e.into_inner()).insert(id, p);
    }

    /// Never waits on a writer; a contended cycle picks the commands up
    /// on the next one.
    fn take(&self) -> BTreeMap<u32, [f64; 3]> {
        match self.slots.try_lock() {
            Ok(mut slots) => std::mem::take(&mut *slots),
            Err(_) => BTreeMap::new(),
        }
    }

    fn clear(&self) {
        self.slots.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }
}

/// Requests the network side hands to the control loop.
pub enum Command {
    Reset,
    Load {
        name: String,
        reply: tokio::sync::oneshot::Sender<Result<(), String>>,
    },
    Freeze(Vec<u32>),
}

/// Shared between the control thread and the network tasks.
pub struct Shared {
    pub mailbox: Mailbox,
    pub clients: AtomicUsize,
    pub stop: AtomicBool,
    pub obstacle_count: AtomicUsize,
}

pub struct LoopConfig {
    /// Simulated seconds per wall second.
    pub speed: f64,
    /// Obstacle command clamp interval (s).
    pub command_tick: f64,
}

/// Runs cycles at `dt / speed` wall seconds each until `shared.stop`.
/// Idles until the first client connects.
pub fn control_loop(
    mut session: Session,
    cfg: LoopConfig,
    shared: Arc<Shared>,
    commands: Receiver<Command>,
    frames: watch::Sender<Arc<StateFrame>>,
    summaries: broadcast::Sender<SummaryMsg>,
) {
    let publish = |session: &Session| {
        frames.send_replace(Arc::new(session.frame()));
        shared.obstacle_count.store(session.sim.obstacles.len(), Ordering::Release);
    };
    publish(&session);
    while shared.clients.load(Ordering::Acquire) == 0 {
        if shared.stop.load(Ordering::Acquire) {
            return;
        }
        std::thread::sleep(Duration::from_millis(1));
    }
    let mut start = Instant::now();
    let mut cycles: u64 = 0;
    while !shared.stop.load(Ordering::Acquire) {
        let mut restarted = false;
        loop {
            match commands.try_recv() {
                Ok(Command::Reset) => {
                    session.reset();
                    restarted = true;
                }
                Ok(Command::Load { name, reply }) => {
                    let r = session.load(&name);
                    restarted |= r.is_ok();
                    let _ = reply.send(r);
                }
                Ok(Command::Freeze(ids)) => {
                    for id in ids {
                        session.freeze(id as usize);
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return,
            }
        }
        if restarted {
            shared.mailbox.clear();
        }
        for (id, p) in shared.mailbox.take() {
            // Unknown ids were rejected by the network side against the
            // count at the time; a load in between can still shrink it.
            let _ = session.command_obstacle(id as usize, p, cfg.command_tick);
        }
        if let Some(summary) = session.tick() {
            let _ = summaries.send(summary);
        }
        publish(&session);

        cycles += 1;
        let period = session.sim.scenario.dt / cfg.speed;
        let due = start + Duration::from_secs_f64(period * cycles as f64);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        } else if now - due > Duration::from_millis(100) {
            // Far behind (a load, a stall): drop the backlog instead of
            // bursting.
            start = now;
            cycles = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use safe_topp::sim::{ObstacleScript, ObstacleSpec};

    fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    #[test]
    fn teleport_is_truncated_to_one_tick() {
        let from = [1.0, 2.0, 0.0];
        let to = clamp_command(from, [11.0, 2.0, 0.0], 1.6, 0.033);
        assert!((dist(from, to) - 0.0528).abs() < 1e-12);
        assert!((to[0] - 1.0528).abs() < 1e-12 && to[1] == 2.0);
        let near = clamp_command(from, [1.01, 2.0, 0.0], 1.6, 0.033);
        assert_eq!(near, [1.01, 2.0, 0.0]);
    }

    fn external_arm() -> Scenario {
        let mut sc = Scenario::arm_pursuit(0);
        sc.name = "ext".into();
        sc.n = 40;
        sc.m = 12;
        sc.obstacles = vec![ObstacleSpec {
            script: ObstacleScript::External { start: [3.0, 3.0, 0.0] },
            v_max: 1.6,
            radius: 0.1,
            seed: 0,
        }];
        sc
    }

    #[test]
    fn session_applies_clamped_commands() {
        let mut cat = Catalog::new(1);
        cat.insert(external_arm(), None);
        let mut s = Session::new(cat, "ext").unwrap();
        s.command_obstacle(0, [13.0, 3.0, 0.0], 0.033).unwrap();
        for _ in 0..20 {
            s.tick();
        }
        let p = s.sim.obstacles[0].position;
        assert!((dist(p, [3.0, 3.0, 0.0]) - 0.0528).abs() < 1e-12, "{p:?}");
        assert!(s.command_obstacle(1, [0.0; 3], 0.033).is_err());
    }

    #[test]
    fn episode_reports_once_and_reset_replays() {
        let mut cat = Catalog::new(1);
        cat.insert(external_arm(), None);
        let mut s = Session::new(cat, "ext").unwrap();
        let first = s.frame();
        let mut summaries = Vec::new();
        for _ in 0..20_000 {
            summaries.extend(s.tick());
        }
        assert_eq!(summaries.len(), 1);
        assert!(summaries[0].arrival_time.is_some());
        assert_eq!(summaries[0].violations, 0);
        s.reset();
        assert_eq!(s.frame(), first);
        assert!(s.load("nope").is_err());
        assert_eq!(s.name(), "ext");
    }
}
