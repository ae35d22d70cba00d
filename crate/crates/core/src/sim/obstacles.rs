//! Obstacle motion scripts. Every script moves at most `v_max·dt` per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kinematics::Sphere;
use crate::executor::ObstacleInfo;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ObstacleScript {
    /// Moves along -x until it touches the nearest robot, waits, then moves
    /// along +x for good.
    ScriptedWall {
        start: [f64; 3],
        #[serde(default = "default_dwell")]
        dwell: f64,
    },
    /// Straight lines at full speed, reflecting off the box walls. The
    /// initial heading comes from the seed.
    Bounce {
        start: [f64; 3],
        box_min: [f64; 3],
        box_max: [f64; 3],
    },
    /// Heads for the nearest robot sphere at full speed and stops on
    /// contact, waits, backs off, and repeats `attacks` times before leaving.
    Pursuit {
        /// Fixed start; otherwise placed on a seeded circle of `start_radius`.
        #[serde(default)]
        start: Option<[f64; 3]>,
        #[serde(default = "default_start_radius")]
        start_radius: f64,
        #[serde(default = "default_attacks")]
        attacks: usize,
        #[serde(default = "default_dwell")]
        dwell: f64,
        #[serde(default = "default_retreat")]
        retreat: f64,
    },
    /// Driven by an outside source through [`ObstacleSim::set_target`].
    External { start: [f64; 3] },
}

fn default_dwell() -> f64 {
    1.0
}
fn default_start_radius() -> f64 {
    1.6
}
fn default_attacks() -> usize {
    3
}
fn default_retreat() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub script: ObstacleScript,
    pub v_max: f64,
    #[serde(default)]
    pub radius: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Approach,
    Dwell,
    Retreat,
    Leave,
    Idle,
}

/// Live obstacle state.
#[derive(Debug, Clone)]
pub struct ObstacleSim {
    pub spec: ObstacleSpec,
    pub id: u32,
    pub position: [f64; 3],
    pub phase: Phase,
    phase_time: f64,
    attacks_done: usize,
    heading: [f64; 3],
    target: Option<[f64; 3]>,
    /// Start times of every retreat.
    pub retreats: Vec<f64>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn len(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Moves `from` toward `to` by at most `step`.
pub fn move_toward(from: [f64; 3], to: [f64; 3], step: f64) -> [f64; 3] {
    let d = sub(to, from);
    let l = len(d);
    if l <= step || l == 0.0 {
        return to;
    }
    let f = step / l;
    [from[0] + d[0] * f, from[1] + d[1] * f, from[2] + d[2] * f]
}

impl ObstacleSim {
    pub fn new(id: u32, spec: ObstacleSpec, robot_base: [f64; 3]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (position, phase) = match &spec.script {
            ObstacleScript::ScriptedWall { start, .. } => (*start, Phase::Approach),
            ObstacleScript::Bounce { start, .. } => (*start, Phase::Approach),
            ObstacleScript::Pursuit {
                start, start_radius, ..
            } => {
                let p = start.unwrap_or_else(|| {
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    [
                        robot_base[0] + start_radius * a.cos(),
                        robot_base[1] + start_radius * a.sin(),
                        robot_base[2],
                    ]
                });
                (p, Phase::Approach)
            }
            ObstacleScript::External { start } => (*start, Phase::Idle),
        };
        let heading = match &spec.script {
            ObstacleScript::Bounce { box_min, box_max, .. } => {
                let planar = box_min[2] == box_max[2];
                loop {
                    let h = [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        if planar { 0.0 } else { rng.random_range(-1.0..1.0) },
                    ];
                    let l = len(h);
                    if l > 0.1 && l <= 1.0 {
                        break [h[0] / l, h[1] / l, h[2] / l];
                    }
                }
            }
            _ => [0.0; 3],
        };
        Self {
            spec,
            id,
            position,
            phase,
            phase_time: 0.0,
            attacks_done: 0,
            heading,
            target: None,
            retreats: Vec::new(),
        }
    }

    pub fn info(&self) -> ObstacleInfo {
        ObstacleInfo {
            id: self.id,
            position: self.position,
            v_max: self.spec.v_max,
            radius: self.spec.radius,
        }
    }

    /// Hands control to an outside source; the obstacle heads for `p` at
    /// no more than `v_max`. The latest target wins.
    pub fn set_target(&mut self, p: [f64; 3]) {
        self.target = Some(p);
        self.phase = Phase::Idle;
    }

    /// Stops an externally driven obstacle where it is.
    pub fn freeze(&mut self) {
        if self.target.is_some() {
            self.target = Some(self.position);
        }
    }

    pub fn is_external(&self) -> bool {
        self.target.is_some() || matches!(self.spec.script, ObstacleScript::External { .. })
    }

    /// Closest robot sphere across every robot: (surface distance, centre).
    fn nearest(&self, robots: &[&[Sphere]]) -> Option<(f64, [f64; 3])> {
        robots
            .iter()
            .flat_map(|r| r.iter())
            .map(|s| (len(sub(s.center, self.position)) - s.radius - self.spec.radius, s.center))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Advances by `dt` seconds; `t` is the time at the end of the step.
    pub fn advance(&mut self, dt: f64, t: f64, robots: &[&[Sphere]]) {
        let step = self.spec.v_max * dt;
        if let Some(target) = self.target {
            self.position = move_toward(self.position, target, step);
            return;
        }
        self.phase_time += dt;
        match self.spec.script.clone() {
            ObstacleScript::ScriptedWall { dwell, .. } => match self.phase {
                Phase::Approach => {
                    let gap = self.nearest(robots).map_or(f64::INFINITY, |n| n.0.max(0.0));
                    self.position[0] -= step.min(gap);
                    if gap <= step {
                        self.enter(Phase::Dwell);
                    }
                }
                Phase::Dwell if self.phase_time >= dwell => {
                    self.retreats.push(t);
                    self.enter(Phase::Leave);
                }
                Phase::Leave => self.position[0] += step,
                _ => {}
            },
            ObstacleScript::Bounce { box_min, box_max, .. } => {
                for a in 0..3 {
                    let mut p = self.position[a] + self.heading[a] * step;
                    if p > box_max[a] {
                        p = 2.0 * box_max[a] - p;
                        self.heading[a] = -self.heading[a];
                    } else if p < box_min[a] {
                        p = 2.0 * box_min[a] - p;
                        self.heading[a] = -self.heading[a];
                    }
                    self.position[a] = p.clamp(box_min[a], box_max[a]);
                }
            }
            ObstacleScript::Pursuit {
                attacks, dwell, retreat, ..
            } => {
                let Some((gap, center)) = self.nearest(robots) else {
                    return;
                };
                match self.phase {
                    Phase::Approach => {
                        let target_len = step.min(gap.max(0.0));
                        self.position = move_toward(self.position, center, target_len);
                        if gap <= step {
                            self.enter(Phase::Dwell);
                        }
                    }
                    Phase::Dwell if self.phase_time >= dwell => {
                        self.retreats.push(t);
                        self.attacks_done += 1;
                        self.enter(if self.attacks_done >= attacks {
                            Phase::Leave
                        } else {
                            Phase::Retreat
                        });
                    }
                    Phase::Retreat | Phase::Leave => {
                        let away = sub(self.position, center);
                        let l = len(away).max(1e-12);
                        let to = [
                            self.position[0] + away[0] / l,
                            self.position[1] + away[1] / l,
                            self.position[2] + away[2] / l,
                        ];
                        self.position = move_toward(self.position, to, step);
                        if self.phase == Phase::Retreat && self.phase_time >= retreat {
                            self.enter(Phase::Approach);
                        }
                    }
                    _ => {}
                }
            }
            ObstacleScript::External { .. } => {}
        }
    }

    fn enter(&mut self, phase: Phase) {
        self.phase = phase;
        self.phase_time = 0.0;
    }
}
