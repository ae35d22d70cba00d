//! Serial-chain forward kinematics and the bounding-sphere robot model.

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::executor::{DistanceField, ObstacleInfo};
use crate::path::{JointPath, PathGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One joint followed by a rigid link. Spheres are given in the frame after
/// the joint motion; `offset` moves to the next joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub joint: JointKind,
    pub axis: [f64; 3],
    #[serde(default)]
    pub offset: [f64; 3],
    #[serde(default)]
    pub spheres: Vec<Sphere>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    #[serde(default)]
    pub base: [f64; 3],
    pub links: Vec<LinkSpec>,
}

fn link_spheres(length: f64, count: usize, radius: f64) -> Vec<Sphere> {
    (0..count)
        .map(|c| Sphere {
            center: [length * (c as f64 + 0.5) / count as f64, 0.0, 0.0],
            radius,
        })
        .collect()
}

impl RobotModel {
    /// Point car driving along +x.
    pub fn car() -> Self {
        Self {
            base: [0.0; 3],
            links: vec![LinkSpec {
                joint: JointKind::Prismatic,
                axis: [1.0, 0.0, 0.0],
                offset: [0.0; 3],
                spheres: vec![Sphere {
                    center: [0.0; 3],
                    radius: 0.0,
                }],
            }],
        }
    }

    /// Desk-scale planar arm, links 0.5/0.4/0.3 m, two spheres per link.
    pub fn planar_arm3() -> Self {
        let links = [0.5, 0.4, 0.3]
            .iter()
            .map(|&l| LinkSpec {
                joint: JointKind::Revolute,
                axis: [0.0, 0.0, 1.0],
                offset: [l, 0.0, 0.0],
                spheres: link_spheres(l, 2, 0.08),
            })
            .collect();
        Self {
            base: [0.0; 3],
            links,
        }
    }

    /// 6-DoF spatial arm with an anthropomorphic joint layout.
    pub fn spatial_arm6() -> Self {
        let z = [0.0, 0.0, 1.0];
        let y = [0.0, 1.0, 0.0];
        let x = [1.0, 0.0, 0.0];
        let link = |axis: [f64; 3], offset: [f64; 3], spheres: Vec<Sphere>| LinkSpec {
            joint: JointKind::Revolute,
            axis,
            offset,
            spheres,
        };
        let along_z = |l: f64, n: usize, r: f64| -> Vec<Sphere> {
            link_spheres(l, n, r)
                .into_iter()
                .map(|s| Sphere {
                    center: [0.0, 0.0, s.center[0]],
                    radius: s.radius,
                })
                .collect()
        };
        Self {
            base: [0.0; 3],
            links: vec![
                link(z, [0.0, 0.0, 0.3], along_z(0.3, 1, 0.1)),
                link(y, [0.45, 0.0, 0.0], link_spheres(0.45, 3, 0.08)),
                link(y, [0.4, 0.0, 0.0], link_spheres(0.4, 2, 0.07)),
                link(x, [0.0; 3], vec![]),
                link(y, [0.1, 0.0, 0.0], link_spheres(0.1, 1, 0.06)),
                link(x, [0.08, 0.0, 0.0], link_spheres(0.08, 1, 0.05)),
            ],
        }
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn sphere_count(&self) -> usize {
        self.links.iter().map(|l| l.spheres.len()).sum()
    }

    /// World-frame spheres at joint configuration `q`.
    pub fn spheres(&self, q: &[f64]) -> Vec<Sphere> {
        assert_eq!(q.len(), self.dof(), "configuration size");
        let mut out = Vec::with_capacity(self.sphere_count());
        let mut frame = Isometry3::from_parts(Translation3::from(Vector3::from(self.base)), UnitQuaternion::identity());
        for (link, &qi) in self.links.iter().zip(q) {
            let axis = Unit::new_normalize(Vector3::from(link.axis));
            let motion = match link.joint {
                JointKind::Revolute => Isometry3::from_parts(
                    Translation3::identity(),
                    UnitQuaternion::from_axis_angle(&axis, qi),
                ),
                JointKind::Prismatic => Isometry3::from_parts(
                    Translation3::from(axis.into_inner() * qi),
                    UnitQuaternion::identity(),
                ),
            };
            frame *= motion;
            for s in &link.spheres {
                let c = frame.transform_point(&Vector3::from(s.center).into());
                out.push(Sphere {
                    center: [c.x, c.y, c.z],
                    radius: s.radius,
                });
            }
            frame *= Translation3::from(Vector3::from(link.offset));
        }
        out
    }
}

fn norm(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Surface distance between a sphere set and an obstacle, clamped at 0.
pub fn sphere_distance(spheres: &[Sphere], obstacle: &ObstacleInfo) -> f64 {
    spheres
        .iter()
        .map(|s| norm(s.center, obstacle.position) - s.radius - obstacle.radius)
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// `d[l][q]` for spheres posed at every stage.
pub fn min_distances(stage_spheres: &[Vec<Sphere>], obstacles: &[ObstacleInfo]) -> DistanceField {
    DistanceField {
        d: stage_spheres
            .iter()
            .map(|spheres| obstacles.iter().map(|o| sphere_distance(spheres, o)).collect())
            .collect(),
    }
}

/// Spheres at every stage pose plus the sweep radius of each stage: how far
/// any sphere center travels between that stage and its neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGeometry {
    pub spheres: Vec<Vec<Sphere>>,
    pub sweep: Vec<f64>,
}

const SWEEP_SAMPLES: usize = 8;
/// Headroom over the sampled sweep for curvature between samples.
const SWEEP_FACTOR: f64 = 1.05;

impl StageGeometry {
    pub fn new(model: &RobotModel, path: &JointPath, grid: &PathGrid) -> Self {
        let spheres: Vec<Vec<Sphere>> = grid.q.iter().map(|q| model.spheres(q)).collect();
        let n = grid.n();
        let mut seg_sweep = vec![0.0f64; n];
        for i in 0..n {
            let (a, b) = (grid.stages[i], grid.stages[i + 1]);
            for r in 1..=SWEEP_SAMPLES {
                let s = a + (b - a) * r as f64 / SWEEP_SAMPLES as f64;
                let pose = model.spheres(&path.position(s));
                for (c, p) in pose.iter().enumerate() {
                    // Distance from the points at both segment ends.
                    let d = norm(p.center, spheres[i][c].center).max(norm(p.center, spheres[i + 1][c].center));
                    seg_sweep[i] = seg_sweep[i].max(d);
                }
            }
        }
        let sweep = (0..=n)
            .map(|l| {
                let before = if l > 0 { seg_sweep[l - 1] } else { 0.0 };
                let after = if l < n { seg_sweep[l] } else { 0.0 };
                before.max(after) * SWEEP_FACTOR
            })
            .collect();
        Self { spheres, sweep }
    }

    /// Exact stage distances.
    pub fn distances(&self, obstacles: &[ObstacleInfo]) -> DistanceField {
        min_distances(&self.spheres, obstacles)
    }

    /// Stage distances shrunk by the sweep radius, so each entry bounds the
    /// distance to every pose on both adjacent segments.
    pub fn planning_field(&self, obstacles: &[ObstacleInfo]) -> DistanceField {
        let mut field = self.distances(obstacles);
        for (row, sweep) in field.d.iter_mut().zip(&self.sweep) {
            for d in row.iter_mut() {
                *d = (*d - sweep).max(0.0);
            }
        }
        field
    }
}
