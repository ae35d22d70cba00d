//! Scenario files (JSON) and the problem data they expand to.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::baseline::BaselineParams;
use super::kinematics::{RobotModel, StageGeometry};
use super::obstacles::{ObstacleScript, ObstacleSpec};
use crate::artifact::Artifact;
use crate::constraint::{build_constraints, LimitSpec, StageConstraint};
use crate::error::{Error, Result};
use crate::executor::Controller;
use crate::lp::LpKernel;
use crate::path::{build_spline, discretize, JointPath, PathFile, PathGrid};
use crate::reach::precompute;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum World {
    Car1d,
    Arm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PathSource {
    /// Straight joint-space line, parameterized by arc length.
    Line { from: Vec<f64>, to: Vec<f64> },
    /// Clamped cubic spline through the waypoints.
    Waypoints { waypoints: Vec<Vec<f64>> },
    /// Waypoint file, relative to the scenario file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Ours,
    Baseline,
}

fn default_controller() -> ControllerKind {
    ControllerKind::Ours
}
fn default_dt() -> f64 {
    0.004
}
fn default_t_max() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub world: World,
    /// Defaults to the point car or the planar/spatial arm matching the path.
    #[serde(default)]
    pub robot: Option<RobotModel>,
    pub path: PathSource,
    pub limits: LimitSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    #[serde(default)]
    pub stop_stage_psi_only: bool,
    #[serde(default)]
    pub d_protective: f64,
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub baseline: BaselineParams,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Everything derived from a scenario before precomputation.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: RobotModel,
    pub path: JointPath,
    pub grid: PathGrid,
    pub constraints: Vec<StageConstraint>,
    pub limits: LimitSpec,
    pub geometry: Arc<StageGeometry>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Self = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut sc = Self::from_json(&std::fs::read_to_string(path)?)?;
        sc.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Scenario(msg));
        self.limits.validate()?;
        if self.n == 0 || self.m == 0 {
            return bad("n and m must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_max > 0.0) {
            return bad("t_max must be positive".into());
        }
        if !(self.d_protective >= 0.0) {
            return bad("d_protective must be non-negative".into());
        }
        if !(self.baseline.t_stop > 0.0) {
            return bad("baseline.t_stop must be positive".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.v_max >= 0.0 && o.v_max.is_finite()) || !(o.radius >= 0.0) {
                return bad(format!("obstacle {i}: v_max and radius must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn robot_model(&self) -> RobotModel {
        if let Some(r) = &self.robot {
            return r.clone();
        }
        match self.world {
            World::Car1d => RobotModel::car(),
            World::Arm if self.limits.dof() == 6 => RobotModel::spatial_arm6(),
            World::Arm => RobotModel::planar_arm3(),
        }
    }

    pub fn joint_path(&self) -> Result<JointPath> {
        match &self.path {
            PathSource::Line { from, to } => JointPath::line(from, to),
            PathSource::Waypoints { waypoints } => build_spline(waypoints),
            PathSource::File { path } => build_spline(&PathFile::load(self.base_dir.join(path))?.waypoints),
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        let path = self.joint_path()?;
        let model = self.robot_model();
        if path.dof() != self.limits.dof() || path.dof() != model.dof() {
            return Err(Error::Scenario(format!(
                "path has {} joints, limits {}, robot {}",
                path.dof(),
                self.limits.dof(),
                model.dof()
            )));
        }
        let grid = discretize(&path, self.n);
        let constraints = build_constraints(&grid, &self.limits);
        let geometry = Arc::new(StageGeometry::new(&model, &path, &grid));
        Ok(Problem {
            model,
            path,
            grid,
            constraints,
            limits: self.limits.clone(),
            geometry,
        })
    }

    /// Two cars against a wall: goal 25 m, 20 m/s, 100 m/s², wall starting
    /// at 40 m and waiting 1 s after contact.
    pub fn car_race(wall_speed: f64) -> Self {
        Self {
            name: "car-race".into(),
            world: World::Car1d,
            robot: None,
            path: PathSource::Line {
                from: vec![0.0],
                to: vec![25.0],
            },
            limits: LimitSpec::uniform(1, 20.0, 100.0),
            obstacles: vec![ObstacleSpec {
                script: ObstacleScript::ScriptedWall {
                    start: [40.0, 0.0, 0.0],
                    dwell: 1.0,
                },
                v_max: wall_speed,
                radius: 0.0,
                seed: 0,
            }],
            controller: ControllerKind::Ours,
            stop_stage_psi_only: false,
            d_protective: 0.0,
            n: 50,
            m: 50,
            dt: 0.004,
            t_max: 20.0,
            baseline: BaselineParams { t_stop: 0.55 },
            base_dir: PathBuf::new(),
        }
    }

    /// Planar 3-DoF arm attacked by a pursuer at human walking speed.
    pub fn arm_pursuit(seed: u64) -> Self {
        Self {
            name: "arm-pursuit".into(),
            world: World::Arm,
            robot: None,
            path: PathSource::Waypoints {
                waypoints: vec![
                    vec![-1.2, 0.9, 0.5],
                    vec![0.2, -0.6, 1.0],
                    vec![1.3, 0.4, -0.6],
                    vec![0.1, 1.1, 0.3],
                ],
            },
            limits: LimitSpec::new(vec![1.0, 1.0, 1.5], vec![3.0, 3.0, 5.0]).expect("valid limits"),
            obstacles: vec![ObstacleSpec {
                script: ObstacleScript::Pursuit {
                    start: None,
                    start_radius: 1.4,
                    attacks: 4,
                    dwell: 0.5,
                    retreat: 1.0,
                },
                v_max: 1.6,
                radius: 0.1,
                seed,
            }],
            controller: ControllerKind::Ours,
            stop_stage_psi_only: false,
            d_protective: 0.1,
            n: 100,
            m: 30,
            dt: 0.004,
            t_max: 60.0,
            baseline: BaselineParams::default(),
            base_dir: PathBuf::new(),
        }
    }
}

impl Problem {
    pub fn precompute(&self, m: usize, kernel: &LpKernel) -> Result<Controller> {
        let pre = precompute(&self.constraints, &self.grid, m, kernel)?;
        Ok(Controller::new(self.grid.clone(), self.constraints.clone(), pre.family, pre.tables))
    }

    pub fn artifact_controller(&self, artifact: Artifact) -> Result<Controller> {
        artifact.check_matches(&self.grid, &self.constraints)?;
        Ok(Controller::new(
            self.grid.clone(),
            self.constraints.clone(),
            artifact.family,
            artifact.tables,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_json() {
        for sc in [Scenario::car_race(20.0), Scenario::arm_pursuit(4)] {
            let back = Scenario::from_json(&sc.to_json()).unwrap();
            assert_eq!(back, sc);
            sc.problem().unwrap();
        }
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let sc = Scenario::from_json(
            r#"{"world":"car1d","path":{"type":"line","from":[0],"to":[5]},
                "limits":{"v_max":[2],"a_max":[1]},"n":10,"m":5}"#,
        )
        .unwrap();
        assert_eq!(sc.controller, ControllerKind::Ours);
        assert_eq!(sc.dt, 0.004);
        assert_eq!(sc.baseline.t_stop, 0.55);
        assert!(sc.obstacles.is_empty());
    }

    #[test]
    fn rejects_bad_input() {
        let mut sc = Scenario::car_race(20.0);
        sc.dt = 0.0;
        assert!(sc.validate().is_err());
        let mut sc = Scenario::arm_pursuit(0);
        sc.limits = LimitSpec::uniform(2, 1.0, 1.0);
        assert!(sc.problem().is_err());
        assert!(Scenario::from_json(r#"{"world":"moon"}"#).is_err());
    }
}
