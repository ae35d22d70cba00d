//! Simulation worlds, obstacle scripts, the comparison baseline and the
//! scenario runner.

pub mod baseline;
pub mod kinematics;
pub mod obstacles;
pub mod run;
pub mod scenario;

pub use baseline::{baseline_step, BaselineParams};
pub use kinematics::{min_distances, RobotModel, Sphere, StageGeometry};
pub use obstacles::{ObstacleScript, ObstacleSim, ObstacleSpec};
pub use run::{race, run_scenario, Contact, LogRow, RaceSummary, RunSummary, Simulation};
pub use scenario::{ControllerKind, Problem, Scenario, World};
