//! Time-optimal path tracking with speed-and-separation safety guarantees.

pub mod artifact;
pub mod constraint;
pub mod error;
pub mod executor;
pub mod interval;
pub mod lp;
pub mod path;
pub mod reach;
pub mod sim;

pub use artifact::Artifact;
pub use constraint::{build_constraints, LimitSpec, Row, StageConstraint};
pub use error::{Error, Result};
pub use executor::{time_to_arrive, Controller, ControlStep, DistanceField, ExecutorState, ObstacleInfo};
pub use interval::Interval;
pub use lp::{solve_1d, solve_1d_batch, solve_2d_project_x, Lp1Batch, LpKernel};
pub use path::{build_spline, discretize, JointPath, PathGrid};
pub use reach::{
    compute_delta_v, compute_stoppable_sets, compute_tables, precompute, trace_route, Precomputed,
    ReachTables, StoppableSetFamily, TableBackend,
};
