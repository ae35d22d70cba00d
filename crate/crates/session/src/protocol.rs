//! JSON text messages exchanged with clients.

use safe_topp::sim::{Contact, RunSummary};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereMsg {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleMsg {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
}

/// World snapshot. Infinite distances are sent as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub scenario: String,
    pub t: f64,
    /// Number of path stages; `j_stop == n` means the goal.
    pub n: usize,
    pub stage: usize,
    pub s: f64,
    pub sdot: f64,
    pub joints: Vec<f64>,
    pub spheres: Vec<SphereMsg>,
    pub obstacles: Vec<ObstacleMsg>,
    pub min_dist: Option<f64>,
    pub j_stop: Option<usize>,
    pub stopped: bool,
    pub contact: Contact,
    pub psi_min: Option<f64>,
}

/// Episode outcome, sent once when the episode ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMsg {
    pub scenario: String,
    pub arrival_time: Option<f64>,
    pub steps: usize,
    pub violations: usize,
    pub safe_contacts: usize,
    pub min_distance: Option<f64>,
    pub first_contact_speed: Option<f64>,
    pub stops: usize,
    pub limit_violations: usize,
    pub infeasible: usize,
}

pub(crate) fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl SummaryMsg {
    pub fn new(scenario: &str, s: &RunSummary) -> Self {
        Self {
            scenario: scenario.to_string(),
            arrival_time: s.arrival_time,
            steps: s.steps,
            violations: s.violations,
            safe_contacts: s.safe_contacts,
            min_distance: finite(s.min_distance),
            first_contact_speed: s.first_contact_speed,
            stops: s.stops,
            limit_violations: s.limit_violations,
            infeasible: s.infeasible,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    State(StateFrame),
    Summary(SummaryMsg),
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientMessage {
    Obstacle { id: u32, x: f64, y: f64, z: f64 },
    Reset,
    Load { scenario: String },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        let msg: Self = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
        if let Self::Obstacle { x, y, z, .. } = msg {
            if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                return Err("malformed message: non-finite obstacle position".into());
            }
        }
        Ok(msg)
    }
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}
