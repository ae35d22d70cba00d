//! Joint-space paths and their uniform discretization into stages.
//!
//! A [`JointPath`] is a piecewise cubic per joint over `s ∈ [0, s_end]`.
//! Paths built from waypoints use one unit of `s` per segment (unit chord)
//! with zero first derivative at both ends, so the robot starts and ends at
//! rest. [`discretize`] samples a path into a [`PathGrid`] whose stages land
//! on every knot.

use std::io::Write;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic coefficients `[c0, c1, c2, c3]` of `c0 + c1 t + c2 t² + c3 t³` in the
/// segment-local coordinate `t = s - knot`.
type Cubic = [f64; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPath {
    waypoints: Vec<Vec<f64>>,
    knots: Vec<f64>,
    /// `coeffs[segment][joint]`
    coeffs: Vec<Vec<Cubic>>,
}

/// On-disk path description: `{ "waypoints": [[rad, ...], ...] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathFile {
    pub waypoints: Vec<Vec<f64>>,
}

impl PathFile {
    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn check_waypoints(waypoints: &[Vec<f64>]) -> Result<usize> {
    if waypoints.len() < 2 {
        return Err(Error::TooFewWaypoints(waypoints.len()));
    }
    let dof = waypoints[0].len();
    if dof == 0 {
        return Err(Error::DegeneratePath("waypoints have no joints"));
    }
    for (index, w) in waypoints.iter().enumerate() {
        if w.len() != dof {
            return Err(Error::DimensionMismatch {
                index,
                expected: dof,
                found: w.len(),
            });
        }
    }
    Ok(dof)
}

/// Second derivatives of the clamped cubic spline through `y` on uniform
/// knots of spacing `h`, with `y'(0) = y'(end) = 0`.
fn clamped_moments(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    // Tridiagonal system (sub, diag, sup) · m = rhs, solved by Thomas elimination.
    let mut sub = vec![h; n];
    let mut diag = vec![4.0 * h; n];
    let mut sup = vec![h; n];
    let mut rhs = vec![0.0; n];
    diag[0] = 2.0 * h;
    diag[n - 1] = 2.0 * h;
    sub[0] = 0.0;
    sup[n - 1] = 0.0;
    rhs[0] = 6.0 * (y[1] - y[0]) / h;
    rhs[n - 1] = -6.0 * (y[n - 1] - y[n - 2]) / h;
    for k in 1..n - 1 {
        rhs[k] = 6.0 * (y[k + 1] - 2.0 * y[k] + y[k - 1]) / h;
    }
    for k in 1..n {
        let w = sub[k] / diag[k - 1];
        diag[k] -= w * sup[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    let mut m = vec![0.0; n];
    m[n - 1] = rhs[n - 1] / diag[n - 1];
    for k in (0..n - 1).rev() {
        m[k] = (rhs[k] - sup[k] * m[k + 1]) / diag[k];
    }
    m
}

impl JointPath {
    /// Clamped cubic spline through `waypoints`, one unit of `s` per segment.
    pub fn clamped_spline(waypoints: &[Vec<f64>]) -> Result<Self> {
        let dof = check_waypoints(waypoints)?;
        let segments = waypoints.len() - 1;
        let h = 1.0;
        let mut coeffs = vec![vec![[0.0; 4]; dof]; segments];
        for joint in 0..dof {
            let y: Vec<f64> = waypoints.iter().map(|w| w[joint]).collect();
            let m = clamped_moments(&y, h);
            for seg in 0..segments {
                let (y0, y1) = (y[seg], y[seg + 1]);
                let (m0, m1) = (m[seg], m[seg + 1]);
                let c1 = if seg == 0 {
                    0.0
                } else {
                    (y1 - y0) / h - h * (2.0 * m0 + m1) / 6.0
                };
                coeffs[seg][joint] = [y0, c1, m0 / 2.0, (m1 - m0) / (6.0 * h)];
            }
        }
        Ok(Self {
            waypoints: waypoints.to_vec(),
            knots: (0..=segments).map(|k| k as f64 * h).collect(),
            coeffs,
        })
    }

    /// Straight joint-space line parameterized by Euclidean arclength.
    pub fn line(from: &[f64], to: &[f64]) -> Result<Self> {
        let waypoints = vec![from.to_vec(), to.to_vec()];
        check_waypoints(&waypoints)?;
        let length = from
            .iter()
            .zip(to)
            .map(|(a, b)| (b - a).powi(2))
            .sum::<f64>()
            .sqrt();
        if !(length > 0.0) {
            return Err(Error::DegeneratePath("line endpoints coincide"));
        }
        let seg = from
            .iter()
            .zip(to)
            .map(|(a, b)| [*a, (b - a) / length, 0.0, 0.0])
            .collect();
        Ok(Self {
            waypoints,
            knots: vec![0.0, length],
            coeffs: vec![seg],
        })
    }

    pub fn dof(&self) -> usize {
        self.waypoints[0].len()
    }

    pub fn segments(&self) -> usize {
        self.coeffs.len()
    }

    pub fn s_end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn waypoints(&self) -> &[Vec<f64>] {
        &self.waypoints
    }

    fn segment_of(&self, s: f64) -> usize {
        let k = self.knots.partition_point(|&knot| knot <= s);
        k.saturating_sub(1).min(self.segments() - 1)
    }

    fn eval_local(&self, seg: usize, t: f64, out: &mut Sample) {
        for (joint, c) in self.coeffs[seg].iter().enumerate() {
            out.q[joint] = c[0] + t * (c[1] + t * (c[2] + t * c[3]));
            out.qp[joint] = c[1] + t * (2.0 * c[2] + t * 3.0 * c[3]);
            out.qpp[joint] = 2.0 * c[2] + 6.0 * c[3] * t;
        }
    }

    /// Configuration and first/second path derivatives at `s` (clamped to the
    /// path domain).
    pub fn sample(&self, s: f64) -> Sample {
        let s = s.clamp(0.0, self.s_end());
        let seg = self.segment_of(s);
        let mut out = Sample::zeros(self.dof());
        self.eval_local(seg, s - self.knots[seg], &mut out);
        out
    }

    pub fn position(&self, s: f64) -> Vec<f64> {
        self.sample(s).q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub q: Vec<f64>,
    pub qp: Vec<f64>,
    pub qpp: Vec<f64>,
}

impl Sample {
    fn zeros(dof: usize) -> Self {
        Self {
            q: vec![0.0; dof],
            qp: vec![0.0; dof],
            qpp: vec![0.0; dof],
        }
    }
}

pub fn build_spline(waypoints: &[Vec<f64>]) -> Result<JointPath> {
    JointPath::clamped_spline(waypoints)
}

/// Stages `s_0 = 0 < … < s_N = s_end` with per-stage derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    pub stages: Vec<f64>,
    /// `deltas[i] = stages[i + 1] - stages[i]`, length `N`.
    pub deltas: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qp: Vec<Vec<f64>>,
    pub qpp: Vec<Vec<f64>>,
}

impl PathGrid {
    /// Number of segments `N`; there are `N + 1` stages.
    pub fn n(&self) -> usize {
        self.deltas.len()
    }

    pub fn dof(&self) -> usize {
        self.q[0].len()
    }

    pub fn s_end(&self) -> f64 {
        *self.stages.last().unwrap()
    }

    /// Index of the last stage at or before `s`.
    pub fn stage_at(&self, s: f64) -> usize {
        self.stages
            .partition_point(|&x| x <= s)
            .saturating_sub(1)
            .min(self.n())
    }

    /// CSV with columns `s, delta, q_j…, qp_j…, qpp_j…`; the last stage has
    /// `delta = 0`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dof = self.dof();
        let mut header = vec!["s".to_string(), "delta".to_string()];
        for prefix in ["q", "qp", "qpp"] {
            header.extend((0..dof).map(|j| format!("{prefix}_{j}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.stages.len() {
            let delta = self.deltas.get(i).copied().unwrap_or(0.0);
            let mut row = vec![self.stages[i], delta];
            row.extend(&self.q[i]);
            row.extend(&self.qp[i]);
            row.extend(&self.qpp[i]);
            let row: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Uniform stages per segment, `N = segments · ⌈n_min / segments⌉ ≥ n_min`,
/// so every knot is a stage.
pub fn discretize(path: &JointPath, n_min: usize) -> PathGrid {
    let n_min = n_min.max(1);
    let segments = path.segments();
    let per_segment = n_min.div_ceil(segments);
    let n = segments * per_segment;
    let dof = path.dof();

    let mut stages = Vec::with_capacity(n + 1);
    let mut q = Vec::with_capacity(n + 1);
    let mut qp = Vec::with_capacity(n + 1);
    let mut qpp = Vec::with_capacity(n + 1);
    let mut sample = Sample::zeros(dof);
    for i in 0..=n {
        let (seg, r) = if i == n {
            (segments - 1, per_segment)
        } else {
            (i / per_segment, i % per_segment)
        };
        let h = path.knots[seg + 1] - path.knots[seg];
        let t = if r == per_segment {
            h
        } else {
            h * (r as f64 / per_segment as f64)
        };
        let s = if i == n {
            path.s_end()
        } else {
            path.knots[seg] + t
        };
        path.eval_local(seg, t, &mut sample);
        stages.push(s);
        q.push(sample.q.clone());
        qp.push(sample.qp.clone());
        qpp.push(sample.qpp.clone());
    }
    let deltas = stages.windows(2).map(|w| w[1] - w[0]).collect();
    PathGrid {
        stages,
        deltas,
        q,
        qp,
        qpp,
    }
}
