//! Dual consensus ADMM updates for the convexified joint subproblem.
//!
//! After linearization, the vehicles jointly minimize
//!
//! ```text
//! sum_i F_i(dX_i) + || sum_i Jc_i dX_i + l ||^2 + box(du)
//! ```
//!
//! where `F_i` is vehicle i's quadratic tracking/effort expansion, `Jc_i` maps
//! its trajectory perturbation into the shared coupled vector (collision rows
//! plus its own input-deviation rows) and `l` is the collision residual. The
//! scheme here solves the *dual* of that problem by consensus: every vehicle
//! carries its own copy `y` of the global dual variable, plus running sums `p`
//! (disagreement with neighbors) and `s` (disagreement with the auxiliary
//! `z`). One sweep is, in order: exchange `y`; accumulate `p`; accumulate `s`;
//! form the offset `r`; minimize `F_i(dX) + ||Jc_i dX + r||^2 / (2(sigma +
//! 2 rho d_i))` (an LQR, done by the caller); refresh `y` from that minimizer;
//! refresh `z` through the penalty/box proximal maps.
//!
//! All coupled vectors share one layout: collision rows first (stage-major,
//! pairs lexicographic), then every vehicle's input rows (agent-major,
//! stage-major, component-minor). Cross-agent sums always run in ascending
//! agent order so results never depend on scheduling.

use crate::model::{Dimensions, ProblemSpec, Trajectory, NU};

/// One vehicle's share of the dual consensus state. All vectors have the full
/// coupled length; `y` and `z` persist across outer iterations (warm start)
/// while `p` and `s` restart at zero with every new linearization.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
}

impl DualState {
    pub fn zeros(len: usize) -> Self {
        DualState {
            y: vec![0.0; len],
            z: vec![0.0; len],
            p: vec![0.0; len],
            s: vec![0.0; len],
        }
    }

    /// New linearization: keep `y` and `z`, restart the running sums.
    pub fn reset_running_sums(&mut self) {
        self.p.iter_mut().for_each(|v| *v = 0.0);
        self.s.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Per-coordinate bounds on the input-deviation block, shared by all agents.
/// Row `r` bounds the deviation of the input component whose coupled-vector
/// row is `coupled_collision + r`; feasibility of zero deviation is an
/// invariant (current inputs already respect the absolute box).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    /// Deviation bounds induced by the absolute input box around the current
    /// inputs of every vehicle.
    pub fn around(trajs: &[Trajectory], spec: &ProblemSpec) -> Self {
        let dims = Dimensions::new(trajs.len(), spec.horizon);
        let mut lower = Vec::with_capacity(dims.coupled_input);
        let mut upper = Vec::with_capacity(dims.coupled_input);
        for traj in trajs {
            for u in &traj.inputs {
                for c in 0..NU {
                    lower.push(spec.input_lower[c] - u[c]);
                    upper.push(spec.input_upper[c] - u[c]);
                    debug_assert!(
                        spec.input_lower[c] - u[c] <= 1e-12 && spec.input_upper[c] - u[c] >= -1e-12,
                        "current input outside the absolute box"
                    );
                }
            }
        }
        BoxBounds { lower, upper }
    }
}

/// `p += rho * sum_{j != i} (y_i - y_j)`, peers in ascending agent order.
pub fn update_p(p: &mut [f64], own: usize, ys: &[Vec<f64>], rho: f64) {
    for (j, yj) in ys.iter().enumerate() {
        if j == own {
            continue;
        }
        let yi = &ys[own];
        for r in 0..p.len() {
            p[r] += rho * (yi[r] - yj[r]);
        }
    }
}

/// `s += sigma * (y - z)`.
pub fn update_s(s: &mut [f64], y: &[f64], z: &[f64], sigma: f64) {
    for r in 0..s.len() {
        s[r] += sigma * (y[r] - z[r]);
    }
}

/// Offset vector of agent `own`'s subproblem:
/// `r = rho * sum_{j != i} (y_i + y_j) + sigma z - p - s`
/// using the just-updated `p`, `s` and the pre-update `y`s and `z`.
pub fn compute_r(
    own: usize,
    ys: &[Vec<f64>],
    z: &[f64],
    p: &[f64],
    s: &[f64],
    rho: f64,
    sigma: f64,
) -> Vec<f64> {
    let d = z.len();
    let mut r = vec![0.0; d];
    for (j, yj) in ys.iter().enumerate() {
        if j == own {
            continue;
        }
        let yi = &ys[own];
        for k in 0..d {
            r[k] += rho * (yi[k] + yj[k]);
        }
    }
    for k in 0..d {
        r[k] += sigma * z[k] - p[k] - s[k];
    }
    r
}

/// `y = (Jc dX + r) / (sigma + 2 rho d_i)` where `d_i` is the neighbor count.
pub fn update_y(y: &mut [f64], j_dx: &[f64], r: &[f64], sigma: f64, rho: f64, neighbors: usize) {
    let scale = 1.0 / (sigma + 2.0 * rho * neighbors as f64);
    for k in 0..y.len() {
        y[k] = (j_dx[k] + r[k]) * scale;
    }
}

/// Refreshes `z` through the proximal maps of the two coupling terms.
///
/// Collision rows (the penalty `||v + l||^2` is an unconstrained quadratic, so
/// the prox is affine):
///
/// ```text
/// z = (2 / (2 N sigma + 1)) * (N s + N sigma y + l)
/// ```
///
/// Input rows (the box indicator's prox is projection):
///
/// ```text
/// zstar = clamp(N (s + sigma y), lower, upper)
/// z = s / sigma + y - zstar / (N sigma)
/// ```
pub fn update_z(
    z: &mut [f64],
    s: &[f64],
    y: &[f64],
    residual: &[f64],
    bounds: &BoxBounds,
    sigma: f64,
    dims: &Dimensions,
) {
    let n = dims.n_agents as f64;
    debug_assert_eq!(residual.len(), dims.coupled_collision);
    debug_assert_eq!(bounds.lower.len(), dims.coupled_input);
    debug_assert_eq!(z.len(), dims.coupled_total);
    let c1 = 2.0 / (2.0 * n * sigma + 1.0);
    for k in 0..dims.coupled_collision {
        z[k] = c1 * (n * s[k] + n * sigma * y[k] + residual[k]);
    }
    for b in 0..dims.coupled_input {
        let k = dims.coupled_collision + b;
        let zstar = (n * (s[k] + sigma * y[k])).clamp(bounds.lower[b], bounds.upper[b]);
        z[k] = s[k] / sigma + y[k] - zstar / (n * sigma);
    }
}

/// Mean over coordinates of the population variance (divide by N) of the
/// agents' `y` copies. Zero exactly when all copies agree.
pub fn consensus_variance<Y: AsRef<[f64]>>(ys: &[Y]) -> f64 {
    let n = ys.len();
    if n == 0 {
        return 0.0;
    }
    let d = ys[0].as_ref().len();
    if d == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for k in 0..d {
        let mean = ys.iter().map(|y| y.as_ref()[k]).sum::<f64>() / n as f64;
        let var = ys
            .iter()
            .map(|y| {
                let e = y.as_ref()[k] - mean;
                e * e
            })
            .sum::<f64>()
            / n as f64;
        acc += var;
    }
    acc / d as f64
}
