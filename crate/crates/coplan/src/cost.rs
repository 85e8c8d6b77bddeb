//! Joint planning cost and the pieces the solvers need from it.
//!
//! Each vehicle pays quadratic tracking and effort terms; every unordered pair
//! pays a collision penalty at every stage (terminal included):
//!
//! ```text
//! c_ij(tau) = beta * min(d_ij(tau) - d_safe, 0)^2
//! ```
//!
//! with `d_ij` the center distance. The penalty is the squared norm of the
//! per-pair residual `l_ij = sqrt(beta) * min(d_ij - d_safe, 0)`, which is what
//! the convex subproblems work with: [`build_coupling`] collects the residuals
//! and their position gradients at the current trajectories, and both planners
//! treat the penalty as `|| J dX + l ||^2` from there (a Gauss-Newton picture
//! of the penalty; its exact Hessian is not used).
//!
//! Summation order is fixed everywhere (agents ascending, stages ascending,
//! pairs lexicographic) so that repeated evaluations are bit-identical.

use crate::model::{pair_count, Dimensions, ProblemSpec, State, Trajectory};
use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("vehicles {i} and {j} have coincident centers at stage {tau} (distance {distance:.3e}); the collision direction is undefined")]
    CoincidentCenters { i: usize, j: usize, tau: usize, distance: f64 },
}

/// Distance below which two centers count as coincident.
const COINCIDENT: f64 = 1e-9;

/// Tracking + effort cost of one vehicle: stage terms over tau = 0..T-1 plus
/// the terminal tracking term.
pub fn host_cost(traj: &Trajectory, reference: &[State], q_diag: &Vector4<f64>, r_diag: &Vector2<f64>) -> f64 {
    let t = traj.horizon();
    debug_assert_eq!(reference.len(), t + 1);
    let mut total = 0.0;
    for tau in 0..=t {
        let e = traj.states[tau] - reference[tau];
        total += e.component_mul(q_diag).dot(&e);
        if tau < t {
            let u = traj.inputs[tau];
            total += u.component_mul(r_diag).dot(&u);
        }
    }
    total
}

/// Collision penalty for one pair at one stage.
pub fn collision_cost(pi: &Vector2<f64>, pj: &Vector2<f64>, beta: f64, d_safe: f64) -> f64 {
    let gap = ((pi - pj).norm() - d_safe).min(0.0);
    beta * gap * gap
}

/// Full joint cost of a set of trajectories under the spec's weights.
pub fn total_cost(trajs: &[Trajectory], spec: &ProblemSpec) -> f64 {
    let n = trajs.len();
    let t = spec.horizon;
    let mut total = 0.0;
    for (traj, reference) in trajs.iter().zip(&spec.references) {
        total += host_cost(traj, reference, &spec.q_diag, &spec.r_diag);
    }
    for tau in 0..=t {
        for i in 0..n {
            for j in (i + 1)..n {
                total += collision_cost(
                    &trajs[i].states[tau].xy(),
                    &trajs[j].states[tau].xy(),
                    spec.beta,
                    spec.d_safe,
                );
            }
        }
    }
    total
}

/// Smallest center distance between any two vehicles at any stage. Infinite
/// for a single vehicle.
pub fn min_center_distance(trajs: &[Trajectory]) -> f64 {
    let mut best = f64::INFINITY;
    if trajs.is_empty() {
        return best;
    }
    let t = trajs[0].horizon();
    for tau in 0..=t {
        for i in 0..trajs.len() {
            for j in (i + 1)..trajs.len() {
                let d = (trajs[i].states[tau].xy() - trajs[j].states[tau].xy()).norm();
                if d < best {
                    best = d;
                }
            }
        }
    }
    best
}

/// Second-order expansion data of a quadratic-plus-linear cost around a point,
/// per stage. Index `tau` of the state terms runs 0..=T (T = terminal term);
/// input terms run 0..T. The convention is
///
/// ```text
/// cost(point + d) - cost(point) = sum_tau qx'dx + 1/2 dx'Qxx dx + qu'du + 1/2 du'Quu du
/// ```
///
/// which for the tracking cost means `qx = 2Q(x - ref)`, `Qxx = 2Q` and so on
/// (exact, no truncation — the host cost is itself quadratic).
#[derive(Debug, Clone, PartialEq)]
pub struct StageQuadratics {
    pub qx: Vec<Vector4<f64>>,
    pub qxx: Vec<Matrix4<f64>>,
    pub qu: Vec<Vector2<f64>>,
    pub quu: Vec<Matrix2<f64>>,
}

impl StageQuadratics {
    pub fn horizon(&self) -> usize {
        self.qu.len()
    }
}

/// Expands one vehicle's tracking + effort cost around `traj`.
pub fn quadratize_host(
    traj: &Trajectory,
    reference: &[State],
    q_diag: &Vector4<f64>,
    r_diag: &Vector2<f64>,
) -> StageQuadratics {
    let t = traj.horizon();
    let qxx = Matrix4::from_diagonal(&(2.0 * q_diag));
    let quu = Matrix2::from_diagonal(&(2.0 * r_diag));
    StageQuadratics {
        qx: (0..=t)
            .map(|tau| 2.0 * (traj.states[tau] - reference[tau]).component_mul(q_diag))
            .collect(),
        qxx: vec![qxx; t + 1],
        qu: (0..t).map(|tau| 2.0 * traj.inputs[tau].component_mul(r_diag)).collect(),
        quu: vec![quu; t],
    }
}

/// One row of the linearized collision residual: pair `(i, j)` at some stage.
/// `grad_i` is the residual's gradient with respect to vehicle `i`'s position;
/// vehicle `j`'s is its negation. Inactive rows (centers at least `d_safe`
/// apart) carry a zero gradient and a zero residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRow {
    pub i: u32,
    pub j: u32,
    pub grad_i: Vector2<f64>,
    pub active: bool,
}

/// Linearization of all collision residuals at the current trajectories.
/// Rows are stage-major, pairs lexicographic within a stage — the same layout
/// as the collision block of the coupled vectors the ADMM exchanges.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingModel {
    pub residual: Vec<f64>,
    pub rows: Vec<PairRow>,
    pub dims: Dimensions,
}

/// Builds the collision residual vector and its row gradients. The penalty is
/// active strictly below `d_safe`; at exactly `d_safe` both the residual and
/// the gradient are zero, so activation is continuous.
pub fn build_coupling(trajs: &[Trajectory], spec: &ProblemSpec) -> Result<CouplingModel, CostError> {
    let n = trajs.len();
    let dims = Dimensions::new(n, spec.horizon);
    let sqrt_beta = spec.beta.sqrt();
    let mut residual = Vec::with_capacity(dims.coupled_collision);
    let mut rows = Vec::with_capacity(dims.coupled_collision);
    for tau in 0..=spec.horizon {
        for i in 0..n {
            for j in (i + 1)..n {
                let diff = trajs[i].states[tau].xy() - trajs[j].states[tau].xy();
                let d = diff.norm();
                if d < COINCIDENT {
                    return Err(CostError::CoincidentCenters { i, j, tau, distance: d });
                }
                let (res, grad_i, active) = if d < spec.d_safe {
                    (sqrt_beta * (d - spec.d_safe), sqrt_beta * diff / d, true)
                } else {
                    (0.0, Vector2::zeros(), false)
                };
                residual.push(res);
                rows.push(PairRow { i: i as u32, j: j as u32, grad_i, active });
            }
        }
    }
    Ok(CouplingModel { residual, rows, dims })
}

impl CouplingModel {
    /// Row range of stage `tau`.
    pub fn stage_range(&self, tau: usize) -> std::ops::Range<usize> {
        let p = pair_count(self.dims.n_agents);
        tau * p..(tau + 1) * p
    }

    /// Signed gradient of row `r` with respect to `agent`'s position, or None
    /// when the row does not involve the agent.
    pub fn agent_grad(&self, r: usize, agent: usize) -> Option<Vector2<f64>> {
        let row = &self.rows[r];
        if row.i as usize == agent {
            Some(row.grad_i)
        } else if row.j as usize == agent {
            Some(-row.grad_i)
        } else {
            None
        }
    }

    /// Gauss-Newton data of one agent-stage for the LQR builder: the position
    /// block of `J' J` (lifted to state size by the caller) and `J' w` for the
    /// given per-row weights `w` (the stage slice of a collision-block vector).
    pub fn agent_stage_terms(
        &self,
        agent: usize,
        tau: usize,
        stage_weights: &[f64],
    ) -> (Matrix2<f64>, Vector2<f64>) {
        let range = self.stage_range(tau);
        debug_assert_eq!(stage_weights.len(), range.len());
        let mut jtj = Matrix2::zeros();
        let mut jtw = Vector2::zeros();
        for (k, r) in range.enumerate() {
            if let Some(g) = self.agent_grad(r, agent) {
                jtj += g * g.transpose();
                jtw += g * stage_weights[k];
            }
        }
        (jtj, jtw)
    }

    /// Adds `J_i dstates` (vehicle `i`'s contribution to the collision block of
    /// the coupled image) into `out`, which must have `coupled_collision` rows.
    pub fn accumulate_apply(&self, agent: usize, dstates: &[Vector4<f64>], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dims.coupled_collision);
        debug_assert_eq!(dstates.len(), self.dims.horizon + 1);
        let p = pair_count(self.dims.n_agents);
        for tau in 0..=self.dims.horizon {
            let dp = dstates[tau].xy();
            for (k, r) in self.stage_range(tau).enumerate() {
                if let Some(g) = self.agent_grad(r, agent) {
                    out[tau * p + k] += g.dot(&dp);
                }
            }
        }
    }

    /// Number of active rows.
    pub fn active_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.active).count()
    }
}
