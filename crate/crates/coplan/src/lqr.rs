//! Time-varying LQR over one vehicle's linearized dynamics.
//!
//! Solves, by a Riccati backward recursion, the equality-constrained QP
//!
//! ```text
//! min  sum_tau  qx'dx + 1/2 dx'Qxx dx + qu'du + 1/2 du'Quu du   (+ terminal)
//! s.t. dx[tau+1] = A[tau] dx[tau] + B[tau] du[tau],  dx[0] = 0
//! ```
//!
//! returning affine policies `du = k + K dx`. The recursion carries an
//! optional Levenberg shift on the input Hessian: if the 2x2 solve is
//! ill-conditioned the whole pass is retried with the shift raised one decade
//! (0, then 1e-6 up to 1e-2) before giving up with a report.
//!
//! The feedforward/feedback split matters downstream: the planner rolls the
//! *nonlinear* model under `u = u_hat + alpha k + K (x - x_hat)`, while the
//! *linear* forward pass below reproduces the exact QP minimizer that the dual
//! update needs.

use crate::cost::StageQuadratics;
use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("input Hessian at stage {stage} has condition estimate {condition:.3e} even with shift {reg_tried:.1e}")]
pub struct IllConditioned {
    pub stage: usize,
    pub condition: f64,
    pub reg_tried: f64,
}

/// Affine stage policies `du[tau] = k[tau] + kk[tau] dx[tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub k: Vec<Vector2<f64>>,
    pub kk: Vec<Matrix2x4<f64>>,
    /// Levenberg shift the accepted pass ran with (0 when none was needed).
    pub reg_used: f64,
}

const COND_LIMIT: f64 = 1e12;
const REG_LADDER: [f64; 6] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Eigenvalues of a symmetric 2x2, ascending.
fn sym_eigs_2x2(m: &Matrix2<f64>) -> (f64, f64) {
    let mean = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det_part = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let disc = (det_part * det_part + m[(0, 1)] * m[(1, 0)]).max(0.0).sqrt();
    (mean - disc, mean + disc)
}

/// Backward Riccati recursion. `a` and `b` hold the stage Jacobians
/// (`a.len() == b.len() == T`); `costs` supplies the expanded objective with
/// its terminal entry at index T.
pub fn backward_pass(
    a: &[Matrix4<f64>],
    b: &[Matrix4x2<f64>],
    costs: &StageQuadratics,
) -> Result<GainSchedule, IllConditioned> {
    let t = a.len();
    assert_eq!(b.len(), t);
    assert_eq!(costs.horizon(), t);
    assert_eq!(costs.qx.len(), t + 1);

    let mut worst = IllConditioned { stage: 0, condition: 0.0, reg_tried: 0.0 };
    'ladder: for &reg in REG_LADDER.iter() {
        let mut vxx = costs.qxx[t];
        let mut vx = costs.qx[t];
        let mut k = vec![Vector2::zeros(); t];
        let mut kk = vec![Matrix2x4::zeros(); t];
        for tau in (0..t).rev() {
            let at = a[tau].transpose();
            let bt = b[tau].transpose();
            let qx = costs.qx[tau] + at * vx;
            let qu = costs.qu[tau] + bt * vx;
            let qxx = costs.qxx[tau] + at * vxx * a[tau];
            let qux = bt * vxx * a[tau];
            let quu = costs.quu[tau] + bt * vxx * b[tau] + Matrix2::identity() * reg;
            let (lo, hi) = sym_eigs_2x2(&quu);
            if lo <= 0.0 || hi > COND_LIMIT * lo {
                worst = IllConditioned {
                    stage: tau,
                    condition: if lo <= 0.0 { f64::INFINITY } else { hi / lo },
                    reg_tried: reg,
                };
                continue 'ladder;
            }
            let quu_inv = quu.try_inverse().expect("positive definite 2x2");
            let kf = -quu_inv * qu;
            let kb = -quu_inv * qux;
            let kbt = kb.transpose();
            vxx = qxx + kbt * quu * kb + kbt * qux + qux.transpose() * kb;
            vxx = 0.5 * (vxx + vxx.transpose());
            vx = qx + kbt * (quu * kf + qu) + qux.transpose() * kf;
            k[tau] = kf;
            kk[tau] = kb;
        }
        return Ok(GainSchedule { k, kk, reg_used: reg });
    }
    Err(worst)
}

/// Runs the policies through the *linear* model from `dx[0] = 0`. This is the
/// exact minimizer of the QP the backward pass solved (when no shift was
/// needed), not a simulation of the vehicle.
pub fn linear_forward(
    a: &[Matrix4<f64>],
    b: &[Matrix4x2<f64>],
    gains: &GainSchedule,
) -> (Vec<Vector4<f64>>, Vec<Vector2<f64>>) {
    let t = a.len();
    let mut dx = Vec::with_capacity(t + 1);
    let mut du = Vec::with_capacity(t);
    let mut x = Vector4::zeros();
    dx.push(x);
    for tau in 0..t {
        let u = gains.k[tau] + gains.kk[tau] * x;
        x = a[tau] * x + b[tau] * u;
        du.push(u);
        dx.push(x);
    }
    (dx, du)
}
