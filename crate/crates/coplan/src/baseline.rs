//! Centralized reference solver: one iLQR over the stacked system.
//!
//! All N vehicles form a single 4N-state / 2N-input system with block-diagonal
//! dynamics. Each outer iteration linearizes around the current joint plan,
//! expands the tracking costs exactly, and models every collision penalty by
//! its Gauss-Newton pair: gradient `2 J' l`, Hessian `2 J' J`, where `l` and
//! `J` are the same residual/gradient rows the decentralized planner uses.
//! The update is the same clipped policy rollout and shared step-size rule,
//! evaluated on the true joint cost, so the two solvers differ only in *how*
//! the convex subproblem is solved — which is exactly what comparing them is
//! for.

use crate::cost::{build_coupling, min_center_distance, quadratize_host, total_cost};
use crate::dynamics::{linearize, step, Saturation};
use crate::lqr::IllConditioned;
use crate::model::{ProblemSpec, Trajectory, NU, NX};
use crate::planner::{initial_plans, PhaseTimings, PlanError, PlanResult};
use nalgebra::{DMatrix, DVector};
use std::time::Instant;

const COND_LIMIT: f64 = 1e12;
const REG_LADDER: [f64; 6] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

struct JointModel {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    qx: Vec<DVector<f64>>,
    qxx: Vec<DMatrix<f64>>,
    qu: Vec<DVector<f64>>,
    quu: Vec<DMatrix<f64>>,
    fd_stages: usize,
}

fn build_joint_model(spec: &ProblemSpec, trajs: &[Trajectory]) -> Result<JointModel, PlanError> {
    let n = trajs.len();
    let t = spec.horizon;
    let (nx, nu) = (n * NX, n * NU);
    let mut fd_stages = 0;

    let mut a = vec![DMatrix::zeros(nx, nx); t];
    let mut b = vec![DMatrix::zeros(nx, nu); t];
    let mut qx = vec![DVector::zeros(nx); t + 1];
    let mut qxx = vec![DMatrix::zeros(nx, nx); t + 1];
    let mut qu = vec![DVector::zeros(nu); t];
    let mut quu = vec![DMatrix::zeros(nu, nu); t];

    for (i, traj) in trajs.iter().enumerate() {
        let host = quadratize_host(traj, &spec.references[i], &spec.q_diag, &spec.r_diag);
        for tau in 0..t {
            let jac = linearize(&traj.states[tau], &traj.inputs[tau], spec.wheelbase, spec.tau);
            fd_stages += jac.by_differences as usize;
            a[tau].view_mut((i * NX, i * NX), (NX, NX)).copy_from(&jac.a);
            b[tau].view_mut((i * NX, i * NU), (NX, NU)).copy_from(&jac.b);
            qu[tau].rows_mut(i * NU, NU).copy_from(&host.qu[tau]);
            quu[tau].view_mut((i * NU, i * NU), (NU, NU)).copy_from(&host.quu[tau]);
        }
        for tau in 0..=t {
            qx[tau].rows_mut(i * NX, NX).copy_from(&host.qx[tau]);
            qxx[tau].view_mut((i * NX, i * NX), (NX, NX)).copy_from(&host.qxx[tau]);
        }
    }

    // Collision penalties couple position blocks across vehicles.
    let coupling = build_coupling(trajs, spec)
        .map_err(|source| PlanError::Coupling { outer: 0, source })?;
    for tau in 0..=t {
        let range = coupling.stage_range(tau);
        for r in range {
            let row = &coupling.rows[r];
            if !row.active {
                continue;
            }
            let (i, j) = (row.i as usize, row.j as usize);
            let g = row.grad_i;
            let l = coupling.residual[r];
            for c in 0..2 {
                qx[tau][i * NX + c] += 2.0 * l * g[c];
                qx[tau][j * NX + c] -= 2.0 * l * g[c];
            }
            for ci in 0..2 {
                for cj in 0..2 {
                    let h = 2.0 * g[ci] * g[cj];
                    qxx[tau][(i * NX + ci, i * NX + cj)] += h;
                    qxx[tau][(j * NX + ci, j * NX + cj)] += h;
                    qxx[tau][(i * NX + ci, j * NX + cj)] -= h;
                    qxx[tau][(j * NX + ci, i * NX + cj)] -= h;
                }
            }
        }
    }

    Ok(JointModel { a, b, qx, qxx, qu, quu, fd_stages })
}

struct JointGains {
    k: Vec<DVector<f64>>,
    kk: Vec<DMatrix<f64>>,
    reg_used: f64,
}

fn joint_backward_pass(model: &JointModel) -> Result<JointGains, IllConditioned> {
    let t = model.a.len();
    let nu = model.qu[0].len();
    let mut worst = IllConditioned { stage: 0, condition: 0.0, reg_tried: 0.0 };
    'ladder: for &reg in REG_LADDER.iter() {
        let mut vxx = model.qxx[t].clone();
        let mut vx = model.qx[t].clone();
        let mut k = vec![DVector::zeros(nu); t];
        let mut kk = Vec::with_capacity(t);
        kk.resize(t, DMatrix::zeros(0, 0));
        for tau in (0..t).rev() {
            let at = model.a[tau].transpose();
            let bt = model.b[tau].transpose();
            let qx = &model.qx[tau] + &at * &vx;
            let qu = &model.qu[tau] + &bt * &vx;
            let qxx = &model.qxx[tau] + &at * &vxx * &model.a[tau];
            let qux = &bt * &vxx * &model.a[tau];
            let mut quu = &model.quu[tau] + &bt * &vxx * &model.b[tau];
            for d in 0..nu {
                quu[(d, d)] += reg;
            }
            let eig = quu.clone().symmetric_eigen();
            let lo = eig.eigenvalues.min();
            let hi = eig.eigenvalues.max();
            if lo <= 0.0 || hi > COND_LIMIT * lo {
                worst = IllConditioned {
                    stage: tau,
                    condition: if lo <= 0.0 { f64::INFINITY } else { hi / lo },
                    reg_tried: reg,
                };
                continue 'ladder;
            }
            // Invert through the eigendecomposition already in hand.
            let inv = {
                let mut d = eig.eigenvalues.clone();
                d.iter_mut().for_each(|e| *e = 1.0 / *e);
                &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
            };
            let kf = -(&inv * &qu);
            let kb = -(&inv * &qux);
            let kbt = kb.transpose();
            vxx = &qxx + &kbt * &quu * &kb + &kbt * &qux + qux.transpose() * &kb;
            vxx = 0.5 * (&vxx + vxx.transpose());
            vx = qx + &kbt * (&quu * &kf + &qu) + qux.transpose() * &kf;
            k[tau] = kf;
            kk[tau] = kb;
        }
        return Ok(JointGains { k, kk, reg_used: reg });
    }
    Err(worst)
}

/// Rolls every vehicle under the joint affine policy with input clipping.
fn joint_policy_rollout(
    current: &[Trajectory],
    gains: &JointGains,
    alpha: f64,
    spec: &ProblemSpec,
) -> (Vec<Trajectory>, Saturation) {
    let n = current.len();
    let t = spec.horizon;
    let mut sat = Saturation::default();
    let mut out: Vec<Trajectory> = current
        .iter()
        .map(|c| Trajectory { states: vec![c.states[0]], inputs: Vec::with_capacity(t) })
        .collect();
    let mut dx = DVector::zeros(n * NX);
    for tau in 0..t {
        for i in 0..n {
            let e = out[i].states[tau] - current[i].states[tau];
            dx.rows_mut(i * NX, NX).copy_from(&e);
        }
        let du = &gains.kk[tau] * &dx;
        for i in 0..n {
            let mut u = current[i].inputs[tau];
            u[0] += alpha * gains.k[tau][i * NU] + du[i * NU];
            u[1] += alpha * gains.k[tau][i * NU + 1] + du[i * NU + 1];
            u[0] = u[0].clamp(spec.input_lower[0], spec.input_upper[0]);
            u[1] = u[1].clamp(spec.input_lower[1], spec.input_upper[1]);
            let (next, s) = step(&out[i].states[tau], &u, spec.wheelbase, spec.tau);
            sat.chord_clamps += s.chord_clamps;
            sat.heading_clamps += s.heading_clamps;
            out[i].inputs.push(u);
            out[i].states.push(next);
        }
    }
    (out, sat)
}

/// Plans all vehicles with the centralized joint solver. Same outputs as
/// [`crate::planner::plan_decentralized`]; consensus and exchange fields stay
/// empty because nothing is exchanged.
pub fn plan_centralized(spec: &ProblemSpec) -> Result<PlanResult, PlanError> {
    let violations = spec.validate();
    if !violations.is_empty() {
        return Err(PlanError::InvalidSpec(violations));
    }
    let hyper = spec.hyper.clone();
    let mut timings = PhaseTimings::default();
    let (mut trajs, mut saturation) = initial_plans(spec);

    let mut cost_prev = total_cost(&trajs, spec);
    if !cost_prev.is_finite() {
        return Err(PlanError::NonFinite { outer: 0 });
    }
    let mut cost_history = vec![cost_prev];
    let mut alpha_history = Vec::new();
    let mut fd_linearizations = 0;
    let mut reg_events = 0;
    let mut lqr_seconds = 0.0;
    let mut converged = false;
    let mut outer_done = 0;

    for outer in 0..hyper.max_outer_iters {
        let started = Instant::now();
        let model = match build_joint_model(spec, &trajs) {
            Ok(m) => m,
            Err(PlanError::Coupling { source, .. }) => {
                return Err(PlanError::Coupling { outer, source })
            }
            Err(other) => return Err(other),
        };
        fd_linearizations += model.fd_stages;
        timings.modeling += started.elapsed().as_secs_f64();

        let started = Instant::now();
        let gains = joint_backward_pass(&model)
            .map_err(|source| PlanError::JointConditioning { outer, source })?;
        reg_events += (gains.reg_used > 0.0) as usize;
        lqr_seconds += started.elapsed().as_secs_f64();
        timings.inner_sweeps += started.elapsed().as_secs_f64();

        let started = Instant::now();
        let mut best = usize::MAX;
        let mut best_cost = f64::INFINITY;
        let mut best_plan: Option<(Vec<Trajectory>, Saturation)> = None;
        for (idx, &alpha) in hyper.alpha_schedule.iter().enumerate() {
            let (cand, sat) = joint_policy_rollout(&trajs, &gains, alpha, spec);
            if alpha == 0.0 {
                debug_assert_eq!(cand, trajs, "zero step must reproduce the plan");
            }
            let c = total_cost(&cand, spec);
            if !c.is_finite() {
                return Err(PlanError::NonFinite { outer });
            }
            if c < best_cost {
                best_cost = c;
                best = idx;
                best_plan = Some((cand, sat));
            }
        }
        let (cand, sat) = best_plan.expect("non-empty schedule");
        trajs = cand;
        saturation.chord_clamps += sat.chord_clamps;
        saturation.heading_clamps += sat.heading_clamps;
        alpha_history.push(hyper.alpha_schedule[best]);
        timings.line_search += started.elapsed().as_secs_f64();

        cost_history.push(best_cost);
        outer_done = outer + 1;
        if (cost_prev - best_cost).abs() < hyper.outer_tol {
            converged = true;
            break;
        }
        cost_prev = best_cost;
    }

    Ok(PlanResult {
        min_distance: min_center_distance(&trajs),
        trajectories: trajs,
        cost_history,
        consensus_variance: Vec::new(),
        alpha_history,
        outer_iters: outer_done,
        converged,
        saturation,
        reg_events,
        fd_linearizations,
        lqr_seconds: vec![lqr_seconds],
        timings,
        exchange: Default::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HyperParams, Input, State};
    use nalgebra::{Vector2, Vector4};

    fn crossing_spec() -> ProblemSpec {
        let t = 30;
        let tau = 0.1;
        let speed = 8.0;
        let east: Vec<State> = (0..=t)
            .map(|k| State::new(-12.0 + speed * tau * k as f64, -1.0, 0.0, speed))
            .collect();
        let north: Vec<State> = (0..=t)
            .map(|k| {
                State::new(1.0, -12.0 + speed * tau * k as f64, std::f64::consts::FRAC_PI_2, speed)
            })
            .collect();
        ProblemSpec {
            horizon: t,
            tau,
            wheelbase: 1.7,
            q_diag: Vector4::new(1.0, 1.0, 0.0, 0.0),
            r_diag: Vector2::new(1.0, 1.0),
            beta: 1.44,
            d_safe: 5.5,
            input_lower: Input::new(-0.6, -3.0),
            input_upper: Input::new(0.6, 1.5),
            initial_states: vec![east[0], north[0]],
            references: vec![east, north],
            hyper: HyperParams { outer_tol: 0.1, ..HyperParams::default() },
        }
    }

    #[test]
    fn crossing_conflict_improves_and_never_regresses() {
        let spec = crossing_spec();
        let result = plan_centralized(&spec).unwrap();
        assert!(result.converged);
        for w in result.cost_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert!(
            result.min_distance > 2.5,
            "centralized plan still tight: {:.3}",
            result.min_distance
        );
        for traj in &result.trajectories {
            for u in &traj.inputs {
                assert!(u[0] >= spec.input_lower[0] && u[0] <= spec.input_upper[0]);
                assert!(u[1] >= spec.input_lower[1] && u[1] <= spec.input_upper[1]);
            }
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let spec = crossing_spec();
        let a = plan_centralized(&spec).unwrap();
        let b = plan_centralized(&spec).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.cost_history, b.cost_history);
    }
}
