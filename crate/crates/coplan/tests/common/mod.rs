//! Dense reference solvers for the acceptance suite. Each oracle optimizes
//! the same objective as the library but by the most literal method
//! available — one stacked KKT system solved with a dense LU — so agreement
//! is evidence of correctness rather than of shared shortcuts.

use coplan::cost::{build_coupling, quadratize_host, StageQuadratics};
use coplan::dynamics::linearize;
use coplan::nalgebra::{DMatrix, DVector, Matrix4, Matrix4x2, Vector2, Vector4};
use coplan::{pair_count, ProblemSpec, Trajectory};

pub const NX: usize = 4;
pub const NU: usize = 2;

/// Minimizes `1/2 z'Hz + g'z` subject to `Ez = 0` by solving the stacked
/// first-order system. `H` only needs to be positive definite on the
/// constraint null space.
pub fn kkt_solve(h: &DMatrix<f64>, g: &DVector<f64>, e: &DMatrix<f64>) -> DVector<f64> {
    let nv = h.nrows();
    let nc = e.nrows();
    let mut kkt = DMatrix::<f64>::zeros(nv + nc, nv + nc);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(h);
    kkt.view_mut((nv, 0), (nc, nv)).copy_from(e);
    kkt.view_mut((0, nv), (nv, nc)).copy_from(&e.transpose());
    let mut rhs = DVector::<f64>::zeros(nv + nc);
    rhs.rows_mut(0, nv).copy_from(&(-g));
    let solution = kkt.full_piv_lu().solve(&rhs).expect("KKT system is nonsingular");
    solution.rows(0, nv).into_owned()
}

/// Per-agent variable layout inside a stacked vector: all states first, then
/// all inputs.
fn x_at(tau: usize) -> usize {
    tau * NX
}

fn u_at(horizon: usize, tau: usize) -> usize {
    (horizon + 1) * NX + tau * NU
}

fn agent_vars(horizon: usize) -> usize {
    (horizon + 1) * NX + horizon * NU
}

/// Fills one agent's tracking-cost blocks and dynamics constraints at the
/// given variable/constraint offsets.
fn fill_agent(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    e: &mut DMatrix<f64>,
    var0: usize,
    con0: usize,
    a: &[Matrix4<f64>],
    b: &[Matrix4x2<f64>],
    costs: &StageQuadratics,
) {
    let t = a.len();
    for tau in 0..=t {
        let at = var0 + x_at(tau);
        for r in 0..NX {
            g[at + r] += costs.qx[tau][r];
            for c in 0..NX {
                h[(at + r, at + c)] += costs.qxx[tau][(r, c)];
            }
        }
    }
    for tau in 0..t {
        let at = var0 + u_at(t, tau);
        for r in 0..NU {
            g[at + r] += costs.qu[tau][r];
            for c in 0..NU {
                h[(at + r, at + c)] += costs.quu[tau][(r, c)];
            }
        }
    }
    // dx_0 = 0.
    for r in 0..NX {
        e[(con0 + r, var0 + x_at(0) + r)] = 1.0;
    }
    // dx_{tau+1} = A dx_tau + B du_tau.
    for tau in 0..t {
        let row = con0 + NX + tau * NX;
        for r in 0..NX {
            e[(row + r, var0 + x_at(tau + 1) + r)] = 1.0;
            for c in 0..NX {
                e[(row + r, var0 + x_at(tau) + c)] = -a[tau][(r, c)];
            }
            for c in 0..NU {
                e[(row + r, var0 + u_at(t, tau) + c)] = -b[tau][(r, c)];
            }
        }
    }
}

fn split_agent(z: &DVector<f64>, var0: usize, t: usize) -> (Vec<Vector4<f64>>, Vec<Vector2<f64>>) {
    let dxs = (0..=t)
        .map(|tau| {
            let at = var0 + x_at(tau);
            Vector4::new(z[at], z[at + 1], z[at + 2], z[at + 3])
        })
        .collect();
    let dus = (0..t)
        .map(|tau| {
            let at = var0 + u_at(t, tau);
            Vector2::new(z[at], z[at + 1])
        })
        .collect();
    (dxs, dus)
}

/// Exact minimizer of one linear-quadratic subproblem — the same problem the
/// Riccati backward pass and linear forward roll solve — via the dense KKT
/// system over all states and inputs.
pub fn lqr_oracle(
    a: &[Matrix4<f64>],
    b: &[Matrix4x2<f64>],
    costs: &StageQuadratics,
) -> (Vec<Vector4<f64>>, Vec<Vector2<f64>>) {
    let t = a.len();
    let nv = agent_vars(t);
    let nc = NX * (t + 1);
    let mut h = DMatrix::<f64>::zeros(nv, nv);
    let mut g = DVector::<f64>::zeros(nv);
    let mut e = DMatrix::<f64>::zeros(nc, nv);
    fill_agent(&mut h, &mut g, &mut e, 0, 0, a, b, costs);
    let z = kkt_solve(&h, &g, &e);
    split_agent(&z, 0, t)
}

/// Exact minimizer of the convexified *joint* problem at the given
/// trajectories: every vehicle's expanded tracking cost plus the
/// linearized-residual collision penalty, subject to every vehicle's linear
/// dynamics. Input boxes are ignored, so the caller must pick an instance
/// whose solution leaves them slack.
pub fn joint_qp_oracle(
    spec: &ProblemSpec,
    trajs: &[Trajectory],
) -> Vec<(Vec<Vector4<f64>>, Vec<Vector2<f64>>)> {
    let n = trajs.len();
    let t = spec.horizon;
    let per = agent_vars(t);
    let nv = n * per;
    let nc = n * NX * (t + 1);
    let mut h = DMatrix::<f64>::zeros(nv, nv);
    let mut g = DVector::<f64>::zeros(nv);
    let mut e = DMatrix::<f64>::zeros(nc, nv);
    for (i, traj) in trajs.iter().enumerate() {
        let costs = quadratize_host(traj, &spec.references[i], &spec.q_diag, &spec.r_diag);
        let (a, b): (Vec<_>, Vec<_>) = (0..t)
            .map(|tau| {
                let jac = linearize(&traj.states[tau], &traj.inputs[tau], spec.wheelbase, spec.tau);
                (jac.a, jac.b)
            })
            .unzip();
        fill_agent(&mut h, &mut g, &mut e, i * per, i * NX * (t + 1), &a, &b, &costs);
    }
    // Collision penalty |l0 + C dz|^2: H += 2 C'C, g += 2 C'l0, where row
    // (pair, tau) of C carries grad_i on vehicle i's position at stage tau
    // and -grad_i on vehicle j's.
    let coupling = build_coupling(trajs, spec).expect("separated centers");
    let pairs = pair_count(n);
    for (row_index, row) in coupling.rows.iter().enumerate() {
        if !row.active {
            continue;
        }
        let tau = row_index / pairs;
        let l0 = coupling.residual[row_index];
        let cols = [
            (row.i as usize, row.grad_i),
            (row.j as usize, -row.grad_i),
        ];
        for (agent, grad) in cols {
            let at = agent * per + x_at(tau);
            for c in 0..2 {
                g[at + c] += 2.0 * l0 * grad[c];
            }
        }
        for (agent_a, grad_a) in cols {
            for (agent_b, grad_b) in cols {
                let ra = agent_a * per + x_at(tau);
                let rb = agent_b * per + x_at(tau);
                for ca in 0..2 {
                    for cb in 0..2 {
                        h[(ra + ca, rb + cb)] += 2.0 * grad_a[ca] * grad_b[cb];
                    }
                }
            }
        }
    }
    let z = kkt_solve(&h, &g, &e);
    (0..n).map(|i| split_agent(&z, i * per, t)).collect()
}
