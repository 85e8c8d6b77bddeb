//! Acceptance suite: ten checks covering derivative consistency, oracle
//! equivalence of the two solver layers, end-to-end behavior on the builtin
//! scenarios, the collision-weight trend, scaling diagnostics and hard run
//! invariants. Each check prints one PASS/FAIL line with its headline
//! numbers; the test fails if any non-informative check fails.

mod common;

use std::time::Instant;

use coplan::cost::{build_coupling, StageQuadratics};
use coplan::dynamics::{linearize, rollout, step};
use coplan::lqr::{backward_pass, linear_forward};
use coplan::model::{Input, State};
use coplan::nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};
use coplan::planner::solve_convex;
use coplan::{
    plan_centralized, plan_decentralized, scenario, HyperParams, PlanOptions, PlanResult,
    ProblemSpec, Trajectory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Twice the half-diagonal of a 2.5 x 1.6 m vehicle body: center distances
/// at or above this mean the bodies cannot overlap at any orientation.
const NO_OVERLAP: f64 = 2.97;

fn dec(spec: &ProblemSpec, threads: usize) -> PlanResult {
    plan_decentralized(spec, &PlanOptions { threads }).expect("decentralized run")
}

fn cen(spec: &ProblemSpec) -> PlanResult {
    plan_centralized(spec).expect("centralized run")
}

fn final_cost(r: &PlanResult) -> f64 {
    *r.cost_history.last().unwrap()
}

struct Criterion {
    label: &'static str,
    verdict: Result<String, String>,
    informative: bool,
    seconds: f64,
}

struct Suite {
    lines: Vec<Criterion>,
}

impl Suite {
    fn run(
        &mut self,
        label: &'static str,
        budget_s: f64,
        informative: bool,
        body: impl FnOnce() -> Result<String, String>,
    ) {
        let started = Instant::now();
        let mut verdict = body();
        let seconds = started.elapsed().as_secs_f64();
        if verdict.is_ok() && seconds > budget_s {
            verdict = Err(format!("took {seconds:.1} s, budget {budget_s} s"));
        }
        self.lines.push(Criterion { label, verdict, informative, seconds });
    }
}

#[test]
fn all_criteria() {
    let mut suite = Suite { lines: Vec::new() };

    suite.run("dynamics and coupling gradients", 10.0, false, gradients);
    suite.run("riccati matches dense KKT", 30.0, false, lqr_against_oracle);
    suite.run("inner sweeps reach the joint QP solution", 30.0, false, admm_against_oracle);
    suite.run("single vehicle matches the joint solver", 10.0, false, degenerate_equivalence);

    // Scenario runs are shared by the later criteria.
    let tj = scenario::t_junction();
    let ix = scenario::intersection(12).unwrap();
    let mut tj_dec = None;
    let mut ix_dec = None;

    suite.run("t-junction", 30.0, false, || {
        let (line, run) = t_junction_bars(&tj)?;
        tj_dec = Some(run);
        Ok(line)
    });
    suite.run("intersection of twelve", 300.0, false, || {
        let (line, run) = intersection_bars(&ix)?;
        ix_dec = Some(run);
        Ok(line)
    });

    let mut sweep_runs = Vec::new();
    suite.run("collision weight trend", 900.0, false, || {
        let (line, runs) = beta_sweep(&ix)?;
        sweep_runs = runs;
        Ok(line)
    });

    let missing = |which: &str| format!("depends on the failed {which} run");
    suite.run("consensus variance collapse", 60.0, false, || {
        let tj_run = tj_dec.as_ref().ok_or_else(|| missing("t-junction"))?;
        let ix_run = ix_dec.as_ref().ok_or_else(|| missing("intersection"))?;
        variance_collapse(tj_run, ix_run)
    });
    suite.run("scaling diagnostics", 600.0, true, || {
        scaling_info(ix_dec.as_ref().ok_or_else(|| missing("intersection"))?)
    });
    suite.run("hard run invariants", 120.0, false, || {
        let tj_run = tj_dec.as_ref().ok_or_else(|| missing("t-junction"))?;
        let ix_run = ix_dec.as_ref().ok_or_else(|| missing("intersection"))?;
        hard_invariants(&tj, &ix, tj_run, ix_run, &sweep_runs)
    });

    let mut failed = Vec::new();
    for (index, c) in suite.lines.iter().enumerate() {
        let tag = match (&c.verdict, c.informative) {
            (Ok(_), false) => "PASS",
            (Ok(_), true) => "INFO",
            (Err(_), true) => "INFO(!)",
            (Err(_), false) => "FAIL",
        };
        let body = match &c.verdict {
            Ok(s) | Err(s) => s,
        };
        println!(
            "criterion {:>2} {tag:<7} {:<42} ({:>6.2} s) {body}",
            index + 1,
            c.label,
            c.seconds,
        );
        if matches!(&c.verdict, Err(_)) && !c.informative {
            failed.push(format!("{} — {}", c.label, body));
        }
    }
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}

// ---------------------------------------------------------------------------
// 1. Analytic stage Jacobians against central finite differences, and the
//    coupling rows against finite differences of the residual they linearize.

fn gradients() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (wheelbase, tau) = (1.7, 0.1);
    let mut worst_ab = 0.0f64;
    for sample in 0..1000 {
        let x = State::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-3.1..3.1),
            rng.gen_range(0.0..12.0),
        );
        let u = Input::new(rng.gen_range(-0.6..0.6), rng.gen_range(-3.0..1.5));
        let jac = linearize(&x, &u, wheelbase, tau);
        if jac.by_differences {
            return Err(format!("sample {sample} fell back to differences"));
        }
        let mut fd_a = Matrix4::zeros();
        let mut fd_b = Matrix4x2::zeros();
        for c in 0..4 {
            let h = 1e-6 * (1.0 + x[c].abs());
            let (mut xp, mut xm) = (x, x);
            xp[c] += h;
            xm[c] -= h;
            let diff = (step(&xp, &u, wheelbase, tau).0 - step(&xm, &u, wheelbase, tau).0) / (2.0 * h);
            fd_a.set_column(c, &diff);
        }
        for c in 0..2 {
            let h = 1e-6 * (1.0 + u[c].abs());
            let (mut up, mut um) = (u, u);
            up[c] += h;
            um[c] -= h;
            let diff = (step(&x, &up, wheelbase, tau).0 - step(&x, &um, wheelbase, tau).0) / (2.0 * h);
            fd_b.set_column(c, &diff);
        }
        for r in 0..4 {
            for c in 0..4 {
                worst_ab = worst_ab.max((jac.a[(r, c)] - fd_a[(r, c)]).abs() / fd_a[(r, c)].abs().max(1.0));
            }
            for c in 0..2 {
                worst_ab = worst_ab.max((jac.b[(r, c)] - fd_b[(r, c)]).abs() / fd_b[(r, c)].abs().max(1.0));
            }
        }
    }
    if worst_ab >= 1e-5 {
        return Err(format!("A,B relative error {worst_ab:.2e} >= 1e-5"));
    }

    // Coupling rows: one pair, one stage; differentiate the residual the
    // implementation itself reports under position perturbations.
    let mut spec = two_vehicle_spec(0);
    let mut worst_row = 0.0f64;
    for _ in 0..1000 {
        let base = Vector2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        // 70% active rows, the rest safely outside the penalty radius; both
        // branches keep finite differences away from the activation kink.
        let d = if rng.gen_bool(0.7) { rng.gen_range(0.5..5.4) } else { rng.gen_range(5.6..9.0) };
        let other = base + d * Vector2::new(angle.cos(), angle.sin());
        spec.initial_states[0] = State::new(base[0], base[1], 0.0, 0.0);
        spec.initial_states[1] = State::new(other[0], other[1], 0.0, 0.0);
        let trajs: Vec<Trajectory> = spec
            .initial_states
            .iter()
            .map(|x0| Trajectory { states: vec![*x0], inputs: vec![] })
            .collect();
        let coupling = build_coupling(&trajs, &spec).map_err(|e| e.to_string())?;
        let row = coupling.rows[0];
        let grads = [row.grad_i, -row.grad_i];
        for agent in 0..2 {
            for c in 0..2 {
                let h = 1e-6;
                let mut plus = trajs.clone();
                let mut minus = trajs.clone();
                plus[agent].states[0][c] += h;
                minus[agent].states[0][c] -= h;
                let rp = build_coupling(&plus, &spec).map_err(|e| e.to_string())?.residual[0];
                let rm = build_coupling(&minus, &spec).map_err(|e| e.to_string())?.residual[0];
                let fd = (rp - rm) / (2.0 * h);
                worst_row = worst_row.max((grads[agent][c] - fd).abs() / fd.abs().max(1.0));
            }
        }
    }
    if worst_row >= 1e-4 {
        return Err(format!("coupling row relative error {worst_row:.2e} >= 1e-4"));
    }
    Ok(format!("A,B err {worst_ab:.1e} (< 1e-5); coupling err {worst_row:.1e} (< 1e-4)"))
}

// ---------------------------------------------------------------------------
// 2. Riccati + linear forward against the dense KKT solve of the same
//    subproblem, on random well-posed instances.

fn lqr_against_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    for instance in 0..50 {
        let t = rng.gen_range(1..=8);
        let a: Vec<Matrix4<f64>> =
            (0..t).map(|_| Matrix4::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
        let b: Vec<Matrix4x2<f64>> =
            (0..t).map(|_| Matrix4x2::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
        let costs = StageQuadratics {
            qx: (0..=t).map(|_| Vector4::from_fn(|_, _| rng.gen_range(-2.0..2.0))).collect(),
            qxx: (0..=t)
                .map(|_| {
                    let m = Matrix4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                    m * m.transpose()
                })
                .collect(),
            qu: (0..t).map(|_| Vector2::from_fn(|_, _| rng.gen_range(-2.0..2.0))).collect(),
            quu: (0..t)
                .map(|_| {
                    let m = Matrix2::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                    m * m.transpose() + Matrix2::identity() * 0.5
                })
                .collect(),
        };
        let gains = backward_pass(&a, &b, &costs).map_err(|e| format!("instance {instance}: {e}"))?;
        if gains.reg_used != 0.0 {
            return Err(format!("instance {instance} needed a shift {}", gains.reg_used));
        }
        let (dx, du) = linear_forward(&a, &b, &gains);
        let (ox, ou) = common::lqr_oracle(&a, &b, &costs);
        for tau in 0..=t {
            worst = worst.max((dx[tau] - ox[tau]).abs().max());
        }
        for tau in 0..t {
            worst = worst.max((du[tau] - ou[tau]).abs().max());
        }
    }
    if worst >= 1e-6 {
        return Err(format!("max deviation {worst:.2e} >= 1e-6"));
    }
    Ok(format!("50 instances, max deviation {worst:.1e} (< 1e-6)"))
}

// ---------------------------------------------------------------------------
// 3. The decentralized inner sweeps, run to near-convergence on one frozen
//    convex subproblem, against the dense joint QP over both vehicles.

/// Two vehicles abreast 2 m apart (inside the 5.5 m penalty radius), both
/// tracking straight references at constant speed, so the convex subproblem
/// is pure mutual avoidance with every collision row active.
fn two_vehicle_spec(horizon: usize) -> ProblemSpec {
    let x0 = [State::new(-1.0, -1.0, 0.0, 3.0), State::new(-1.0, 1.0, 0.0, 3.0)];
    let references = x0
        .iter()
        .map(|s| {
            (0..=horizon)
                .map(|tau| State::new(s[0] + 0.3 * tau as f64, s[1], 0.0, 3.0))
                .collect()
        })
        .collect();
    ProblemSpec {
        horizon,
        tau: 0.1,
        wheelbase: 1.7,
        q_diag: Vector4::new(1.0, 1.0, 0.0, 0.0),
        r_diag: Vector2::new(1.0, 1.0),
        beta: 1.44,
        d_safe: 5.5,
        input_lower: Input::new(-10.0, -10.0),
        input_upper: Input::new(10.0, 10.0),
        initial_states: x0.to_vec(),
        references,
        hyper: HyperParams::default(),
    }
}

fn admm_against_oracle() -> Result<String, String> {
    let spec = two_vehicle_spec(5);
    let trajs: Vec<Trajectory> = spec
        .initial_states
        .iter()
        .map(|x0| rollout(x0, &vec![Input::zeros(); spec.horizon], spec.wheelbase, spec.tau).0)
        .collect();
    let oracle = common::joint_qp_oracle(&spec, &trajs);
    // The oracle ignores the input box, so the comparison is only meaningful
    // while the box stays slack at the optimum.
    for (agent, (_, dus)) in oracle.iter().enumerate() {
        for (tau, du) in dus.iter().enumerate() {
            for c in 0..2 {
                let u = trajs[agent].inputs[tau][c] + du[c];
                if u < spec.input_lower[c] + 0.5 || u > spec.input_upper[c] - 0.5 {
                    return Err(format!("oracle solution leaves no box margin at agent {agent} stage {tau}"));
                }
            }
        }
    }
    let outcome = solve_convex(&spec, &trajs, 500).map_err(|e| e.to_string())?;
    let mut primal = 0.0f64;
    for agent in 0..2 {
        let (ox, ou) = &oracle[agent];
        let (dx, du) = &outcome.deltas[agent];
        for tau in 0..=spec.horizon {
            primal = primal.max((dx[tau] - ox[tau]).abs().max());
        }
        for tau in 0..spec.horizon {
            primal = primal.max((du[tau] - ou[tau]).abs().max());
        }
    }
    if primal >= 1e-4 {
        return Err(format!("primal error {primal:.2e} >= 1e-4 after 500 sweeps"));
    }
    if outcome.consensus_variance >= 1e-10 {
        return Err(format!("consensus variance {:.2e} >= 1e-10", outcome.consensus_variance));
    }
    Ok(format!(
        "primal error {primal:.1e} (< 1e-4), consensus variance {:.1e} (< 1e-10)",
        outcome.consensus_variance
    ))
}

// ---------------------------------------------------------------------------
// 4. With one vehicle there is nothing to negotiate: the decentralized
//    planner and the joint solver must land on the same cost.

fn degenerate_equivalence() -> Result<String, String> {
    // The stem vehicle turns left, so its zero-input start is far from the
    // reference and the solvers have real work to agree on. The instance's
    // optimal cost is below 1, so the default stop-when-improvement-drops-
    // below-1 rule would park both solvers far from the optimum; equivalence
    // is only observable when both run to genuine convergence.
    let mut spec = scenario::t_junction();
    spec.initial_states = vec![spec.initial_states[2]];
    spec.references = vec![spec.references[2].clone()];
    spec.hyper.outer_tol = 1e-9;
    spec.hyper.max_outer_iters = 20_000;
    let d = dec(&spec, 1);
    let c = cen(&spec);
    let (jd, jc) = (final_cost(&d), final_cost(&c));
    if d.cost_history[0] < 100.0 {
        return Err(format!("start cost {:.1} — instance is too easy to be evidence", d.cost_history[0]));
    }
    let rel = (jd - jc).abs() / jc.max(1e-9);
    if rel >= 1e-6 {
        return Err(format!("costs {jd:.9} vs {jc:.9}, relative gap {rel:.2e} >= 1e-6"));
    }
    Ok(format!("cost {jd:.4} both ways, relative gap {rel:.1e} (< 1e-6)"))
}

// ---------------------------------------------------------------------------
// 5. T-junction bars.

fn t_junction_bars(tj: &ProblemSpec) -> Result<(String, PlanResult), String> {
    assert_eq!(
        (tj.hyper.sigma, tj.hyper.rho, tj.hyper.inner_iters, tj.beta),
        (0.1, 0.01, 2, 1.44),
        "builtin t-junction changed its advertised parameters"
    );
    let run = dec(tj, 1);
    if run.outer_iters > 50 {
        return Err(format!("{} outer iterations > 50", run.outer_iters));
    }
    if run.min_distance < NO_OVERLAP {
        return Err(format!("min distance {:.3} m < {NO_OVERLAP} m", run.min_distance));
    }
    for w in run.cost_history.windows(2) {
        if w[1] > w[0] + 1e-9 * w[0].abs().max(1.0) {
            return Err(format!("cost increased {} -> {}", w[0], w[1]));
        }
    }
    let joint = cen(tj);
    let (jd, jc) = (final_cost(&run), final_cost(&joint));
    let gap = (jd - jc).abs() / jc;
    if gap >= 0.02 {
        return Err(format!("cost {jd:.2} vs joint {jc:.2}; gap {:.2}% >= 2%", gap * 100.0));
    }
    let line = format!(
        "{} outers, min {:.2} m, cost {jd:.2} vs joint {jc:.2} (gap {:.3}%)",
        run.outer_iters,
        run.min_distance,
        gap * 100.0,
    );
    Ok((line, run))
}

// ---------------------------------------------------------------------------
// 6. Twelve-vehicle intersection bars.

fn intersection_bars(ix: &ProblemSpec) -> Result<(String, PlanResult), String> {
    assert_eq!(
        (ix.hyper.sigma, ix.hyper.rho, ix.hyper.inner_iters, ix.beta),
        (0.01, 0.001, 3, 1.44),
        "builtin intersection changed its advertised parameters"
    );
    let run = dec(ix, 1);
    if run.outer_iters > 60 {
        return Err(format!("{} outer iterations > 60", run.outer_iters));
    }
    if run.min_distance < NO_OVERLAP {
        return Err(format!("min distance {:.3} m < {NO_OVERLAP} m", run.min_distance));
    }
    let joint = cen(ix);
    let (jd, jc) = (final_cost(&run), final_cost(&joint));
    if jd > jc * 1.05 {
        return Err(format!("cost {jd:.2} > joint {jc:.2} x 1.05"));
    }
    let line = format!(
        "{} outers, min {:.2} m, cost {jd:.2} <= joint {jc:.2} x 1.05",
        run.outer_iters, run.min_distance,
    );
    Ok((line, run))
}

// ---------------------------------------------------------------------------
// 7. Clearance and effort both rise with the collision weight.

fn beta_sweep(ix: &ProblemSpec) -> Result<(String, Vec<(ProblemSpec, PlanResult)>), String> {
    let betas = [1.00, 1.44, 1.96, 2.56];
    let mut runs = Vec::new();
    let mut cells = Vec::new();
    for beta in betas {
        let mut spec = ix.clone();
        spec.beta = beta;
        let run = dec(&spec, 1);
        cells.push(format!("{beta:.2}: {:.3} m/{} it", run.min_distance, run.outer_iters));
        runs.push((spec, run));
    }
    for w in runs.windows(2) {
        let (a, b) = (&w[0].1, &w[1].1);
        if b.min_distance < a.min_distance {
            return Err(format!("min distance fell: {cells:?}"));
        }
        if b.outer_iters < a.outer_iters {
            return Err(format!("iteration count fell: {cells:?}"));
        }
    }
    Ok((cells.join("; "), runs))
}

// ---------------------------------------------------------------------------
// 8. The dual copies actually reach consensus on both scenarios.

fn variance_collapse(tj: &PlanResult, ix: &PlanResult) -> Result<String, String> {
    let mut drops = Vec::new();
    for (name, run) in [("t-junction", tj), ("intersection", ix)] {
        let first = *run.consensus_variance.first().ok_or("no variance recorded")?;
        let last = *run.consensus_variance.last().unwrap();
        let orders = (first / last).log10();
        if orders < 3.0 {
            return Err(format!("{name}: variance fell only {orders:.1} orders (need >= 3)"));
        }
        drops.push(format!("{name} {first:.1e} -> {last:.1e} ({orders:.1} orders)"));
    }
    Ok(drops.join("; "))
}

// ---------------------------------------------------------------------------
// 9. Scaling diagnostics (informative). The per-vehicle subproblem has a
//    fixed size, so the time of one LQR solve should not follow the fleet
//    size; the wall-clock ratios depend on the host's core count and are
//    reported for inspection rather than asserted.

fn scaling_info(ix12_seq: &PlanResult) -> Result<String, String> {
    let ix4 = scenario::intersection(4).unwrap();
    let ix12 = scenario::intersection(12).unwrap();
    let per_solve = |run: &PlanResult, n: usize, inner: usize| {
        let solves = (n * run.outer_iters * inner) as f64;
        run.lqr_seconds.iter().sum::<f64>() / solves
    };
    let seq4 = dec(&ix4, 1);
    let flat = per_solve(&seq4, 4, ix4.hyper.inner_iters)
        / per_solve(ix12_seq, 12, ix12.hyper.inner_iters);
    let flat_note = if flat > 2.0 / 3.0 && flat < 1.5 { "flat" } else { "NOT flat" };

    let wall = |f: &dyn Fn() -> PlanResult| {
        let started = Instant::now();
        let _ = f();
        started.elapsed().as_secs_f64()
    };
    let dec4 = wall(&|| dec(&ix4, 4));
    let dec12 = wall(&|| dec(&ix12, 12));
    let cen4 = wall(&|| cen(&ix4));
    let cen12 = wall(&|| cen(&ix12));
    let (dec_ratio, cen_ratio) = (dec12 / dec4, cen12 / cen4);
    Ok(format!(
        "per-solve LQR 4-vs-12 ratio {flat:.2} ({flat_note}); wall 4->12: workers {dec_ratio:.1}x \
         (guide <= 4x), joint {cen_ratio:.1}x (guide >= 6x) on {} core(s)",
        std::thread::available_parallelism().map_or(1, |p| p.get()),
    ))
}

// ---------------------------------------------------------------------------
// 10. Hard invariants on every stored run, plus bitwise determinism.

fn check_run(spec: &ProblemSpec, run: &PlanResult) -> Result<(), String> {
    for (agent, traj) in run.trajectories.iter().enumerate() {
        if traj.states[0] != spec.initial_states[agent] {
            return Err(format!("agent {agent} does not start at its initial state"));
        }
        for (tau, u) in traj.inputs.iter().enumerate() {
            for c in 0..2 {
                if u[c] < spec.input_lower[c] || u[c] > spec.input_upper[c] {
                    return Err(format!("agent {agent} stage {tau} input {c} = {} outside the box", u[c]));
                }
            }
        }
        for tau in 0..spec.horizon {
            let next = step(&traj.states[tau], &traj.inputs[tau], spec.wheelbase, spec.tau).0;
            let residual = (next - traj.states[tau + 1]).abs().max();
            if residual >= 1e-9 {
                return Err(format!("agent {agent} stage {tau} dynamics residual {residual:.2e}"));
            }
        }
    }
    Ok(())
}

fn hard_invariants(
    tj: &ProblemSpec,
    ix: &ProblemSpec,
    tj_run: &PlanResult,
    ix_run: &PlanResult,
    sweep: &[(ProblemSpec, PlanResult)],
) -> Result<String, String> {
    let mut checked = 0;
    for (spec, run) in [(tj, tj_run), (ix, ix_run)] {
        check_run(spec, run)?;
        checked += 1;
    }
    for (spec, run) in sweep {
        check_run(spec, run)?;
        checked += 1;
    }
    for (spec, run) in [(tj, tj_run), (ix, ix_run)] {
        let joint = cen(spec);
        check_run(spec, &joint)?;
        checked += 1;
        let again = dec(spec, 1);
        if again.trajectories != run.trajectories || again.cost_history != run.cost_history {
            return Err("rerun with identical inputs differed".into());
        }
        let threaded = dec(spec, 4);
        if threaded.trajectories != run.trajectories || threaded.cost_history != run.cost_history {
            return Err("threaded run differed from the sequential run".into());
        }
    }
    Ok(format!(
        "{checked} runs: inputs in box, zero dynamics residual; reruns and 4-thread runs bit-identical"
    ))
}
