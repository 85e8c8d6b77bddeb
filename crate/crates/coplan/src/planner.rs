//! Decentralized planner: outer linearization loop, dual consensus inner
//! sweeps, and the shared line search that keeps every iterate dynamically
//! feasible.
//!
//! One outer iteration, from each vehicle's perspective:
//!
//! 1. broadcast the current trajectory, receive everyone else's;
//! 2. linearize own dynamics and expand own tracking cost around the current
//!    plan; build the collision residual/gradients from the received plans
//!    (every vehicle computes the identical coupling — no coordinator);
//! 3. run a fixed number of dual consensus sweeps (see [`crate::admm`]): each
//!    sweep exchanges the dual copies, then solves one small LQR whose stage
//!    costs are the tracking expansion plus penalty terms assembled from the
//!    offset vector `r`;
//! 4. roll out the *nonlinear* model under the final LQR policy for each step
//!    size in the schedule, clipping inputs to the box; broadcast the
//!    candidates, evaluate the joint cost of each index, and adopt the common
//!    argmin. Step size 0 reproduces the current plan bit-for-bit, so the
//!    joint cost never increases.
//!
//! The driver is bulk-synchronous: phases run per-agent (sequentially, or on a
//! rayon pool with `threads > 1`) and meet at [`crate::net::ExchangeHub`]
//! rounds. Outputs are bit-identical across thread counts because per-agent
//! results are collected by index and every cross-agent reduction runs in
//! ascending agent order.

use crate::admm::{
    compute_r, consensus_variance, update_p, update_s, update_y, update_z, BoxBounds, DualState,
};
use crate::cost::{
    build_coupling, min_center_distance, quadratize_host, total_cost, CostError, CouplingModel,
    StageQuadratics,
};
use crate::dynamics::{linearize, rollout, step, Saturation};
use crate::lqr::{backward_pass, linear_forward, GainSchedule, IllConditioned};
use crate::model::{Dimensions, Input, ProblemSpec, State, Trajectory, NU};
use crate::net::{ExchangeHub, ExchangeStats, NetError, Payload, Phase, RoundTag};
use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid problem spec:\n  {}", .0.join("\n  "))]
    InvalidSpec(Vec<String>),
    #[error("outer iteration {outer}: {source}")]
    Coupling { outer: usize, source: CostError },
    #[error("vehicle {agent}, outer iteration {outer}: {source}")]
    Conditioning { agent: usize, outer: usize, source: IllConditioned },
    #[error("joint solve, outer iteration {outer}: {source}")]
    JointConditioning { outer: usize, source: IllConditioned },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("outer iteration {outer}: joint cost became non-finite")]
    NonFinite { outer: usize },
}

/// Execution knobs. These change how the work is scheduled, never the result.
#[derive(Debug, Clone)]
pub struct PlanOptions {
    /// Worker threads for the per-agent phases. 1 runs the sequential lane;
    /// larger values run the phases on a rayon pool of this size (capped by
    /// the agent count). Without the `parallel` feature everything is
    /// sequential regardless.
    pub threads: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        let threads = std::thread::available_parallelism().map_or(1, |p| p.get());
        #[cfg(not(feature = "parallel"))]
        let threads = 1;
        PlanOptions { threads }
    }
}

/// Wall-clock seconds spent in each phase kind, summed over iterations.
/// Diagnostics only — not covered by the determinism guarantee.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct PhaseTimings {
    pub modeling: f64,
    pub inner_sweeps: f64,
    pub line_search: f64,
}

/// What a planning run produced. `trajectories`, `cost_history`,
/// `consensus_variance`, `alpha_history`, `outer_iters` and `converged` are
/// deterministic in the spec; timing and traffic fields are diagnostics.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub trajectories: Vec<Trajectory>,
    /// Joint cost before any update, then after each outer iteration.
    pub cost_history: Vec<f64>,
    /// Consensus variance of the dual copies after each outer iteration's
    /// final sweep. Empty for a single vehicle or the centralized solver.
    pub consensus_variance: Vec<f64>,
    /// Step size adopted by each outer iteration.
    pub alpha_history: Vec<f64>,
    pub outer_iters: usize,
    /// Whether the cost-change tolerance was met before the iteration cap.
    pub converged: bool,
    pub min_distance: f64,
    /// Kinematic clamps hit by adopted rollouts (zero in sane scenarios).
    pub saturation: Saturation,
    /// LQR passes that needed a Levenberg shift.
    pub reg_events: usize,
    /// Stage linearizations that fell back to finite differences.
    pub fd_linearizations: usize,
    /// Per-vehicle wall-clock seconds inside the LQR solves (diagnostic).
    pub lqr_seconds: Vec<f64>,
    pub timings: PhaseTimings,
    pub exchange: ExchangeStats,
}

/// Per-vehicle convex model for one outer iteration: stage Jacobians of the
/// dynamics and the expanded tracking cost, both at the current trajectory.
struct AgentModel {
    a: Vec<Matrix4<f64>>,
    b: Vec<Matrix4x2<f64>>,
    host: StageQuadratics,
    fd_stages: usize,
}

fn build_agent_model(spec: &ProblemSpec, traj: &Trajectory, reference: &[State]) -> AgentModel {
    let t = traj.horizon();
    let mut a = Vec::with_capacity(t);
    let mut b = Vec::with_capacity(t);
    let mut fd_stages = 0;
    for tau in 0..t {
        let jac = linearize(&traj.states[tau], &traj.inputs[tau], spec.wheelbase, spec.tau);
        fd_stages += jac.by_differences as usize;
        a.push(jac.a);
        b.push(jac.b);
    }
    AgentModel {
        a,
        b,
        host: quadratize_host(traj, reference, &spec.q_diag, &spec.r_diag),
        fd_stages,
    }
}

/// Tracking expansion plus the penalty terms of the offset QP: with
/// `scale = 1/(sigma + 2 rho d_i)`, every stage gains `scale * Jc'Jc` on the
/// state Hessian (collision rows only touch position), `scale * Jc'r` on the
/// state gradient, `scale * I` on the input Hessian (own input rows of the
/// coupled vector are an identity embedding) and `scale * r_slice` on the
/// input gradient.
fn build_augmented(
    agent: usize,
    model: &AgentModel,
    coupling: &CouplingModel,
    r: &[f64],
    dims: &Dimensions,
    sigma: f64,
    rho: f64,
) -> StageQuadratics {
    let scale = 1.0 / (sigma + 2.0 * rho * dims.neighbor_count as f64);
    let t = dims.horizon;
    let mut aug = model.host.clone();
    let own_start = dims.input_block_start(agent);
    for tau in 0..=t {
        let stage_r = &r[coupling.stage_range(tau)];
        let (jtj, jtr) = coupling.agent_stage_terms(agent, tau, stage_r);
        // Lift the 2x2 position block into state size.
        for (bi, bj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            aug.qxx[tau][(bi, bj)] += scale * jtj[(bi, bj)];
        }
        aug.qx[tau][0] += scale * jtr[0];
        aug.qx[tau][1] += scale * jtr[1];
        if tau < t {
            aug.quu[tau][(0, 0)] += scale;
            aug.quu[tau][(1, 1)] += scale;
            let row = own_start + tau * NU;
            aug.qu[tau][0] += scale * r[row];
            aug.qu[tau][1] += scale * r[row + 1];
        }
    }
    aug
}

/// Image of one vehicle's perturbation in the coupled vector: its collision
/// rows plus its own input-deviation rows (zeros elsewhere).
fn coupled_image(
    agent: usize,
    dxs: &[Vector4<f64>],
    dus: &[Vector2<f64>],
    coupling: &CouplingModel,
    dims: &Dimensions,
) -> Vec<f64> {
    let mut image = vec![0.0; dims.coupled_total];
    coupling.accumulate_apply(agent, dxs, &mut image[..dims.coupled_collision]);
    let start = dims.input_block_start(agent);
    for (tau, du) in dus.iter().enumerate() {
        image[start + tau * NU] = du[0];
        image[start + tau * NU + 1] = du[1];
    }
    image
}

/// One dual consensus sweep for one vehicle. `ys` is the snapshot of every
/// agent's dual copy from this sweep's exchange. Returns the LQR minimizer
/// (through the *linear* dynamics) that refreshed `y`.
#[allow(clippy::too_many_arguments)]
fn inner_sweep(
    agent: usize,
    model: &AgentModel,
    dual: &mut DualState,
    ys: &[Vec<f64>],
    coupling: &CouplingModel,
    bounds: &BoxBounds,
    dims: &Dimensions,
    sigma: f64,
    rho: f64,
) -> Result<SweepOutput, IllConditioned> {
    update_p(&mut dual.p, agent, ys, rho);
    update_s(&mut dual.s, &ys[agent], &dual.z, sigma);
    let r = compute_r(agent, ys, &dual.z, &dual.p, &dual.s, rho, sigma);
    let aug = build_augmented(agent, model, coupling, &r, dims, sigma, rho);
    let lqr_start = Instant::now();
    let gains = backward_pass(&model.a, &model.b, &aug)?;
    let (dxs, dus) = linear_forward(&model.a, &model.b, &gains);
    let lqr_seconds = lqr_start.elapsed().as_secs_f64();
    let image = coupled_image(agent, &dxs, &dus, coupling, dims);
    update_y(&mut dual.y, &image, &r, sigma, rho, dims.neighbor_count);
    update_z(&mut dual.z, &dual.s, &dual.y, &coupling.residual, bounds, sigma, dims);
    Ok(SweepOutput { dxs, dus, gains, lqr_seconds })
}

struct SweepOutput {
    dxs: Vec<Vector4<f64>>,
    dus: Vec<Vector2<f64>>,
    gains: GainSchedule,
    lqr_seconds: f64,
}

/// Rolls the nonlinear model under `u = u_hat + alpha k + K (x - x_hat)` with
/// componentwise clipping to the absolute input box. With `alpha = 0` and a
/// plan whose inputs already respect the box, this reproduces the plan
/// bit-for-bit (the feedback term sees a zero error at every stage).
pub fn policy_rollout(
    current: &Trajectory,
    gains: &GainSchedule,
    alpha: f64,
    spec: &ProblemSpec,
) -> (Trajectory, Saturation) {
    let t = current.horizon();
    let mut states = Vec::with_capacity(t + 1);
    let mut inputs = Vec::with_capacity(t);
    let mut sat = Saturation::default();
    let mut x = current.states[0];
    states.push(x);
    for tau in 0..t {
        let mut u = current.inputs[tau] + alpha * gains.k[tau] + gains.kk[tau] * (x - current.states[tau]);
        u[0] = u[0].clamp(spec.input_lower[0], spec.input_upper[0]);
        u[1] = u[1].clamp(spec.input_lower[1], spec.input_upper[1]);
        let (next, s) = step(&x, &u, spec.wheelbase, spec.tau);
        sat.chord_clamps += s.chord_clamps;
        sat.heading_clamps += s.heading_clamps;
        inputs.push(u);
        states.push(next);
        x = next;
    }
    (Trajectory { states, inputs }, sat)
}

struct AgentWorker {
    id: usize,
    reference: Vec<State>,
    traj: Trajectory,
    dual: DualState,
    model: Option<AgentModel>,
    gains: Option<GainSchedule>,
    candidates: Vec<(Trajectory, Saturation)>,
    lqr_seconds: f64,
    reg_events: usize,
}

/// How the per-agent phases execute. Both lanes produce identical results.
enum Lane {
    Sequential,
    #[cfg(feature = "parallel")]
    Pool(rayon::ThreadPool),
}

impl Lane {
    fn build(threads: usize, n_agents: usize) -> Lane {
        let _ = n_agents;
        #[cfg(feature = "parallel")]
        if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.min(n_agents.max(1)))
                .build()
                .expect("rayon pool");
            return Lane::Pool(pool);
        }
        let _ = threads;
        Lane::Sequential
    }

    /// Applies `f` to every worker and collects the outputs in agent order.
    fn map<R, F>(&self, agents: &mut [AgentWorker], f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(&mut AgentWorker) -> R + Sync + Send,
    {
        match self {
            Lane::Sequential => agents.iter_mut().map(f).collect(),
            #[cfg(feature = "parallel")]
            Lane::Pool(pool) => pool.install(|| agents.par_iter_mut().map(f).collect()),
        }
    }
}

/// Initial plan: hold the box-clamped zero input over the whole horizon.
fn initial_trajectory(x0: &State, spec: &ProblemSpec) -> (Trajectory, Saturation) {
    let u0 = Input::new(
        0.0_f64.clamp(spec.input_lower[0], spec.input_upper[0]),
        0.0_f64.clamp(spec.input_lower[1], spec.input_upper[1]),
    );
    rollout(x0, &vec![u0; spec.horizon], spec.wheelbase, spec.tau)
}

/// Initial joint plan for every vehicle, with accumulated clamp counts. Both
/// planners start from this, so their comparisons share a starting point.
pub(crate) fn initial_plans(spec: &ProblemSpec) -> (Vec<Trajectory>, Saturation) {
    let mut sat = Saturation::default();
    let trajs = spec
        .initial_states
        .iter()
        .map(|x0| {
            let (t, s) = initial_trajectory(x0, spec);
            sat.chord_clamps += s.chord_clamps;
            sat.heading_clamps += s.heading_clamps;
            t
        })
        .collect();
    (trajs, sat)
}

/// Plans trajectories for every vehicle in the spec without any central
/// solve. See the module docs for the loop structure.
pub fn plan_decentralized(spec: &ProblemSpec, opts: &PlanOptions) -> Result<PlanResult, PlanError> {
    let violations = spec.validate();
    if !violations.is_empty() {
        return Err(PlanError::InvalidSpec(violations));
    }
    let n = spec.n_agents();
    let dims = spec.dims();
    let hyper = spec.hyper.clone();
    let lane = Lane::build(opts.threads, n);
    let hub = ExchangeHub::new(n);

    let mut saturation = Saturation::default();
    let mut agents: Vec<AgentWorker> = (0..n)
        .map(|id| {
            let (traj, sat) = initial_trajectory(&spec.initial_states[id], spec);
            saturation.chord_clamps += sat.chord_clamps;
            saturation.heading_clamps += sat.heading_clamps;
            AgentWorker {
                id,
                reference: spec.references[id].clone(),
                traj,
                dual: DualState::zeros(dims.coupled_total),
                model: None,
                gains: None,
                candidates: Vec::new(),
                lqr_seconds: 0.0,
                reg_events: 0,
            }
        })
        .collect();

    let mut timings = PhaseTimings::default();
    let mut cost_history = Vec::with_capacity(hyper.max_outer_iters + 1);
    let mut variance_history = Vec::new();
    let mut alpha_history = Vec::new();
    let mut fd_linearizations = 0;
    let mut converged = false;

    let initial: Vec<Trajectory> = agents.iter().map(|a| a.traj.clone()).collect();
    let mut cost_prev = total_cost(&initial, spec);
    if !cost_prev.is_finite() {
        return Err(PlanError::NonFinite { outer: 0 });
    }
    cost_history.push(cost_prev);

    let mut outer_done = 0;
    for outer in 0..hyper.max_outer_iters {
        // Phase 1: trajectory exchange + convex model build.
        let started = Instant::now();
        let tag = RoundTag { outer: outer as u32, inner: 0, phase: Phase::Trajectories };
        let payloads: Vec<Payload> =
            agents.iter().map(|a| Payload::Trajectory(a.traj.clone())).collect();
        let delivered = hub.exchange_round(tag, payloads)?;
        let trajs: Vec<Trajectory> =
            delivered.iter().map(|p| p.as_trajectory().clone()).collect();
        let coupling = build_coupling(&trajs, spec)
            .map_err(|source| PlanError::Coupling { outer, source })?;
        let bounds = BoxBounds::around(&trajs, spec);
        fd_linearizations += lane
            .map(&mut agents, |a| {
                let model = build_agent_model(spec, &a.traj, &a.reference);
                let fd = model.fd_stages;
                a.model = Some(model);
                a.dual.reset_running_sums();
                fd
            })
            .into_iter()
            .sum::<usize>();
        timings.modeling += started.elapsed().as_secs_f64();

        // Phase 2: dual consensus sweeps on the frozen convex model.
        let started = Instant::now();
        for inner in 0..hyper.inner_iters {
            let tag = RoundTag {
                outer: outer as u32,
                inner: inner as u32,
                phase: Phase::Duals,
            };
            let payloads: Vec<Payload> =
                agents.iter().map(|a| Payload::Duals(a.dual.y.clone())).collect();
            let delivered = hub.exchange_round(tag, payloads)?;
            let ys: Vec<Vec<f64>> = delivered
                .into_iter()
                .map(|p| match p {
                    Payload::Duals(d) => d,
                    other => panic!("expected duals, got {other:?}"),
                })
                .collect();
            let results = lane.map(&mut agents, |a| {
                let out = inner_sweep(
                    a.id,
                    a.model.as_ref().expect("model built this outer iteration"),
                    &mut a.dual,
                    &ys,
                    &coupling,
                    &bounds,
                    &dims,
                    hyper.sigma,
                    hyper.rho,
                )?;
                a.lqr_seconds += out.lqr_seconds;
                a.reg_events += (out.gains.reg_used > 0.0) as usize;
                a.gains = Some(out.gains);
                Ok::<_, IllConditioned>((out.dxs, out.dus))
            });
            for (agent, res) in results.into_iter().enumerate() {
                if let Err(source) = res {
                    return Err(PlanError::Conditioning { agent, outer, source });
                }
            }
        }
        let ys_now: Vec<&[f64]> = agents.iter().map(|a| a.dual.y.as_slice()).collect();
        variance_history.push(consensus_variance(&ys_now));
        timings.inner_sweeps += started.elapsed().as_secs_f64();

        // Phase 3: candidate rollouts, shared line search, adoption.
        let started = Instant::now();
        let alphas = hyper.alpha_schedule.clone();
        lane.map(&mut agents, |a| {
            let gains = a.gains.as_ref().expect("gains from the last sweep");
            a.candidates = alphas
                .iter()
                .map(|&alpha| {
                    let out = policy_rollout(&a.traj, gains, alpha, spec);
                    if alpha == 0.0 {
                        debug_assert_eq!(out.0, a.traj, "zero step must reproduce the plan");
                    }
                    out
                })
                .collect();
        });
        let tag = RoundTag { outer: outer as u32, inner: 0, phase: Phase::Candidates };
        let payloads: Vec<Payload> = agents
            .iter()
            .map(|a| Payload::Candidates(a.candidates.iter().map(|(t, _)| t.clone()).collect()))
            .collect();
        let delivered = hub.exchange_round(tag, payloads)?;
        // Every vehicle evaluates the joint cost of every candidate index;
        // selections must agree exactly or the lockstep contract is broken.
        let cost_tables: Vec<Vec<f64>> = lane.map(&mut agents, |_a| {
            (0..alphas.len())
                .map(|c| {
                    let joint: Vec<Trajectory> = delivered
                        .iter()
                        .map(|p| p.as_candidates()[c].clone())
                        .collect();
                    total_cost(&joint, spec)
                })
                .collect()
        });
        for table in &cost_tables[1..] {
            assert_eq!(
                table, &cost_tables[0],
                "agents disagree on candidate costs; exchange is corrupted"
            );
        }
        if cost_tables[0].iter().any(|c| !c.is_finite()) {
            return Err(PlanError::NonFinite { outer });
        }
        let best = cost_tables[0]
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.partial_cmp(b).expect("finite costs"))
            .map(|(idx, _)| idx)
            .expect("non-empty schedule");
        let cost_new = cost_tables[0][best];
        for a in agents.iter_mut() {
            let (traj, sat) = a.candidates[best].clone();
            a.traj = traj;
            saturation.chord_clamps += sat.chord_clamps;
            saturation.heading_clamps += sat.heading_clamps;
        }
        alpha_history.push(alphas[best]);
        timings.line_search += started.elapsed().as_secs_f64();

        cost_history.push(cost_new);
        outer_done = outer + 1;
        if (cost_prev - cost_new).abs() < hyper.outer_tol {
            converged = true;
            break;
        }
        cost_prev = cost_new;
    }

    let trajectories: Vec<Trajectory> = agents.iter().map(|a| a.traj.clone()).collect();
    Ok(PlanResult {
        min_distance: min_center_distance(&trajectories),
        trajectories,
        cost_history,
        consensus_variance: variance_history,
        alpha_history,
        outer_iters: outer_done,
        converged,
        saturation,
        reg_events: agents.iter().map(|a| a.reg_events).sum(),
        fd_linearizations,
        lqr_seconds: agents.iter().map(|a| a.lqr_seconds).collect(),
        timings,
        exchange: hub.stats(),
    })
}

/// Outcome of running the inner sweeps alone on one frozen convex model.
pub struct ConvexOutcome {
    /// Per-vehicle LQR minimizers after the last sweep (linear dynamics).
    pub deltas: Vec<(Vec<Vector4<f64>>, Vec<Vector2<f64>>)>,
    /// Final dual states, for inspecting consensus.
    pub duals: Vec<DualState>,
    /// Consensus variance of the final dual copies.
    pub consensus_variance: f64,
    /// Coupling built at the given trajectories (shared by all vehicles).
    pub coupling: CouplingModel,
    pub bounds: BoxBounds,
}

/// Runs `rounds` dual consensus sweeps on the convex subproblem built at
/// `trajs`, without ever updating the trajectories. This is the planner's
/// inner loop exposed for analysis: with enough rounds the deltas converge to
/// the joint convex solution.
pub fn solve_convex(
    spec: &ProblemSpec,
    trajs: &[Trajectory],
    rounds: usize,
) -> Result<ConvexOutcome, PlanError> {
    let n = trajs.len();
    let dims = Dimensions::new(n, spec.horizon);
    let coupling =
        build_coupling(trajs, spec).map_err(|source| PlanError::Coupling { outer: 0, source })?;
    let bounds = BoxBounds::around(trajs, spec);
    let models: Vec<AgentModel> = trajs
        .iter()
        .zip(&spec.references)
        .map(|(traj, reference)| build_agent_model(spec, traj, reference))
        .collect();
    let mut duals: Vec<DualState> = (0..n).map(|_| DualState::zeros(dims.coupled_total)).collect();
    let mut deltas: Vec<(Vec<Vector4<f64>>, Vec<Vector2<f64>>)> = Vec::new();
    for _round in 0..rounds {
        let ys: Vec<Vec<f64>> = duals.iter().map(|d| d.y.clone()).collect();
        deltas = duals
            .iter_mut()
            .enumerate()
            .map(|(agent, dual)| {
                let out = inner_sweep(
                    agent,
                    &models[agent],
                    dual,
                    &ys,
                    &coupling,
                    &bounds,
                    &dims,
                    spec.hyper.sigma,
                    spec.hyper.rho,
                )
                .map_err(|source| PlanError::Conditioning { agent, outer: 0, source })?;
                Ok((out.dxs, out.dus))
            })
            .collect::<Result<_, PlanError>>()?;
    }
    let ys: Vec<&[f64]> = duals.iter().map(|d| d.y.as_slice()).collect();
    let consensus_variance = consensus_variance(&ys);
    Ok(ConvexOutcome { deltas, duals, consensus_variance, coupling, bounds })
}
