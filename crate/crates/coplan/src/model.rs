//! Problem data shared by every other module: state/input conventions, horizon
//! dimensions, the canonical ordering of vehicle pairs, and the validated
//! scenario description the planners consume.

use nalgebra::{Vector2, Vector4};
use serde::{Deserialize, Serialize};

/// Vehicle state, components `[px, py, theta, v]`: rear-axle position (m),
/// heading (rad), longitudinal speed (m/s).
pub type State = Vector4<f64>;

/// Control input, components `[delta, a]`: front steering angle (rad) and
/// longitudinal acceleration (m/s^2), both held over one sample period.
pub type Input = Vector2<f64>;

/// State dimension per vehicle.
pub const NX: usize = 4;
/// Input dimension per vehicle.
pub const NU: usize = 2;

/// Number of unordered vehicle pairs.
pub fn pair_count(n_agents: usize) -> usize {
    n_agents * n_agents.saturating_sub(1) / 2
}

/// Position of the unordered pair `(i, j)` (`i < j`, 0-based) in lexicographic
/// order: (0,1), (0,2), ..., (0,N-1), (1,2), ...
///
/// Every module that lays out per-pair data (collision penalties, coupled dual
/// coordinates) uses this ordering, so it must never change.
pub fn pair_index(i: usize, j: usize, n_agents: usize) -> usize {
    assert!(
        i < j && j < n_agents,
        "pair ({i},{j}) out of range for {n_agents} agents"
    );
    i * (2 * n_agents - i - 3) / 2 + j - 1
}

/// Problem sizes derived from the agent count and horizon. Everything here is
/// a pure function of `(n_agents, horizon)`; the struct exists so that layout
/// arithmetic is written once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dimensions {
    pub n_agents: usize,
    /// Number of input stages T; states run over tau = 0..=T.
    pub horizon: usize,
    /// Per-agent primal size: (T+1) states of 4 plus T inputs of 2.
    pub per_agent_primal: usize,
    /// Rows of the coupled vector's collision block: one per pair per stage,
    /// stage-major then pair-lexicographic.
    pub coupled_collision: usize,
    /// Rows of the coupled vector's input block: one per agent per stage per
    /// input component, agent-major then stage-major.
    pub coupled_input: usize,
    /// Total coupled rows (collision block followed by input block).
    pub coupled_total: usize,
    /// Neighbors per agent on the complete communication graph: N - 1.
    pub neighbor_count: usize,
}

impl Dimensions {
    pub fn new(n_agents: usize, horizon: usize) -> Self {
        let stages = horizon + 1;
        let coupled_collision = pair_count(n_agents) * stages;
        let coupled_input = n_agents * horizon * NU;
        Dimensions {
            n_agents,
            horizon,
            per_agent_primal: stages * NX + horizon * NU,
            coupled_collision,
            coupled_input,
            coupled_total: coupled_collision + coupled_input,
            neighbor_count: n_agents - 1,
        }
    }

    /// Row of the collision block holding pair `(i, j)` at stage `tau`.
    pub fn collision_row(&self, i: usize, j: usize, tau: usize) -> usize {
        debug_assert!(tau <= self.horizon);
        tau * pair_count(self.n_agents) + pair_index(i, j, self.n_agents)
    }

    /// First row (within the whole coupled vector) of agent `i`'s input block.
    pub fn input_block_start(&self, agent: usize) -> usize {
        debug_assert!(agent < self.n_agents);
        self.coupled_collision + agent * self.horizon * NU
    }
}

/// One vehicle's planned motion: `states[tau]` for tau = 0..=T and
/// `inputs[tau]` applied over [tau, tau+1).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
}

impl Trajectory {
    pub fn zeroed(horizon: usize) -> Self {
        Trajectory {
            states: vec![State::zeros(); horizon + 1],
            inputs: vec![Input::zeros(); horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn check_lengths(&self) -> Result<(), String> {
        if self.states.len() != self.inputs.len() + 1 {
            return Err(format!(
                "trajectory has {} states for {} inputs (want inputs + 1)",
                self.states.len(),
                self.inputs.len()
            ));
        }
        Ok(())
    }
}

/// ADMM penalty weights and iteration limits.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct HyperParams {
    /// Penalty on the dual consensus constraint (sigma > 0).
    pub sigma: f64,
    /// Penalty on the pairwise dual agreement terms (rho > 0).
    pub rho: f64,
    /// ADMM sweeps per outer (re-linearization) iteration.
    pub inner_iters: usize,
    /// Step sizes tried by the shared line search, best-first. Must end with
    /// 0 so the search can always fall back to keeping the current plan.
    pub alpha_schedule: Vec<f64>,
    /// Stop when the joint cost improves by less than this between outer
    /// iterations.
    pub outer_tol: f64,
    pub max_outer_iters: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            sigma: 0.1,
            rho: 0.01,
            inner_iters: 2,
            alpha_schedule: vec![1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.0],
            outer_tol: 1.0,
            max_outer_iters: 100,
        }
    }
}

/// Complete description of one planning problem: geometry, weights, bounds and
/// solver settings. Produced by the scenario loader/generators and consumed by
/// both planners.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    /// Number of input stages T (states run 0..=T).
    pub horizon: usize,
    /// Sample period tau_s in seconds.
    pub tau: f64,
    /// Wheelbase b in meters, shared by all vehicles.
    pub wheelbase: f64,
    /// Diagonal of the state tracking weight Q.
    pub q_diag: Vector4<f64>,
    /// Diagonal of the input effort weight R.
    pub r_diag: Vector2<f64>,
    /// Collision penalty weight.
    pub beta: f64,
    /// Center distance below which the collision penalty activates (m).
    pub d_safe: f64,
    /// Per-component input bounds, applied at every stage.
    pub input_lower: Input,
    pub input_upper: Input,
    pub initial_states: Vec<State>,
    /// Per-vehicle reference states, each of length `horizon + 1`.
    pub references: Vec<Vec<State>>,
    pub hyper: HyperParams,
}

impl ProblemSpec {
    pub fn n_agents(&self) -> usize {
        self.initial_states.len()
    }

    pub fn dims(&self) -> Dimensions {
        Dimensions::new(self.n_agents(), self.horizon)
    }

    /// Collects everything wrong with the spec (empty means usable). The
    /// planners refuse specs with violations rather than guessing.
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let n = self.n_agents();
        if n == 0 {
            bad.push("no vehicles".to_string());
        }
        if self.horizon == 0 {
            bad.push("horizon must be at least 1".to_string());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            bad.push(format!("sample period must be positive, got {}", self.tau));
        }
        if !(self.wheelbase > 0.0 && self.wheelbase.is_finite()) {
            bad.push(format!("wheelbase must be positive, got {}", self.wheelbase));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            bad.push(format!("collision weight must be >= 0, got {}", self.beta));
        }
        if self.d_safe <= 0.0 || !self.d_safe.is_finite() {
            bad.push(format!("safety distance must be positive, got {}", self.d_safe));
        }
        if self.q_diag.iter().any(|q| *q < 0.0 || !q.is_finite()) {
            bad.push("state weights must be finite and >= 0".to_string());
        }
        if self.r_diag.iter().any(|r| *r <= 0.0 || !r.is_finite()) {
            bad.push("input weights must be finite and > 0".to_string());
        }
        for c in 0..NU {
            if !(self.input_lower[c] < self.input_upper[c]) {
                bad.push(format!(
                    "input bound {c} is empty: [{}, {}]",
                    self.input_lower[c], self.input_upper[c]
                ));
            }
            if !self.input_lower[c].is_finite() || !self.input_upper[c].is_finite() {
                bad.push(format!("input bound {c} is not finite"));
            }
        }
        if self.references.len() != n {
            bad.push(format!(
                "{} reference paths for {} vehicles",
                self.references.len(),
                n
            ));
        }
        for (i, r) in self.references.iter().enumerate() {
            if r.len() != self.horizon + 1 {
                bad.push(format!(
                    "vehicle {i} reference has {} states, want {}",
                    r.len(),
                    self.horizon + 1
                ));
            }
            if r.iter().any(|s| s.iter().any(|x| !x.is_finite())) {
                bad.push(format!("vehicle {i} reference contains non-finite values"));
            }
        }
        for (i, s) in self.initial_states.iter().enumerate() {
            if s.iter().any(|x| !x.is_finite()) {
                bad.push(format!("vehicle {i} initial state contains non-finite values"));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (self.initial_states[i].xy() - self.initial_states[j].xy()).norm();
                if d < self.d_safe {
                    bad.push(format!(
                        "vehicles {i} and {j} start {d:.3} m apart, closer than d_safe = {}",
                        self.d_safe
                    ));
                }
            }
        }
        if !(self.hyper.sigma > 0.0) || !(self.hyper.rho > 0.0) {
            bad.push(format!(
                "penalty weights must be positive, got sigma = {}, rho = {}",
                self.hyper.sigma, self.hyper.rho
            ));
        }
        if self.hyper.inner_iters == 0 {
            bad.push("need at least one inner iteration".to_string());
        }
        if self.hyper.alpha_schedule.is_empty()
            || self.hyper.alpha_schedule.last() != Some(&0.0)
        {
            bad.push("step size schedule must end with 0".to_string());
        }
        if self.hyper.max_outer_iters == 0 {
            bad.push("need at least one outer iteration".to_string());
        }
        bad
    }
}
