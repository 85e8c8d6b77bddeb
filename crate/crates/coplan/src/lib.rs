//! Cooperative trajectory planning for connected vehicles.
//!
//! N vehicles with kinematic bicycle dynamics plan over a shared horizon. Each
//! outer iteration linearizes the dynamics and quadratizes the costs around the
//! current trajectories, then the vehicles solve the resulting coupled convex
//! subproblem *without a central node*: a dual consensus ADMM splits the
//! pairwise collision coupling so that every vehicle only ever solves a small
//! LQR over its own 4-state / 2-input model plus a penalty term assembled from
//! broadcast data. A shared line search turns the per-vehicle LQR solutions
//! into one dynamically feasible, input-box-respecting joint update.
//!
//! [`baseline`] solves the same problem as a single joint optimization over the
//! stacked 4N-state system; it is the reference the decentralized planner is
//! measured against.
//!
//! Execution is bulk-synchronous: per-agent phases are pure functions, and the
//! driver runs them either sequentially or (feature `parallel`, default) on a
//! rayon pool. Both lanes produce bit-identical results — reductions happen in
//! fixed agent order on collected per-agent outputs, never as unordered float
//! sums.

pub mod admm;
pub mod baseline;
pub mod cost;
pub mod dynamics;
pub mod lqr;
pub mod model;
pub mod net;
pub mod planner;
pub mod report;
pub mod scenario;

pub use baseline::plan_centralized;
pub use model::{pair_count, pair_index, Dimensions, HyperParams, ProblemSpec, Trajectory};
pub use planner::{plan_decentralized, PlanError, PlanOptions, PlanResult};

// The public types are built from nalgebra vectors; exposing the crate saves
// dependents from pinning a matching version themselves.
pub use nalgebra;
