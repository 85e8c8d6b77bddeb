//! Discrete kinematic bicycle model.
//!
//! Over one sample period `tau` with held input `(delta, a)`, the rear axle
//! advances by the chord
//!
//! ```text
//! f_r = b + tau*v*cos(delta) - sqrt(b^2 - (tau*v*sin(delta))^2)
//! ```
//!
//! and the state updates as
//!
//! ```text
//! px' = px + f_r * cos(theta)
//! py' = py + f_r * sin(theta)
//! theta' = theta + asin(tau*v*sin(delta) / b)
//! v' = v + tau * a
//! ```
//!
//! The square root argument and the asin argument are clamped to their valid
//! ranges; a clamp means the commanded turn is kinematically saturated for the
//! current speed, and the event is reported so callers can notice scenarios
//! that drive the model outside its envelope.

use crate::model::{Input, State, Trajectory};
use nalgebra::{Matrix4, Matrix4x2};

/// How often [`step`] had to clamp during a rollout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Saturation {
    /// sqrt argument b^2 - (tau*v*sin(delta))^2 fell below zero.
    pub chord_clamps: usize,
    /// asin argument tau*v*sin(delta)/b left [-1, 1].
    pub heading_clamps: usize,
}

impl Saturation {
    pub fn any(&self) -> bool {
        self.chord_clamps > 0 || self.heading_clamps > 0
    }

    fn absorb(&mut self, other: Saturation) {
        self.chord_clamps += other.chord_clamps;
        self.heading_clamps += other.heading_clamps;
    }
}

/// Rear-axle chord length for one period. Returns the clamp flag alongside.
pub fn chord(v: f64, delta: f64, wheelbase: f64, tau: f64) -> (f64, bool) {
    let lateral = tau * v * delta.sin();
    let arg = wheelbase * wheelbase - lateral * lateral;
    let clamped = arg < 0.0;
    let root = if clamped { 0.0 } else { arg.sqrt() };
    (wheelbase + tau * v * delta.cos() - root, clamped)
}

/// Advances the state by one period.
pub fn step(x: &State, u: &Input, wheelbase: f64, tau: f64) -> (State, Saturation) {
    let (delta, a) = (u[0], u[1]);
    let (f_r, chord_clamped) = chord(x[3], delta, wheelbase, tau);
    let sin_arg = tau * x[3] * delta.sin() / wheelbase;
    let heading_clamped = !(-1.0..=1.0).contains(&sin_arg);
    let sat = Saturation {
        chord_clamps: chord_clamped as usize,
        heading_clamps: heading_clamped as usize,
    };
    let next = State::new(
        x[0] + f_r * x[2].cos(),
        x[1] + f_r * x[2].sin(),
        x[2] + sin_arg.clamp(-1.0, 1.0).asin(),
        x[3] + tau * a,
    );
    (next, sat)
}

/// Simulates the input sequence from `x0`. The returned trajectory satisfies
/// `states[tau + 1] == step(states[tau], inputs[tau])` exactly.
pub fn rollout(x0: &State, inputs: &[Input], wheelbase: f64, tau: f64) -> (Trajectory, Saturation) {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x0);
    let mut sat = Saturation::default();
    let mut x = *x0;
    for u in inputs {
        let (next, s) = step(&x, u, wheelbase, tau);
        sat.absorb(s);
        states.push(next);
        x = next;
    }
    (
        Trajectory {
            states,
            inputs: inputs.to_vec(),
        },
        sat,
    )
}

/// Jacobians of [`step`] with respect to state and input, evaluated at
/// `(x, u)`: `x_{tau+1} ~ A dx + B du` around the given point.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    /// True when the point sits on a clamp boundary and the closed forms do
    /// not apply; the values then come from central differences.
    pub by_differences: bool,
}

/// Margin (on the squared-chord argument) inside which the closed-form
/// derivative is considered unusable: the 1/sqrt factor blows up at the
/// boundary, so finite differences take over slightly before it.
const SINGULAR_MARGIN: f64 = 1e-9;

/// Linearizes [`step`] at `(x, u)`.
///
/// Away from the clamp boundaries the closed forms are used. With
/// `s = sqrt(b^2 - (tau*v*sin(delta))^2)`:
///
/// ```text
/// d f_r / d v     = tau*cos(delta) + tau^2*v*sin^2(delta) / s
/// d f_r / d delta = -tau*v*sin(delta) + tau^2*v^2*sin(delta)*cos(delta) / s
/// d theta' / d v     = tau*sin(delta) / s
/// d theta' / d delta = tau*v*cos(delta) / s
/// ```
pub fn linearize(x: &State, u: &Input, wheelbase: f64, tau: f64) -> StepJacobians {
    let (theta, v) = (x[2], x[3]);
    let delta = u[0];
    let (sd, cd) = (delta.sin(), delta.cos());
    let lateral = tau * v * sd;
    let arg = wheelbase * wheelbase - lateral * lateral;
    if arg <= SINGULAR_MARGIN {
        return StepJacobians {
            a: fd_state_jacobian(x, u, wheelbase, tau),
            b: fd_input_jacobian(x, u, wheelbase, tau),
            by_differences: true,
        };
    }
    let s = arg.sqrt();
    let (f_r, _) = chord(v, delta, wheelbase, tau);
    let fr_v = tau * cd + tau * tau * v * sd * sd / s;
    let fr_d = -tau * v * sd + tau * tau * v * v * sd * cd / s;
    let (st, ct) = (theta.sin(), theta.cos());
    #[rustfmt::skip]
    let a = Matrix4::new(
        1.0, 0.0, -f_r * st, ct * fr_v,
        0.0, 1.0,  f_r * ct, st * fr_v,
        0.0, 0.0,  1.0,      tau * sd / s,
        0.0, 0.0,  0.0,      1.0,
    );
    #[rustfmt::skip]
    let b = Matrix4x2::new(
        ct * fr_d,        0.0,
        st * fr_d,        0.0,
        tau * v * cd / s, 0.0,
        0.0,              tau,
    );
    StepJacobians {
        a,
        b,
        by_differences: false,
    }
}

const FD_STEP: f64 = 1e-6;

fn fd_state_jacobian(x: &State, u: &Input, wheelbase: f64, tau: f64) -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    for k in 0..4 {
        let mut hi = *x;
        let mut lo = *x;
        hi[k] += FD_STEP;
        lo[k] -= FD_STEP;
        let d = (step(&hi, u, wheelbase, tau).0 - step(&lo, u, wheelbase, tau).0) / (2.0 * FD_STEP);
        a.set_column(k, &d);
    }
    a
}

fn fd_input_jacobian(x: &State, u: &Input, wheelbase: f64, tau: f64) -> Matrix4x2<f64> {
    let mut b = Matrix4x2::zeros();
    for k in 0..2 {
        let mut hi = *u;
        let mut lo = *u;
        hi[k] += FD_STEP;
        lo[k] -= FD_STEP;
        let d = (step(x, &hi, wheelbase, tau).0 - step(x, &lo, wheelbase, tau).0) / (2.0 * FD_STEP);
        b.set_column(k, &d);
    }
    b
}
