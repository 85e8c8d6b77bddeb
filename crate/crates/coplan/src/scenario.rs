//! Scenario files and built-in scenario generators.
//!
//! A scenario JSON file carries everything [`ProblemSpec`] holds; omitted
//! fields fall back to the defaults below (urban-driving weights, the
//! "slow down rather than swerve hard" input box, a 10 s horizon at 100 ms).
//! Vehicle references are stored as explicit state lists, so a file loads
//! back into exactly the spec that was saved.
//!
//! The two generator families mirror common conflict layouts:
//!
//! * [`t_junction`] — two through vehicles on a main road plus one vehicle
//!   entering from a stem and turning left across both lanes;
//! * [`intersection`] — up to twelve vehicles at a four-way crossing, one
//!   straight / left / right vehicle per approach. Smaller counts are strict
//!   prefixes of larger ones, so scaling studies vary only the vehicle count.
//!
//! Both families are built so that *following the references verbatim* brings
//! at least one pair well inside the safety distance, while all initial
//! positions start safely separated.

use crate::model::{HyperParams, Input, ProblemSpec, State};
use nalgebra::{Vector2, Vector4};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("failed to write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("malformed scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("scenario is invalid:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("intersection scenarios support 2..=12 vehicles, got {0}")]
    BadVehicleCount(usize),
}

// ---------------------------------------------------------------- file format

fn default_horizon() -> usize {
    100
}
fn default_time_step() -> f64 {
    0.1
}
fn default_wheelbase() -> f64 {
    1.7
}
fn default_state_weights() -> [f64; 4] {
    [1.0, 1.0, 0.0, 0.0]
}
fn default_input_weights() -> [f64; 2] {
    [1.0, 1.0]
}
fn default_collision_weight() -> f64 {
    1.44
}
fn default_safe_distance() -> f64 {
    5.5
}
fn default_input_lower() -> [f64; 2] {
    [-0.6, -3.0]
}
fn default_input_upper() -> [f64; 2] {
    [0.6, 1.5]
}

#[derive(Debug, Serialize, Deserialize)]
struct VehicleFile {
    /// Starting state; defaults to the first reference state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<[f64; 4]>,
    /// One state per stage, horizon + 1 entries of [px, py, theta, v].
    reference: Vec<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(default = "default_horizon")]
    horizon: usize,
    #[serde(default = "default_time_step")]
    time_step: f64,
    #[serde(default = "default_wheelbase")]
    wheelbase: f64,
    #[serde(default = "default_state_weights")]
    state_weights: [f64; 4],
    #[serde(default = "default_input_weights")]
    input_weights: [f64; 2],
    #[serde(default = "default_collision_weight")]
    collision_weight: f64,
    #[serde(default = "default_safe_distance")]
    safe_distance: f64,
    #[serde(default = "default_input_lower")]
    input_lower: [f64; 2],
    #[serde(default = "default_input_upper")]
    input_upper: [f64; 2],
    #[serde(default)]
    solver: HyperParams,
    vehicles: Vec<VehicleFile>,
}

impl ScenarioFile {
    fn into_spec(self) -> Result<ProblemSpec, ScenarioError> {
        let spec = ProblemSpec {
            horizon: self.horizon,
            tau: self.time_step,
            wheelbase: self.wheelbase,
            q_diag: Vector4::from(self.state_weights),
            r_diag: Vector2::from(self.input_weights),
            beta: self.collision_weight,
            d_safe: self.safe_distance,
            input_lower: Input::from(self.input_lower),
            input_upper: Input::from(self.input_upper),
            initial_states: self
                .vehicles
                .iter()
                .map(|v| State::from(v.initial.unwrap_or_else(|| {
                    v.reference.first().copied().unwrap_or([0.0; 4])
                })))
                .collect(),
            references: self
                .vehicles
                .iter()
                .map(|v| v.reference.iter().map(|s| State::from(*s)).collect())
                .collect(),
            hyper: self.solver,
        };
        let violations = spec.validate();
        if violations.is_empty() {
            Ok(spec)
        } else {
            Err(ScenarioError::Invalid(violations))
        }
    }

    fn from_spec(spec: &ProblemSpec) -> Self {
        ScenarioFile {
            horizon: spec.horizon,
            time_step: spec.tau,
            wheelbase: spec.wheelbase,
            state_weights: spec.q_diag.into(),
            input_weights: spec.r_diag.into(),
            collision_weight: spec.beta,
            safe_distance: spec.d_safe,
            input_lower: spec.input_lower.into(),
            input_upper: spec.input_upper.into(),
            solver: spec.hyper.clone(),
            vehicles: spec
                .initial_states
                .iter()
                .zip(&spec.references)
                .map(|(x0, reference)| VehicleFile {
                    initial: Some((*x0).into()),
                    reference: reference.iter().map(|s| (*s).into()).collect(),
                })
                .collect(),
        }
    }
}

/// Parses scenario JSON and validates the result.
pub fn parse(json: &str) -> Result<ProblemSpec, ScenarioError> {
    serde_json::from_str::<ScenarioFile>(json)?.into_spec()
}

/// Serializes a spec as scenario JSON (references written out explicitly, so
/// `parse(to_json(spec)) == spec`).
pub fn to_json(spec: &ProblemSpec) -> String {
    serde_json::to_string_pretty(&ScenarioFile::from_spec(spec)).expect("plain data serializes")
}

pub fn load(path: &Path) -> Result<ProblemSpec, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Read { path: path.display().to_string(), source })?;
    parse(&text)
}

pub fn save(path: &Path, spec: &ProblemSpec) -> Result<(), ScenarioError> {
    std::fs::write(path, to_json(spec))
        .map_err(|source| ScenarioError::Write { path: path.display().to_string(), source })
}

// ---------------------------------------------------------------- generators

const LANE: f64 = 1.75;
const LEFT_TURN_RADIUS: f64 = 7.0;

/// Dense polyline for a circular arc. Positive sweep is counterclockwise.
fn arc_points(center: Vector2<f64>, radius: f64, from: f64, to: f64) -> Vec<Vector2<f64>> {
    let sweep = to - from;
    let steps = ((radius * sweep.abs()) / 0.02).ceil().max(2.0) as usize;
    (0..=steps)
        .map(|k| {
            let a = from + sweep * k as f64 / steps as f64;
            center + radius * Vector2::new(a.cos(), a.sin())
        })
        .collect()
}

/// Concatenates path pieces, dropping duplicated joints.
fn join(pieces: Vec<Vec<Vector2<f64>>>) -> Vec<Vector2<f64>> {
    let mut out: Vec<Vector2<f64>> = Vec::new();
    for piece in pieces {
        for p in piece {
            if out.last().map_or(true, |q| (p - q).norm() > 1e-12) {
                out.push(p);
            }
        }
    }
    out
}

/// Walks the polyline at constant speed, emitting `count` states spaced
/// `speed * time_step` apart in arc length. Heading follows the local
/// tangent and is unwrapped so it never jumps by 2π (the vehicle model treats
/// heading as an unbounded angle); if the polyline runs out, motion continues
/// along its last direction.
fn sample_at_speed(polyline: &[Vector2<f64>], speed: f64, time_step: f64, count: usize) -> Vec<State> {
    assert!(polyline.len() >= 2, "need a path to sample");
    let spacing = speed * time_step;
    let mut lengths = Vec::with_capacity(polyline.len());
    let mut acc = 0.0;
    lengths.push(0.0);
    for w in polyline.windows(2) {
        acc += (w[1] - w[0]).norm();
        lengths.push(acc);
    }
    let total = acc;
    let last_dir = {
        let d = polyline[polyline.len() - 1] - polyline[polyline.len() - 2];
        d / d.norm()
    };
    let mut out: Vec<State> = Vec::with_capacity(count);
    let mut seg = 0;
    for k in 0..count {
        let target = spacing * k as f64;
        let (pos, dir) = if target >= total {
            (polyline[polyline.len() - 1] + (target - total) * last_dir, last_dir)
        } else {
            while lengths[seg + 1] < target {
                seg += 1;
            }
            let d = polyline[seg + 1] - polyline[seg];
            let len = lengths[seg + 1] - lengths[seg];
            let frac = (target - lengths[seg]) / len;
            (polyline[seg] + frac * d, d / len)
        };
        let mut heading = dir.y.atan2(dir.x);
        if let Some(prev) = out.last() {
            let wraps = ((prev[2] - heading) / std::f64::consts::TAU).round();
            heading += std::f64::consts::TAU * wraps;
        }
        out.push(State::new(pos.x, pos.y, heading, speed));
    }
    out
}

fn rotate(points: Vec<Vector2<f64>>, quarter_turns: usize) -> Vec<Vector2<f64>> {
    let a = quarter_turns as f64 * std::f64::consts::FRAC_PI_2;
    let (s, c) = a.sin_cos();
    points
        .into_iter()
        .map(|p| Vector2::new(c * p.x - s * p.y, s * p.x + c * p.y))
        .collect()
}

/// Entry path from the west approach at distance `start` from the center,
/// for a crossing with incoming lanes at `±lane`: straight through, or
/// turning left (wide arc across the junction onto the northbound lane) or
/// right (corner arc onto the southbound lane).
fn west_entry(turn: Turn, start: f64, lane: f64, r_left: f64, r_right: f64) -> Vec<Vector2<f64>> {
    let entry = Vector2::new(-start, -lane);
    match turn {
        Turn::Straight => join(vec![vec![entry, Vector2::new(90.0, -lane)]]),
        Turn::Left => {
            let arc_start = Vector2::new(lane - r_left, -lane);
            let center = Vector2::new(lane - r_left, -lane + r_left);
            join(vec![
                vec![entry, arc_start],
                arc_points(center, r_left, -std::f64::consts::FRAC_PI_2, 0.0),
                vec![Vector2::new(lane, -lane + r_left), Vector2::new(lane, 90.0)],
            ])
        }
        Turn::Right => {
            let arc_start = Vector2::new(-lane - r_right, -lane);
            let center = Vector2::new(-lane - r_right, -lane - r_right);
            join(vec![
                vec![entry, arc_start],
                arc_points(center, r_right, std::f64::consts::FRAC_PI_2, 0.0),
                vec![Vector2::new(-lane, -lane - r_right), Vector2::new(-lane, -90.0)],
            ])
        }
    }
}

#[derive(Clone, Copy)]
enum Turn {
    Straight,
    Left,
    Right,
}

fn spec_from_paths(
    paths: Vec<(Vec<Vector2<f64>>, f64)>,
    horizon: usize,
    time_step: f64,
    hyper: HyperParams,
) -> ProblemSpec {
    let references: Vec<Vec<State>> = paths
        .iter()
        .map(|(path, speed)| sample_at_speed(path, *speed, time_step, horizon + 1))
        .collect();
    ProblemSpec {
        horizon,
        tau: time_step,
        wheelbase: default_wheelbase(),
        q_diag: Vector4::from(default_state_weights()),
        r_diag: Vector2::from(default_input_weights()),
        beta: default_collision_weight(),
        d_safe: default_safe_distance(),
        input_lower: Input::from(default_input_lower()),
        input_upper: Input::from(default_input_upper()),
        initial_states: references.iter().map(|r| r[0]).collect(),
        references,
        hyper,
    }
}

/// Three vehicles at a T junction: eastbound and westbound through traffic on
/// the main road, plus one vehicle entering from the southern stem and turning
/// left across the eastbound lane into the westbound one.
pub fn t_junction() -> ProblemSpec {
    let eastbound = vec![Vector2::new(-20.0, -LANE), Vector2::new(70.0, -LANE)];
    let westbound = vec![Vector2::new(24.0, LANE), Vector2::new(-70.0, LANE)];
    let stem_left = {
        let r = LEFT_TURN_RADIUS;
        // North along x = LANE, then a quarter turn to heading west, then out
        // along the westbound lane.
        let arc_start = Vector2::new(LANE, LANE - r);
        let center = Vector2::new(LANE - r, LANE - r);
        join(vec![
            vec![Vector2::new(LANE, -16.0), arc_start],
            arc_points(center, r, 0.0, std::f64::consts::FRAC_PI_2),
            vec![Vector2::new(LANE - r, LANE), Vector2::new(-70.0, LANE)],
        ])
    };
    spec_from_paths(
        vec![(eastbound, 8.0), (westbound, 8.0), (stem_left, 7.0)],
        default_horizon(),
        default_time_step(),
        HyperParams::default(),
    )
}

/// `n` vehicles (2 to 12) at a four-way intersection. Vehicles appear in a
/// fixed global order — four straights (one per approach), then four left
/// turners, then four right turners — and `intersection(k)` is always the
/// first `k` vehicles of `intersection(12)`, so runs at different counts are
/// directly comparable.
pub fn intersection(n: usize) -> Result<ProblemSpec, ScenarioError> {
    if !(2..=12).contains(&n) {
        return Err(ScenarioError::BadVehicleCount(n));
    }
    // The crossing roads carry their two directions 6 m apart, so traffic
    // that merely passes in opposite directions never enters the safety
    // radius; every conflict is a transient crossing or merge whose depth is
    // set by the start distances. Those are staggered so the junction sees a
    // stream of pairwise encounters instead of one symmetric pile-up: the
    // straights cross first (0.5 s apart at the shared corner points), each
    // right turner clears its corner and merges at least a safety gap behind
    // the through vehicle that owns the exit lane, and the left turners sweep
    // the middle one after another once the straights have cleared. Within a
    // shared approach lane the leader is never slower than its follower, so
    // nobody is overtaken even along the constant-speed start-up guess.
    let lane = 3.0;
    let (r_left, r_right) = (8.0, 4.0);
    let plans: [(Turn, f64, [f64; 4]); 3] = [
        (Turn::Straight, 8.0, [26.0, 28.0, 30.0, 32.0]),
        (Turn::Left, 7.0, [64.0, 56.0, 48.0, 40.0]),
        (Turn::Right, 7.0, [72.0, 64.0, 56.0, 48.0]),
    ];
    let mut paths = Vec::with_capacity(12);
    for (turn, speed, starts) in plans {
        for approach in 0..4 {
            let path = west_entry(turn, starts[approach], lane, r_left, r_right);
            paths.push((rotate(path, approach), speed));
        }
    }
    paths.truncate(n);
    // Twelve agents in one junction make the penalty part of the cost stiff
    // enough that every coarse step can overshoot at once, which would freeze
    // the plan; the deeper tail keeps a descent step available.
    let alpha_schedule = vec![
        1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625, 0.0,
    ];
    Ok(spec_from_paths(
        paths,
        default_horizon(),
        default_time_step(),
        HyperParams {
            sigma: 0.01,
            rho: 0.001,
            inner_iters: 3,
            alpha_schedule,
            ..HyperParams::default()
        },
    ))
}
