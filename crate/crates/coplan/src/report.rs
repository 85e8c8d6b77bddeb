//! Run artifacts: a trajectories CSV, a metrics document, and SVG charts.
//!
//! Everything in this module is presentation. Nothing here feeds back into
//! planning, so the formats are chosen for human inspection: plain CSV with
//! one state row per vehicle and stage, pretty-printed JSON that parses back
//! into [`MetricsReport`] without loss, and self-contained SVG (no scripts,
//! no external assets) for the four standard charts — vehicle paths, inputs
//! over time, closest-pair distance over time, and consensus variance per
//! outer iteration on a log axis.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ProblemSpec, Trajectory};
use crate::planner::PlanResult;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

/// Flat, self-describing record of one planning run: the knobs that produced
/// it, what the run did, and the full planned motion. Field names are the
/// JSON schema; [`MetricsReport::parse`] inverts [`MetricsReport::to_json`]
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Which solver produced the result: "decentralized" or "centralized".
    pub solver: String,
    pub vehicles: usize,
    pub horizon: usize,
    pub time_step: f64,
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub inner_iters: usize,
    pub safe_distance: f64,
    pub outer_iters: usize,
    pub converged: bool,
    pub final_cost: f64,
    pub min_distance: f64,
    pub cost_history: Vec<f64>,
    pub consensus_variance: Vec<f64>,
    pub alpha_history: Vec<f64>,
    pub chord_clamps: usize,
    pub heading_clamps: usize,
    pub reg_events: usize,
    pub fd_linearizations: usize,
    pub lqr_seconds: Vec<f64>,
    /// Wall-clock seconds per phase kind, summed over iterations.
    pub phase_seconds: BTreeMap<String, f64>,
    /// Message traffic per exchange phase (empty for the centralized solver).
    pub exchange: BTreeMap<String, ExchangeRecord>,
    pub trajectories: Vec<TrajectoryRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRecord {
    pub rounds: usize,
    pub messages: usize,
    pub scalars: usize,
    pub barrier_wait: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub states: Vec<[f64; 4]>,
    pub inputs: Vec<[f64; 2]>,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        TrajectoryRecord {
            states: t.states.iter().map(|x| [x[0], x[1], x[2], x[3]]).collect(),
            inputs: t.inputs.iter().map(|u| [u[0], u[1]]).collect(),
        }
    }
}

impl MetricsReport {
    pub fn new(spec: &ProblemSpec, result: &PlanResult, solver: &str) -> Self {
        let phase_seconds = BTreeMap::from([
            ("modeling".to_string(), result.timings.modeling),
            ("inner_sweeps".to_string(), result.timings.inner_sweeps),
            ("line_search".to_string(), result.timings.line_search),
        ]);
        let exchange = result
            .exchange
            .iter()
            .map(|(phase, s)| {
                let record = ExchangeRecord {
                    rounds: s.rounds,
                    messages: s.messages,
                    scalars: s.scalars,
                    barrier_wait: s.barrier_wait,
                };
                (format!("{phase:?}").to_lowercase(), record)
            })
            .collect();
        MetricsReport {
            solver: solver.to_string(),
            vehicles: spec.n_agents(),
            horizon: spec.horizon,
            time_step: spec.tau,
            sigma: spec.hyper.sigma,
            rho: spec.hyper.rho,
            beta: spec.beta,
            inner_iters: spec.hyper.inner_iters,
            safe_distance: spec.d_safe,
            outer_iters: result.outer_iters,
            converged: result.converged,
            final_cost: *result.cost_history.last().expect("cost history"),
            min_distance: result.min_distance,
            cost_history: result.cost_history.clone(),
            consensus_variance: result.consensus_variance.clone(),
            alpha_history: result.alpha_history.clone(),
            chord_clamps: result.saturation.chord_clamps,
            heading_clamps: result.saturation.heading_clamps,
            reg_events: result.reg_events,
            fd_linearizations: result.fd_linearizations,
            lqr_seconds: result.lqr_seconds.clone(),
            phase_seconds,
            exchange,
            trajectories: result.trajectories.iter().map(TrajectoryRecord::from).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One row per vehicle and stage: `agent,tau,px,py,theta,v,delta,a`. The row
/// at `tau = horizon` has no input, so its last two fields are empty.
pub fn trajectories_csv(result: &PlanResult) -> String {
    let mut out = String::from("agent,tau,px,py,theta,v,delta,a\n");
    for (agent, traj) in result.trajectories.iter().enumerate() {
        for (tau, x) in traj.states.iter().enumerate() {
            let _ = write!(out, "{agent},{tau},{},{},{},{},", x[0], x[1], x[2], x[3]);
            if let Some(u) = traj.inputs.get(tau) {
                let _ = writeln!(out, "{},{}", u[0], u[1]);
            } else {
                out.push_str(",\n");
            }
        }
    }
    out
}

/// Writes every artifact for one run into `outdir` (created if missing) and
/// returns the paths written. Always: `trajectories.csv`, `metrics.json`,
/// `trajectories.svg`, `inputs.svg`. With two or more vehicles also
/// `distance.svg`, and when the run recorded consensus variance (the
/// decentralized solver with N ≥ 2) also `variance.svg`.
pub fn emit(
    spec: &ProblemSpec,
    result: &PlanResult,
    solver: &str,
    outdir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(outdir).map_err(|source| ReportError::Write {
        path: outdir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let put = |name: &str, content: String| -> Result<PathBuf, ReportError> {
        let path = outdir.join(name);
        fs::write(&path, content).map_err(|source| ReportError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    };
    written.push(put("trajectories.csv", trajectories_csv(result))?);
    written.push(put("metrics.json", MetricsReport::new(spec, result, solver).to_json())?);
    written.push(put("trajectories.svg", paths_chart(spec, result))?);
    written.push(put("inputs.svg", inputs_chart(spec, result))?);
    if spec.n_agents() >= 2 {
        written.push(put("distance.svg", distance_chart(spec, result))?);
    }
    if !result.consensus_variance.is_empty() {
        written.push(put("variance.svg", variance_chart(result))?);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// SVG charts. Hand-rolled on purpose: four fixed chart shapes do not justify
// a plotting dependency, and emitting the markup directly keeps the files
// free of scripts and external references.

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 48.0;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#4b0082", "#a0522d",
];

fn color(agent: usize) -> &'static str {
    PALETTE[agent % PALETTE.len()]
}

/// One cartesian panel: a framed plot area with ticks, labels and a title,
/// accumulating shapes in data coordinates. `log_y` only changes the tick
/// labels — callers pass y values already in log10.
struct Panel {
    body: String,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Panel {
    fn new(title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64), log_y: bool) -> Panel {
        let pad = |(lo, hi): (f64, f64)| {
            if (hi - lo).abs() < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = pad(x);
        let (y0, y1) = pad(y);
        let mut p = Panel { body: String::new(), x0, x1, y0, y1 };
        let _ = write!(
            p.body,
            "<rect x='0' y='0' width='{CHART_W}' height='{CHART_H}' fill='white'/>\
             <rect x='{MARGIN_L}' y='{MARGIN_T}' width='{}' height='{}' fill='none' stroke='#444'/>",
            CHART_W - MARGIN_L - MARGIN_R,
            CHART_H - MARGIN_T - MARGIN_B,
        );
        let _ = write!(
            p.body,
            "<text x='{}' y='20' text-anchor='middle' font-size='14' fill='#222'>{title}</text>",
            CHART_W / 2.0
        );
        let _ = write!(
            p.body,
            "<text x='{}' y='{}' text-anchor='middle' fill='#222'>{xlabel}</text>",
            CHART_W / 2.0,
            CHART_H - 10.0
        );
        let _ = write!(
            p.body,
            "<text x='16' y='{}' text-anchor='middle' fill='#222' transform='rotate(-90 16 {})'>{ylabel}</text>",
            (MARGIN_T + CHART_H - MARGIN_B) / 2.0,
            (MARGIN_T + CHART_H - MARGIN_B) / 2.0
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let vx = p.x0 + f * (p.x1 - p.x0);
            let cx = p.px(vx);
            let _ = write!(
                p.body,
                "<line x1='{cx}' y1='{MARGIN_T}' x2='{cx}' y2='{}' stroke='#ddd'/>\
                 <text x='{cx}' y='{}' text-anchor='middle' fill='#444'>{}</text>",
                CHART_H - MARGIN_B,
                CHART_H - MARGIN_B + 16.0,
                fmt_tick(vx),
            );
        }
        if log_y {
            let lo = p.y0.ceil() as i64;
            let hi = p.y1.floor() as i64;
            for k in lo..=hi {
                let cy = p.py(k as f64);
                let _ = write!(
                    p.body,
                    "<line x1='{MARGIN_L}' y1='{cy}' x2='{}' y2='{cy}' stroke='#ddd'/>\
                     <text x='{}' y='{}' text-anchor='end' fill='#444'>1e{k}</text>",
                    CHART_W - MARGIN_R,
                    MARGIN_L - 6.0,
                    cy + 4.0,
                );
            }
        } else {
            for k in 0..=4 {
                let f = k as f64 / 4.0;
                let vy = p.y0 + f * (p.y1 - p.y0);
                let cy = p.py(vy);
                let _ = write!(
                    p.body,
                    "<line x1='{MARGIN_L}' y1='{cy}' x2='{}' y2='{cy}' stroke='#ddd'/>\
                     <text x='{}' y='{}' text-anchor='end' fill='#444'>{}</text>",
                    CHART_W - MARGIN_R,
                    MARGIN_L - 6.0,
                    cy + 4.0,
                    fmt_tick(vy),
                );
            }
        }
        p
    }

    /// Widens whichever data range is too narrow for the plot area's pixel
    /// aspect, so a meter is the same length on both axes.
    fn equalize(&mut self) {
        let pw = CHART_W - MARGIN_L - MARGIN_R;
        let ph = CHART_H - MARGIN_T - MARGIN_B;
        let sx = (self.x1 - self.x0) / pw;
        let sy = (self.y1 - self.y0) / ph;
        if sx > sy {
            let grow = (sx * ph - (self.y1 - self.y0)) / 2.0;
            self.y0 -= grow;
            self.y1 += grow;
        } else {
            let grow = (sy * pw - (self.x1 - self.x0)) / 2.0;
            self.x0 -= grow;
            self.x1 += grow;
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (CHART_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        CHART_H - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (CHART_H - MARGIN_T - MARGIN_B)
    }

    fn polyline(&mut self, pts: impl Iterator<Item = (f64, f64)>, stroke: &str, dash: bool) {
        let mut attr = String::new();
        for (x, y) in pts {
            let _ = write!(attr, "{:.2},{:.2} ", self.px(x), self.py(y));
        }
        let dash = if dash { " stroke-dasharray='6 4'" } else { "" };
        let _ = write!(
            self.body,
            "<polyline points='{}' fill='none' stroke='{stroke}' stroke-width='1.5'{dash}/>",
            attr.trim_end(),
        );
    }

    fn hline(&mut self, y: f64, stroke: &str) {
        let cy = self.py(y);
        let _ = write!(
            self.body,
            "<line x1='{MARGIN_L}' y1='{cy}' x2='{}' y2='{cy}' stroke='{stroke}' stroke-dasharray='6 4'/>",
            CHART_W - MARGIN_R,
        );
    }

    fn dot(&mut self, x: f64, y: f64, fill: &str) {
        let _ = write!(
            self.body,
            "<circle cx='{:.2}' cy='{:.2}' r='3' fill='{fill}'/>",
            self.px(x),
            self.py(y)
        );
    }
}

fn svg_document(panels: &[Panel]) -> String {
    let height = CHART_H * panels.len() as f64;
    let mut out = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' viewBox='0 0 {CHART_W} {height}' \
         font-family='sans-serif' font-size='11'>\n"
    );
    for (i, p) in panels.iter().enumerate() {
        if i == 0 {
            out.push_str(&p.body);
        } else {
            let _ = write!(out, "<g transform='translate(0 {})'>{}</g>", CHART_H * i as f64, p.body);
        }
        out.push('\n');
    }
    out.push_str("</svg>\n");
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v.abs() >= 10000.0 || v.abs() < 0.01 {
        return format!("{v:.1e}");
    }
    let mut s = format!("{v:.2}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

fn pad_range((lo, hi): (f64, f64), frac: f64) -> (f64, f64) {
    let pad = ((hi - lo) * frac).max(1e-9);
    (lo - pad, hi + pad)
}

/// Planned paths over the references, meters on both axes at equal scale.
/// References are dashed gray, planned paths solid, start positions dotted.
fn paths_chart(spec: &ProblemSpec, result: &PlanResult) -> String {
    let xs = result
        .trajectories
        .iter()
        .flat_map(|t| t.states.iter())
        .chain(spec.references.iter().flatten());
    let (xr, yr) = (
        bounds(xs.clone().map(|s| s[0])),
        bounds(xs.map(|s| s[1])),
    );
    let mut p = Panel::new(
        "vehicle paths",
        "x [m]",
        "y [m]",
        pad_range(xr, 0.04),
        pad_range(yr, 0.04),
        false,
    );
    p.equalize();
    for reference in &spec.references {
        p.polyline(reference.iter().map(|s| (s[0], s[1])), "#bbbbbb", true);
    }
    for (i, traj) in result.trajectories.iter().enumerate() {
        p.polyline(traj.states.iter().map(|s| (s[0], s[1])), color(i), false);
        let s0 = &traj.states[0];
        p.dot(s0[0], s0[1], color(i));
    }
    svg_document(&[p])
}

/// Steering and acceleration over time, one panel each, with the input box
/// bounds dashed.
fn inputs_chart(spec: &ProblemSpec, result: &PlanResult) -> String {
    let titles = ["steering angle", "acceleration"];
    let ylabels = ["delta [rad]", "a [m/s^2]"];
    let mut panels = Vec::new();
    for comp in 0..2 {
        let t_end = spec.horizon as f64 * spec.tau;
        let yr = (spec.input_lower[comp], spec.input_upper[comp]);
        let mut p = Panel::new(
            titles[comp],
            "t [s]",
            ylabels[comp],
            (0.0, t_end),
            pad_range(yr, 0.08),
            false,
        );
        p.hline(spec.input_lower[comp], "#999999");
        p.hline(spec.input_upper[comp], "#999999");
        for (i, traj) in result.trajectories.iter().enumerate() {
            p.polyline(
                traj.inputs.iter().enumerate().map(|(tau, u)| (tau as f64 * spec.tau, u[comp])),
                color(i),
                false,
            );
        }
        panels.push(p);
    }
    svg_document(&panels)
}

fn per_stage_min(trajs: &[Trajectory]) -> Vec<f64> {
    let stages = trajs.iter().map(|t| t.states.len()).min().unwrap_or(0);
    (0..stages)
        .map(|tau| {
            let mut best = f64::INFINITY;
            for i in 0..trajs.len() {
                for j in i + 1..trajs.len() {
                    let a = &trajs[i].states[tau];
                    let b = &trajs[j].states[tau];
                    best = best.min(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
                }
            }
            best
        })
        .collect()
}

/// Closest center distance over any vehicle pair at each stage, with the
/// safety radius dashed.
fn distance_chart(spec: &ProblemSpec, result: &PlanResult) -> String {
    let mins = per_stage_min(&result.trajectories);
    let yr = bounds(mins.iter().copied().chain([spec.d_safe, 0.0]));
    let mut p = Panel::new(
        "closest pair distance",
        "t [s]",
        "min distance [m]",
        (0.0, spec.horizon as f64 * spec.tau),
        pad_range(yr, 0.05),
        false,
    );
    p.hline(spec.d_safe, "#d62728");
    p.polyline(
        mins.iter().enumerate().map(|(tau, d)| (tau as f64 * spec.tau, *d)),
        "#1f77b4",
        false,
    );
    svg_document(&[p])
}

/// Consensus variance per outer iteration on a log10 axis. Values are floored
/// at 1e-16 so an exact zero still plots.
fn variance_chart(result: &PlanResult) -> String {
    let logs: Vec<f64> = result
        .consensus_variance
        .iter()
        .map(|v| v.max(1e-16).log10())
        .collect();
    let mut p = Panel::new(
        "consensus variance",
        "outer iteration",
        "variance (log scale)",
        (0.0, (logs.len() - 1).max(1) as f64),
        pad_range(bounds(logs.iter().copied()), 0.05),
        true,
    );
    p.polyline(logs.iter().enumerate().map(|(i, v)| (i as f64, *v)), "#2ca02c", false);
    svg_document(&[p])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Saturation;
    use crate::model::{Input, State};
    use crate::planner::PhaseTimings;
    use crate::scenario;

    fn fake_result(n: usize, t: usize) -> PlanResult {
        let trajectories = (0..n)
            .map(|i| Trajectory {
                states: (0..=t)
                    .map(|tau| State::new(tau as f64 * 0.8, 3.0 * i as f64, 0.0, 8.0))
                    .collect(),
                inputs: (0..t).map(|_| Input::new(0.01, -0.2)).collect(),
            })
            .collect();
        PlanResult {
            trajectories,
            cost_history: vec![40.0, 12.0, 11.5],
            consensus_variance: vec![1.0, 1e-2, 1e-4],
            alpha_history: vec![1.0, 0.5],
            outer_iters: 2,
            converged: true,
            min_distance: 3.0,
            saturation: Saturation::default(),
            reg_events: 1,
            fd_linearizations: 0,
            lqr_seconds: vec![0.0; n],
            timings: PhaseTimings::default(),
            exchange: Default::default(),
        }
    }

    #[test]
    fn csv_has_one_row_per_vehicle_and_stage() {
        let csv = trajectories_csv(&fake_result(3, 100));
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "agent,tau,px,py,theta,v,delta,a");
        assert_eq!(lines.len(), 1 + 3 * 101);
        // The stage-T row has no input, so it ends with two empty fields.
        assert!(lines.last().unwrap().ends_with(",,"));
        assert!(lines[1].starts_with("0,0,"));
    }

    #[test]
    fn metrics_echo_the_run_parameters_and_round_trip() {
        let spec = scenario::t_junction();
        let result = fake_result(3, spec.horizon);
        let report = MetricsReport::new(&spec, &result, "decentralized");
        assert_eq!(report.sigma, spec.hyper.sigma);
        assert_eq!(report.rho, spec.hyper.rho);
        assert_eq!(report.beta, spec.beta);
        assert_eq!(report.solver, "decentralized");
        assert_eq!(report.trajectories.len(), 3);
        let back = MetricsReport::parse(&report.to_json()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn emit_writes_every_artifact() {
        let spec = scenario::t_junction();
        let result = fake_result(3, spec.horizon);
        let dir = std::env::temp_dir().join(format!("report-emit-test-{}", std::process::id()));
        let written = emit(&spec, &result, "decentralized", &dir).unwrap();
        let names: Vec<String> = written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(
            names,
            [
                "trajectories.csv",
                "metrics.json",
                "trajectories.svg",
                "inputs.svg",
                "distance.svg",
                "variance.svg"
            ]
        );
        for path in &written {
            assert!(path.is_file(), "{path:?} missing");
        }
        let variance = fs::read_to_string(dir.join("variance.svg")).unwrap();
        // Decade labels prove the axis is logarithmic.
        assert!(variance.contains(">1e-2<") && variance.contains(">1e-4<"));
        let distance = fs::read_to_string(dir.join("distance.svg")).unwrap();
        assert!(distance.contains("closest pair distance"));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn variance_chart_survives_exact_zeros() {
        let mut result = fake_result(2, 10);
        result.consensus_variance = vec![1.0, 0.0];
        let svg = variance_chart(&result);
        assert!(svg.contains("polyline"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
