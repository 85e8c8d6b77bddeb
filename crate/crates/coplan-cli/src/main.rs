//! Command-line front end: load or generate a scenario, run one of the two
//! solvers, and write the result artifacts. `plan` handles a single run;
//! `sweep-beta` repeats the run over a list of collision weights and prints
//! the resulting trend as a table.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use coplan::{plan_centralized, plan_decentralized, report, scenario, PlanOptions, ProblemSpec};
use coplan::planner::PlanResult;

#[derive(Parser)]
#[command(name = "coplan", version, about = "Cooperative trajectory planner for connected vehicles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one scenario and write trajectories, metrics and charts.
    Plan(PlanArgs),
    /// Plan the same scenario under several collision weights β and print
    /// how clearance and iteration count respond.
    SweepBeta(SweepArgs),
}

#[derive(Args)]
struct Source {
    /// Scenario file (JSON). Mutually exclusive with --builtin.
    #[arg(long, conflicts_with = "builtin")]
    scenario: Option<PathBuf>,
    /// Built-in scenario: "t-junction" or "intersection:N" with 2 ≤ N ≤ 12
    /// (plain "intersection" means N = 12).
    #[arg(long)]
    builtin: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ProblemSpec> {
        match (&self.scenario, &self.builtin) {
            (Some(path), None) => scenario::load(path)
                .with_context(|| format!("loading scenario {}", path.display())),
            (None, Some(name)) => builtin(name),
            _ => bail!("pass exactly one of --scenario PATH or --builtin NAME"),
        }
    }
}

fn builtin(name: &str) -> Result<ProblemSpec> {
    match name {
        "t-junction" => Ok(scenario::t_junction()),
        "intersection" => Ok(scenario::intersection(12)?),
        _ => {
            if let Some(rest) = name.strip_prefix("intersection:") {
                let n: usize = rest
                    .parse()
                    .with_context(|| format!("vehicle count {rest:?} is not a number"))?;
                Ok(scenario::intersection(n)?)
            } else {
                bail!("unknown builtin {name:?}; expected t-junction or intersection:N")
            }
        }
    }
}

/// Hyperparameter overrides applied on top of whatever the scenario carries.
#[derive(Args)]
struct Overrides {
    /// ADMM consensus penalty σ.
    #[arg(long)]
    sigma: Option<f64>,
    /// ADMM coupling penalty ρ.
    #[arg(long)]
    rho: Option<f64>,
    /// ADMM iterations per outer iteration.
    #[arg(long)]
    inner_iters: Option<usize>,
}

impl Overrides {
    fn apply(&self, spec: &mut ProblemSpec) {
        if let Some(sigma) = self.sigma {
            spec.hyper.sigma = sigma;
        }
        if let Some(rho) = self.rho {
            spec.hyper.rho = rho;
        }
        if let Some(inner) = self.inner_iters {
            spec.hyper.inner_iters = inner;
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Solver {
    Decentralized,
    Centralized,
}

impl Solver {
    fn name(self) -> &'static str {
        match self {
            Solver::Decentralized => "decentralized",
            Solver::Centralized => "centralized",
        }
    }

    fn run(self, spec: &ProblemSpec, threads: usize) -> Result<PlanResult> {
        let result = match self {
            Solver::Decentralized => {
                let opts = if threads == 0 {
                    PlanOptions::default()
                } else {
                    PlanOptions { threads }
                };
                plan_decentralized(spec, &opts)?
            }
            Solver::Centralized => plan_centralized(spec)?,
        };
        Ok(result)
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    /// Collision penalty weight β.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum, default_value_t = Solver::Decentralized)]
    solver: Solver,
    /// Worker threads for the per-agent phases; 0 picks the core count, 1
    /// forces the sequential lane. The result is identical either way.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Output directory for the artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    #[command(flatten)]
    overrides: Overrides,
    /// Collision weights to sweep, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.44,1.96,2.56")]
    betas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Solver::Decentralized)]
    solver: Solver,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// When set, per-β artifacts are written to OUT/beta-<value>/.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Plan(args) => plan(args),
        Command::SweepBeta(args) => sweep(args),
    }
}

fn plan(args: PlanArgs) -> Result<()> {
    let mut spec = args.source.load()?;
    args.overrides.apply(&mut spec);
    if let Some(beta) = args.beta {
        spec.beta = beta;
    }
    let started = Instant::now();
    let result = args.solver.run(&spec, args.threads)?;
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "{} solver, {} vehicles: {} outer iterations ({}), cost {:.2}, min distance {:.3} m, {:.2} s",
        args.solver.name(),
        spec.n_agents(),
        result.outer_iters,
        if result.converged { "converged" } else { "iteration cap" },
        result.cost_history.last().unwrap(),
        result.min_distance,
        elapsed,
    );
    let written = report::emit(&spec, &result, args.solver.name(), &args.out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    if args.betas.is_empty() {
        bail!("--betas needs at least one value");
    }
    let base = args.source.load()?;
    let mut rows = Vec::new();
    println!("{:>8}  {:>12}  {:>7}  {:>12}  {:>9}", "beta", "min dist [m]", "outers", "final cost", "converged");
    for &beta in &args.betas {
        let mut spec = base.clone();
        args.overrides.apply(&mut spec);
        spec.beta = beta;
        let result = args.solver.run(&spec, args.threads)?;
        println!(
            "{beta:>8.2}  {:>12.4}  {:>7}  {:>12.2}  {:>9}",
            result.min_distance,
            result.outer_iters,
            result.cost_history.last().unwrap(),
            result.converged,
        );
        if let Some(outdir) = &args.out {
            let sub = outdir.join(format!("beta-{beta}"));
            report::emit(&spec, &result, args.solver.name(), &sub)?;
        }
        rows.push((result.min_distance, result.outer_iters));
    }
    let dist_trend = rows.windows(2).all(|w| w[1].0 >= w[0].0);
    let iter_trend = rows.windows(2).all(|w| w[1].1 >= w[0].1);
    println!(
        "min distance {} with beta; iteration count {} with beta",
        if dist_trend { "non-decreasing" } else { "NOT monotone" },
        if iter_trend { "non-decreasing" } else { "NOT monotone" },
    );
    Ok(())
}
