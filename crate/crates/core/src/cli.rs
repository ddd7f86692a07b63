//! Command-line front end.
//!
//! Every subcommand writes a [`RunRecord`] as JSON. Exit codes: 0 when every
//! solve converged, 2 when at least one did not, 1 on invalid input.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostMatrix;
use crate::entropy::EntropyKind;
use crate::error::{Result, UotError};
use crate::identities::{random_pair, verify_identities, IdentityReport};
use crate::lifting::{
    default_balanced_eps_grids, default_extended_grids, solve_lifted_balanced, solve_lifted_balanced_eps,
    solve_second_order_lift, solve_x_extended, ExtendedConstraint, LiftStatus,
};
use crate::lp::{transport_lp, LpStatus};
use crate::measures::{DiscreteMeasure, Plan, PlanFile};
use crate::numeric::extended;
use crate::solver_x::{default_reference, solve_x_eps, SolveReport, SolverConfig, Stabilization, XProblem};
use crate::solver_y::{solve_y_eps, solve_y_unreg, RadialGrid, DEFAULT_RADIAL_NODES, DEFAULT_SMIN_FRAC};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "uotlab", version, about = "Entropy-regularised unbalanced optimal transport")]
pub struct Cli {
    /// Worker threads for parallel kernels and sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Report zero wall-clock times so that reports are reproducible byte for byte.
    #[arg(long, global = true)]
    pub no_timings: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "subcommand")]
pub enum Command {
    /// Solve the original-space regularised problem.
    SolveX(SolveXArgs),
    /// Solve the extended-space regularised problem.
    SolveY(SolveYArgs),
    /// Solve along a list of regularisation strengths.
    SweepEps(SweepArgs),
    /// Compare formulations on one instance.
    Compare(CompareArgs),
    /// Check a lifted formulation against its baseline solver.
    LiftCheck(LiftArgs),
    /// Check the value identities between entropic transport conventions.
    Identities(IdentitiesArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct InstanceArgs {
    #[arg(long)]
    pub mu0: PathBuf,
    #[arg(long)]
    pub mu1: PathBuf,
    /// `sqeuclidean`, `hk`, or `file:<path>`.
    #[arg(long, default_value = "sqeuclidean")]
    pub cost: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilizationArg {
    LogDomain,
    Scaling,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolveXArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    /// Reference plan file; defaults to the normalised product of the marginals.
    #[arg(long)]
    pub nu: Option<PathBuf>,
    #[arg(long, default_value = "kl")]
    pub entropy: EntropyKind,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value = "log-domain")]
    pub stabilization: StabilizationArg,
    /// Include the optimal plan in the report.
    #[arg(long)]
    pub emit_plan: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GridArgs {
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub p: f64,
    /// Positive radial nodes per side (the node 0 is always added).
    #[arg(long, default_value_t = DEFAULT_RADIAL_NODES)]
    pub radial_nodes: usize,
    #[arg(long, default_value_t = DEFAULT_SMIN_FRAC)]
    pub smin_frac: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SolveYArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    X,
    Y,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, value_enum, default_value = "y")]
    pub formulation: Formulation,
    /// Comma-separated list, e.g. `1,0.5,0.2,0.1`.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub eps_list: Vec<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Convergence table (formulation, eps, value, gap, iterations, seconds).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Positive radial nodes per side for the lifted linear programs.
    #[arg(long, default_value_t = 256)]
    pub lift_nodes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftKind {
    Balanced,
    BalancedEps,
    XExtended,
    SecondOrder,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct LiftArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub instance: InstanceArgs,
    #[arg(long, value_enum)]
    pub which: LiftKind,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub p: f64,
    #[arg(long, default_value_t = 256)]
    pub lift_nodes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesArgs {
    /// Cells per axis.
    #[arg(long)]
    pub grid: usize,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// One labelled solve in a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveEntry {
    pub label: String,
    #[serde(with = "extended")]
    pub eps: f64,
    pub report: SolveReport,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub name: String,
    #[serde(with = "extended")]
    pub value: f64,
}

/// Machine-readable result of one CLI run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: String,
    pub threads: Option<usize>,
    pub config: Command,
    pub solves: Vec<SolveEntry>,
    pub residuals: Vec<Residual>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentityReport>,
    pub seconds: f64,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("records serialise") + "\n"
    }

    pub fn read(path: &Path) -> Result<Self> {
        crate::measures::read_json_file(path)
    }

    pub fn converged(&self) -> bool {
        self.solves.iter().all(|s| s.report.converged) && self.identities.as_ref().is_none_or(|r| r.converged)
    }
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub formulation: String,
    pub eps: f64,
    pub value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub seconds: f64,
}

/// Writes a sweep as CSV with columns `formulation,eps,value,gap,iterations,seconds`.
pub fn emit_convergence_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    if rows.len() < 2 {
        return Err(UotError::Input(
            "a convergence table needs at least two eps values".into(),
        ));
    }
    let io = |e: csv::Error| UotError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|source| UotError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Sorted (descending), deduplicated list of regularisation strengths.
pub fn normalise_eps_list(list: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = list.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(UotError::Input(format!("eps values must be > 0, got {bad}")));
    }
    let mut v = list.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let before = v.len();
    v.dedup();
    if v.len() < before {
        warn!("dropped {} duplicate eps value(s)", before - v.len());
    }
    if v.len() < 2 {
        return Err(UotError::Input("a sweep needs at least two distinct eps values".into()));
    }
    Ok(v)
}

struct Instance {
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
    cost: CostMatrix,
}

fn load_instance(args: &InstanceArgs) -> Result<Instance> {
    let mu0 = DiscreteMeasure::read_json(&args.mu0)?;
    let mu1 = DiscreteMeasure::read_json(&args.mu1)?;
    let cost = match args.cost.as_str() {
        "sqeuclidean" => CostMatrix::squared_euclidean(mu0.ground(), mu1.ground()),
        "hk" => CostMatrix::hellinger_kantorovich(mu0.ground(), mu1.ground()),
        other => match other.strip_prefix("file:") {
            Some(path) => {
                let c = CostMatrix::read_json(Path::new(path))?;
                c.check_shape(mu0.len(), mu1.len())?;
                c
            }
            None => {
                return Err(UotError::Input(format!(
                    "unknown cost {other:?}, expected sqeuclidean, hk or file:<path>"
                )))
            }
        },
    };
    if mu0.ground().dim() != mu1.ground().dim() {
        return Err(UotError::Input("mu0 and mu1 points have different dimensions".into()));
    }
    Ok(Instance { mu0, mu1, cost })
}

struct Clock {
    enabled: bool,
    start: Instant,
}

impl Clock {
    fn start(enabled: bool) -> Self {
        Clock {
            enabled,
            start: Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

fn entry(label: &str, eps: f64, report: SolveReport, clock: &Clock) -> SolveEntry {
    SolveEntry {
        label: label.into(),
        eps,
        report,
        seconds: clock.seconds(),
        plan: None,
    }
}

fn lift_report(value: f64, optimal: bool, iterations: usize) -> SolveReport {
    SolveReport {
        primal: value,
        dual: f64::NAN,
        gap: f64::NAN,
        iterations,
        marginal_residuals: vec![],
        converged: optimal,
    }
}

fn y_grids(inst: &Instance, g: &GridArgs) -> Result<RadialGrid> {
    RadialGrid::for_instance(&inst.mu0, &inst.mu1, g.p, g.radial_nodes, g.smin_frac)
}

fn solve_x(a: &SolveXArgs, timings: bool) -> Result<Vec<SolveEntry>> {
    let inst = load_instance(&a.instance)?;
    let nu = match &a.nu {
        Some(path) => Plan::read_json(path, inst.mu0.ground().clone(), inst.mu1.ground().clone())?,
        None => default_reference(&inst.mu0, &inst.mu1),
    };
    let prob = XProblem::new(inst.mu0, inst.mu1, inst.cost, nu)?;
    let config = SolverConfig::new(a.eps)
        .tolerance(a.tol)
        .max_iters(a.max_iters)
        .stabilization(match a.stabilization {
            StabilizationArg::LogDomain => Stabilization::LogDomain,
            StabilizationArg::Scaling => Stabilization::Scaling,
        });
    let clock = Clock::start(timings);
    let (gamma, _, report) = solve_x_eps(&prob, a.entropy, &config)?;
    info!(
        "solve-x: primal {} after {} iterations",
        report.primal, report.iterations
    );
    let mut e = entry("solve_x_eps", a.eps, report, &clock);
    if a.emit_plan {
        e.plan = Some(gamma.to_file());
    }
    Ok(vec![e])
}

fn solve_y(a: &SolveYArgs, timings: bool) -> Result<Vec<SolveEntry>> {
    let inst = load_instance(&a.instance)?;
    let g = y_grids(&inst, &a.grid)?;
    let config = SolverConfig::new(a.eps).tolerance(a.tol).max_iters(a.max_iters);
    let clock = Clock::start(timings);
    let (_, report) = solve_y_eps(&inst.mu0, &inst.mu1, &inst.cost, a.grid.p, (&g, &g), None, &config)?;
    Ok(vec![entry("solve_y_eps", a.eps, report, &clock)])
}

fn sweep(a: &SweepArgs, timings: bool) -> Result<Vec<SolveEntry>> {
    let eps_list = normalise_eps_list(&a.eps_list)?;
    let inst = load_instance(&a.instance)?;
    let solve_one = |eps: f64| -> Result<SolveEntry> {
        let config = SolverConfig::new(eps).tolerance(a.tol).max_iters(a.max_iters);
        let clock = Clock::start(timings);
        match a.formulation {
            Formulation::X => {
                let prob = XProblem::with_default_reference(inst.mu0.clone(), inst.mu1.clone(), inst.cost.clone())?;
                let (_, _, r) = solve_x_eps(&prob, EntropyKind::Kl, &config)?;
                Ok(entry("solve_x_eps", eps, r, &clock))
            }
            Formulation::Y => {
                let g = y_grids(&inst, &a.grid)?;
                let (_, r) = solve_y_eps(&inst.mu0, &inst.mu1, &inst.cost, a.grid.p, (&g, &g), None, &config)?;
                Ok(entry("solve_y_eps", eps, r, &clock))
            }
        }
    };
    let entries: Vec<SolveEntry> = eps_list.par_iter().map(|&e| solve_one(e)).collect::<Result<_>>()?;
    if let Some(path) = &a.csv {
        let rows: Vec<SweepRow> = entries
            .iter()
            .map(|e| SweepRow {
                formulation: match a.formulation {
                    Formulation::X => "x".into(),
                    Formulation::Y => "y".into(),
                },
                eps: e.eps,
                value: e.report.primal,
                gap: e.report.gap,
                iterations: e.report.iterations,
                seconds: e.seconds,
            })
            .collect();
        emit_convergence_csv(&rows, path)?;
    }
    Ok(entries)
}

fn pairwise(entries: &[SolveEntry]) -> Vec<Residual> {
    let mut out = Vec::new();
    for (k, a) in entries.iter().enumerate() {
        for b in &entries[k + 1..] {
            out.push(Residual {
                name: format!("{} - {}", a.label, b.label),
                value: a.report.primal - b.report.primal,
            });
        }
    }
    out
}

fn compare(a: &CompareArgs, timings: bool) -> Result<(Vec<SolveEntry>, Vec<Residual>)> {
    let inst = load_instance(&a.instance)?;
    let p = a.grid.p;
    let prob = XProblem::with_default_reference(inst.mu0.clone(), inst.mu1.clone(), inst.cost.clone())?;
    let config = SolverConfig::new(a.eps).tolerance(1e-12).max_iters(100_000);

    let clock = Clock::start(timings);
    let (_, _, rx) = solve_x_eps(&prob, EntropyKind::Kl, &config)?;
    let ex = entry("solve_x_eps", a.eps, rx, &clock);

    let clock = Clock::start(timings);
    let grids = default_extended_grids(&inst.mu0, &inst.mu1, &prob.nu, p, a.lift_nodes, 1e-6)?;
    let (_, v) = solve_x_extended(
        &inst.mu0,
        &inst.mu1,
        &inst.cost,
        &prob.nu,
        a.eps,
        p,
        [&grids[0], &grids[1], &grids[2]],
        ExtendedConstraint::Equality,
    )?;
    let ee = entry("solve_x_extended", a.eps, lift_report(v, true, 0), &clock);

    let clock = Clock::start(timings);
    let g = y_grids(&inst, &a.grid)?;
    let (_, ry) = solve_y_eps(&inst.mu0, &inst.mu1, &inst.cost, p, (&g, &g), None, &config)?;
    let ey = entry("solve_y_eps", a.eps, ry, &clock);

    let entries = vec![ex, ee, ey];
    let residuals = pairwise(&entries);
    Ok((entries, residuals))
}

fn lift_check(a: &LiftArgs, timings: bool) -> Result<(Vec<SolveEntry>, Vec<Residual>)> {
    let inst = load_instance(&a.instance)?;
    let (mu0, mu1, cost) = (&inst.mu0, &inst.mu1, &inst.cost);
    let p = a.p;
    let nu = default_reference(mu0, mu1);
    let tight = SolverConfig::new(a.eps).tolerance(1e-12).max_iters(100_000);
    let clock = Clock::start(timings);
    let (lifted, baseline) = match a.which {
        LiftKind::Balanced => {
            let grid = RadialGrid::new(vec![0.0, 1.0], 1.0)?;
            let out = solve_lifted_balanced(mu0, mu1, cost, p, &grid)?;
            let lifted = entry(
                "solve_lifted_balanced",
                0.0,
                lift_report(out.value, out.status == LiftStatus::Optimal, out.lp_iterations),
                &clock,
            );
            let clock = Clock::start(timings);
            let (_, sol) = transport_lp(mu0.weights(), mu1.weights(), cost.values());
            let ok = sol.status == LpStatus::Optimal;
            let v = if ok { sol.objective } else { f64::INFINITY };
            (
                lifted,
                entry("transport_lp", 0.0, lift_report(v, ok, sol.iterations), &clock),
            )
        }
        LiftKind::BalancedEps => {
            let (gs, gb) = default_balanced_eps_grids(mu0, mu1, &nu, p, a.lift_nodes, 1e-6)?;
            let out = solve_lifted_balanced_eps(mu0, mu1, cost, &nu, p, (&gs, &gb), a.eps)?;
            let lifted = entry(
                "solve_lifted_balanced_eps",
                a.eps,
                lift_report(out.value, out.status == LiftStatus::Optimal, out.lp_iterations),
                &clock,
            );
            let clock = Clock::start(timings);
            let prob = XProblem::new(mu0.clone(), mu1.clone(), cost.clone(), nu.clone())?;
            let (_, _, r) = solve_x_eps(&prob, EntropyKind::Balanced, &tight)?;
            (lifted, entry("solve_x_eps_balanced", a.eps, r, &clock))
        }
        LiftKind::XExtended => {
            let g = default_extended_grids(mu0, mu1, &nu, p, a.lift_nodes, 1e-6)?;
            let (_, v) = solve_x_extended(
                mu0,
                mu1,
                cost,
                &nu,
                a.eps,
                p,
                [&g[0], &g[1], &g[2]],
                ExtendedConstraint::Equality,
            )?;
            let lifted = entry("solve_x_extended", a.eps, lift_report(v, true, 0), &clock);
            let clock = Clock::start(timings);
            let prob = XProblem::new(mu0.clone(), mu1.clone(), cost.clone(), nu.clone())?;
            let (_, _, r) = solve_x_eps(&prob, EntropyKind::Kl, &tight)?;
            (lifted, entry("solve_x_eps", a.eps, r, &clock))
        }
        LiftKind::SecondOrder => {
            let g = RadialGrid::for_instance(mu0, mu1, p, a.lift_nodes, DEFAULT_SMIN_FRAC)?;
            let w = RadialGrid::new(vec![0.0, 1.0], 1.0)?;
            let out = solve_second_order_lift(mu0, mu1, cost, p, (&g, &g, &w))?;
            let lifted = entry(
                "solve_second_order_lift",
                0.0,
                lift_report(out.value, out.status == LiftStatus::Optimal, out.lp_iterations),
                &clock,
            );
            let clock = Clock::start(timings);
            let (_, r) = solve_y_unreg(mu0, mu1, cost, p, (&g, &g))?;
            (lifted, entry("solve_y_unreg", 0.0, r, &clock))
        }
    };
    let residuals = vec![Residual {
        name: format!("{} - {}", lifted.label, baseline.label),
        value: lifted.report.primal - baseline.report.primal,
    }];
    Ok((vec![lifted, baseline], residuals))
}

fn identities(a: &IdentitiesArgs) -> Result<IdentityReport> {
    let (mu, nu) = random_pair(a.grid, a.dim, a.seed)?;
    verify_identities(&mu, &nu, a.eps)
}

fn validate(cmd: &Command) -> Result<()> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(UotError::Input(format!("--{name} must be a positive number, got {v}")))
        }
    };
    match cmd {
        Command::SolveX(a) => positive("eps", a.eps)?,
        Command::SolveY(a) => {
            positive("eps", a.eps)?;
            positive("p", a.grid.p)?;
        }
        Command::SweepEps(a) => positive("p", a.grid.p)?,
        Command::Compare(a) => {
            positive("eps", a.eps)?;
            positive("p", a.grid.p)?;
        }
        Command::LiftCheck(a) => {
            positive("eps", a.eps)?;
            positive("p", a.p)?;
        }
        Command::Identities(a) => positive("eps", a.eps)?,
    }
    Ok(())
}

fn out_path(cmd: &Command) -> &Path {
    match cmd {
        Command::SolveX(a) => &a.out,
        Command::SolveY(a) => &a.out,
        Command::SweepEps(a) => &a.out,
        Command::Compare(a) => &a.out,
        Command::LiftCheck(a) => &a.out,
        Command::Identities(a) => &a.out,
    }
}

/// Executes a parsed command and returns the record without writing it.
pub fn execute(cli: &Cli) -> Result<RunRecord> {
    validate(&cli.command)?;
    let timings = !cli.no_timings;
    let clock = Clock::start(timings);
    let mut record = RunRecord {
        version: VERSION.into(),
        threads: cli.threads,
        config: cli.command.clone(),
        solves: vec![],
        residuals: vec![],
        identities: None,
        seconds: 0.0,
    };
    match &cli.command {
        Command::SolveX(a) => record.solves = solve_x(a, timings)?,
        Command::SolveY(a) => record.solves = solve_y(a, timings)?,
        Command::SweepEps(a) => record.solves = sweep(a, timings)?,
        Command::Compare(a) => (record.solves, record.residuals) = compare(a, timings)?,
        Command::LiftCheck(a) => (record.solves, record.residuals) = lift_check(a, timings)?,
        Command::Identities(a) => {
            let r = identities(a)?;
            record.residuals = vec![
                Residual {
                    name: "product_reference".into(),
                    value: r.residual_product,
                },
                Residual {
                    name: "heat_kernel".into(),
                    value: r.residual_heat,
                },
                Residual {
                    name: "plan_product_reference".into(),
                    value: r.plan_residual_product,
                },
                Residual {
                    name: "plan_heat_kernel".into(),
                    value: r.plan_residual_heat,
                },
            ];
            record.identities = Some(r);
        }
    }
    record.seconds = clock.seconds();
    Ok(record)
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("UOTLAB_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `argv` (including the program name), runs the command, writes the
/// report, and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(UotError::Input("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| UotError::Input(format!("cannot build thread pool: {e}")))
            .and_then(|pool| pool.install(|| execute(&cli))),
        None => execute(&cli),
    };
    let record = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let path = out_path(&cli.command);
    if let Err(source) = std::fs::write(path, record.to_json()) {
        eprintln!("error: cannot write {}: {source}", path.display());
        return 1;
    }
    if record.converged() {
        0
    } else {
        warn!("at least one solve did not converge");
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_list_is_sorted_and_deduplicated() {
        assert_eq!(normalise_eps_list(&[0.1, 1.0, 0.5, 0.1]).unwrap(), vec![1.0, 0.5, 0.1]);
        assert!(normalise_eps_list(&[0.2, 0.2]).is_err());
        assert!(normalise_eps_list(&[0.2, -1.0]).is_err());
    }

    #[test]
    fn single_row_table_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let row = SweepRow {
            formulation: "x".into(),
            eps: 1.0,
            value: 0.0,
            gap: 0.0,
            iterations: 1,
            seconds: 0.0,
        };
        assert!(emit_convergence_csv(std::slice::from_ref(&row), &dir.path().join("a.csv")).is_err());
        let rows: Vec<SweepRow> = (0..5)
            .map(|k| SweepRow {
                eps: 1.0 / (k + 1) as f64,
                ..row.clone()
            })
            .collect();
        let path = dir.path().join("b.csv");
        emit_convergence_csv(&rows, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(
            text.lines().next().unwrap(),
            "formulation,eps,value,gap,iterations,seconds"
        );
    }

    #[test]
    fn unknown_cost_spec_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.json");
        std::fs::write(&m, r#"{"points": [[0.0]], "weights": [1.0]}"#).unwrap();
        let args = InstanceArgs {
            mu0: m.clone(),
            mu1: m,
            cost: "manhattan".into(),
        };
        assert!(matches!(load_instance(&args), Err(UotError::Input(_))));
    }
}
