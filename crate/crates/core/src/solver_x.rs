//! Original-space entropic regularisation of unbalanced transport.
//!
//! The regularised problem is
//!
//! ```text
//! UOT_{X,ε}(μ0, μ1) = inf_γ  Σᵢ 𝓕(γᵢ | μᵢ) + (c, γ) + ε 𝓕(γ | νX)
//! ```
//!
//! with the marginal entropy `F` either KL or the sharp balanced entropy and KL
//! for the regularising term. This module provides evaluators for the primal,
//! dual, reverse and homogeneous functionals, a generalized Sinkhorn solver,
//! solvers for the unregularised problem, and the constant-shift identities
//! relating common variants of the regularised problem.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::costs::{balanced_h_eps, perspective_h_eps, CostMatrix};
use crate::entropy::{divergence_weights, xlogx_ratio, EntropyKind};
use crate::error::{Result, UotError};
use crate::lp::{transport_lp, LpStatus};
use crate::measures::{product, split_weights, DiscreteMeasure, Mass, Plan};
use crate::numeric::{extended, logsumexp, pair};

/// A validated original-space instance: marginals, ground cost and reference.
#[derive(Debug, Clone)]
pub struct XProblem {
    pub mu0: DiscreteMeasure,
    pub mu1: DiscreteMeasure,
    pub cost: CostMatrix,
    pub nu: Plan,
}

impl XProblem {
    pub fn new(mu0: DiscreteMeasure, mu1: DiscreteMeasure, cost: CostMatrix, nu: Plan) -> Result<Self> {
        cost.check_shape(mu0.len(), mu1.len())?;
        if !nu.spans(&mu0, &mu1) {
            return Err(UotError::Structural(
                "reference plan is not built on the grounds of mu0 and mu1".into(),
            ));
        }
        Ok(XProblem { mu0, mu1, cost, nu })
    }

    /// Instance with the normalised product reference `μ0⊗μ1 / (μ0(X) μ1(X))`.
    pub fn with_default_reference(mu0: DiscreteMeasure, mu1: DiscreteMeasure, cost: CostMatrix) -> Result<Self> {
        let nu = default_reference(&mu0, &mu1);
        Self::new(mu0, mu1, cost, nu)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.mu0.len(), self.mu1.len())
    }

    fn check_plan(&self, gamma: &Plan) -> Result<()> {
        if !gamma.spans(&self.mu0, &self.mu1) {
            return Err(UotError::Structural(
                "plan is not built on the grounds of mu0 and mu1".into(),
            ));
        }
        Ok(())
    }
}

/// `μ0⊗μ1` normalised to a probability measure (the zero plan if either mass is 0).
pub fn default_reference(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Plan {
    let p = product(mu0, mu1);
    let m = p.mass();
    if m > 0.0 {
        p.scaled(1.0 / m).expect("nonnegative")
    } else {
        p
    }
}

/// Dual potentials `(φ0, φ1)`. Entries are `-∞` on zero-mass atoms and `+∞`
/// on positive-mass atoms that have no admissible partner (reference weight 0
/// or infinite cost everywhere along the row/column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    #[serde(with = "extended::vec")]
    pub phi0: Vec<f64>,
    #[serde(with = "extended::vec")]
    pub phi1: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stabilization {
    LogDomain,
    Scaling,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolverConfig {
    pub eps: f64,
    pub max_iters: usize,
    /// Relative duality gap `(primal - dual) / (1 + |primal|)` at which to stop.
    pub tolerance: f64,
    pub stabilization: Stabilization,
}

impl SolverConfig {
    pub fn new(eps: f64) -> Self {
        SolverConfig {
            eps,
            max_iters: 10_000,
            tolerance: 1e-9,
            stabilization: Stabilization::LogDomain,
        }
    }

    pub fn tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn stabilization(mut self, s: Stabilization) -> Self {
        self.stabilization = s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(UotError::Input(format!("eps must be > 0, got {}", self.eps)));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(UotError::Input(format!(
                "tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(UotError::Input("max_iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveReport {
    #[serde(with = "extended")]
    pub primal: f64,
    #[serde(with = "extended")]
    pub dual: f64,
    #[serde(with = "extended")]
    pub gap: f64,
    pub iterations: usize,
    #[serde(with = "extended::vec")]
    pub marginal_residuals: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    pub fn relative_gap(&self) -> f64 {
        self.gap / (1.0 + self.primal.abs())
    }
}

fn slice(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("contiguous")
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// `(c, γ)` with `∞·0 = 0`.
pub fn coupling(cost: &CostMatrix, gamma: &Plan) -> f64 {
    cost.values()
        .iter()
        .zip(gamma.weights().iter())
        .map(|(&c, &g)| pair(c, g))
        .sum()
}

/// Unregularised primal `𝓔(γ | μ0, μ1) = Σᵢ 𝓕(γᵢ | μᵢ) + (c, γ)`.
pub fn eval_primal(prob: &XProblem, gamma: &Plan, kind: EntropyKind) -> Result<f64> {
    prob.check_plan(gamma)?;
    let g0 = gamma.weights().sum_axis(Axis(1));
    let g1 = gamma.weights().sum_axis(Axis(0));
    Ok(divergence_weights(kind, slice(&g0), slice(prob.mu0.weights()))
        + divergence_weights(kind, slice(&g1), slice(prob.mu1.weights()))
        + coupling(&prob.cost, gamma))
}

/// Regularised primal `𝓔_ε = 𝓔 + ε 𝓕_KL(γ | νX)`.
pub fn eval_primal_eps(prob: &XProblem, gamma: &Plan, eps: f64, kind: EntropyKind) -> Result<f64> {
    let base = eval_primal(prob, gamma, kind)?;
    let reg = divergence_weights(EntropyKind::Kl, &flat(gamma.weights()), &flat(prob.nu.weights()));
    Ok(base + eps * reg)
}

/// `μ·(-F*(-φ))` for one atom, with `0·anything = 0`.
fn dual_marginal_term(kind: EntropyKind, mu: f64, phi: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    match kind {
        EntropyKind::Kl => mu * (-(-phi).exp_m1()),
        EntropyKind::Balanced => mu * phi,
    }
}

/// `-ε ν (e^{(φ0+φ1-c)/ε} - 1)` for one pair.
fn dual_reference_term(nu: f64, phi0: f64, phi1: f64, c: f64, eps: f64) -> f64 {
    if nu == 0.0 {
        return 0.0;
    }
    if c.is_infinite() || phi0 == f64::NEG_INFINITY || phi1 == f64::NEG_INFINITY {
        return eps * nu;
    }
    -eps * nu * ((phi0 + phi1 - c) / eps).exp_m1()
}

/// Dual functional `𝓓_{φ,ε}`.
pub fn eval_dual_eps(prob: &XProblem, phi: &DualPotentials, eps: f64, kind: EntropyKind) -> Result<f64> {
    let (n0, n1) = prob.shape();
    if phi.phi0.len() != n0 || phi.phi1.len() != n1 {
        return Err(UotError::Structural("potentials do not match the supports".into()));
    }
    let mut total = 0.0;
    for (&m, &p) in prob.mu0.weights().iter().zip(&phi.phi0) {
        total += dual_marginal_term(kind, m, p);
    }
    for (&m, &p) in prob.mu1.weights().iter().zip(&phi.phi1) {
        total += dual_marginal_term(kind, m, p);
    }
    for ((i, j), &nu) in prob.nu.weights().indexed_iter() {
        total += dual_reference_term(nu, phi.phi0[i], phi.phi1[j], prob.cost.get(i, j), eps);
    }
    Ok(total)
}

/// Reverse functional `𝓡_ε(μ0, μ1, νX | γ)`.
pub fn eval_reverse_eps(prob: &XProblem, gamma: &Plan, eps: f64, kind: EntropyKind) -> Result<f64> {
    prob.check_plan(gamma)?;
    let w = gamma.weights();
    let g0 = w.sum_axis(Axis(1));
    let g1 = w.sum_axis(Axis(0));
    let (rho0, sing0) = split_weights(slice(prob.mu0.weights()), slice(&g0));
    let (rho1, sing1) = split_weights(slice(prob.mu1.weights()), slice(&g1));
    let (varrho, sing_nu) = split_weights(&flat(prob.nu.weights()), &flat(w));
    let n1 = prob.mu1.len();
    let kl = EntropyKind::Kl;

    let mut total = 0.0;
    for ((i, j), &g) in w.indexed_iter() {
        if g == 0.0 {
            continue;
        }
        let integrand = kind.r(rho0[i])? + kind.r(rho1[j])? + prob.cost.get(i, j) + eps * kl.r(varrho[i * n1 + j])?;
        total += g * integrand;
    }
    let singular: f64 = sing0.iter().chain(&sing1).sum();
    total += pair(kind.r_recession(), singular);
    total += eps * pair(kl.r_recession(), sing_nu.iter().sum());
    Ok(total)
}

/// Homogeneous functional `𝓗_ε(μ0, μ1, νX | γ)`.
pub fn eval_homogeneous_eps(prob: &XProblem, gamma: &Plan, eps: f64, kind: EntropyKind) -> Result<f64> {
    prob.check_plan(gamma)?;
    let w = gamma.weights();
    let g0 = w.sum_axis(Axis(1));
    let g1 = w.sum_axis(Axis(0));
    let (rho0, sing0) = split_weights(slice(prob.mu0.weights()), slice(&g0));
    let (rho1, sing1) = split_weights(slice(prob.mu1.weights()), slice(&g1));
    let (varrho, sing_nu) = split_weights(&flat(prob.nu.weights()), &flat(w));
    let n1 = prob.mu1.len();

    let mut total = 0.0;
    for ((i, j), &g) in w.indexed_iter() {
        if g == 0.0 {
            continue;
        }
        let c = prob.cost.get(i, j);
        let h = match kind {
            EntropyKind::Kl => perspective_h_eps(rho0[i], rho1[j], varrho[i * n1 + j], c, eps)?,
            EntropyKind::Balanced => balanced_h_eps(rho0[i], rho1[j], varrho[i * n1 + j], c, eps)?,
        };
        total += g * h;
    }
    let defect: f64 = sing0.iter().chain(&sing1).sum();
    total += pair(kind.f_at_zero(), defect);
    total += pair(EntropyKind::Kl.f_at_zero(), sing_nu.iter().sum());
    Ok(total)
}

/// Generalized Sinkhorn iterations for the regularised problem.
///
/// With `a = e^{φ0/ε}`, `b = e^{φ1/ε}` and kernel `K = e^{-c/ε} ⊙ νX`, each
/// half step maximises the dual exactly in one block of potentials:
/// `a ← (μ0 / K b)^κ`, `b ← (μ1 / Kᵀ a)^κ` with `κ = 1/(1+ε)` for KL marginals
/// and `κ = 1` for balanced ones. The plan is `diag(a) K diag(b)`.
pub struct XSinkhorn<'a> {
    prob: &'a XProblem,
    kind: EntropyKind,
    eps: f64,
    exponent: f64,
    state: SinkhornState,
}

enum SinkhornState {
    Log {
        log_k: Array2<f64>,
        f: Array1<f64>,
        g: Array1<f64>,
    },
    Scaling {
        k: Array2<f64>,
        a: Array1<f64>,
        b: Array1<f64>,
    },
}

impl<'a> XSinkhorn<'a> {
    pub fn new(prob: &'a XProblem, kind: EntropyKind, eps: f64, stabilization: Stabilization) -> Self {
        let (n0, n1) = prob.shape();
        let log_k = Array2::from_shape_fn((n0, n1), |(i, j)| {
            let nu = prob.nu.weights()[[i, j]];
            let c = prob.cost.get(i, j);
            if nu == 0.0 || c.is_infinite() {
                f64::NEG_INFINITY
            } else {
                nu.ln() - c / eps
            }
        });
        let exponent = match kind {
            EntropyKind::Kl => 1.0 / (1.0 + eps),
            EntropyKind::Balanced => 1.0,
        };
        let state = match stabilization {
            Stabilization::LogDomain => SinkhornState::Log {
                log_k,
                f: Array1::zeros(n0),
                g: Array1::zeros(n1),
            },
            Stabilization::Scaling => SinkhornState::Scaling {
                k: log_k.mapv(f64::exp),
                a: Array1::ones(n0),
                b: Array1::ones(n1),
            },
        };
        XSinkhorn {
            prob,
            kind,
            eps,
            exponent,
            state,
        }
    }

    /// Replaces the current potentials, e.g. to warm start from a coarser `ε`.
    pub fn warm_start(&mut self, phi: &DualPotentials) {
        let eps = self.eps;
        let to_log = |p: &[f64]| Array1::from_iter(p.iter().map(|&v| v / eps));
        match &mut self.state {
            SinkhornState::Log { f, g, .. } => {
                *f = to_log(&phi.phi0);
                *g = to_log(&phi.phi1);
            }
            SinkhornState::Scaling { a, b, .. } => {
                *a = to_log(&phi.phi0).mapv(f64::exp);
                *b = to_log(&phi.phi1).mapv(f64::exp);
            }
        }
    }

    fn log_update(mu: &Array1<f64>, lse: impl Fn(usize) -> f64, exponent: f64) -> Array1<f64> {
        Array1::from_iter(mu.iter().enumerate().map(|(i, &m)| {
            if m == 0.0 {
                f64::NEG_INFINITY
            } else {
                exponent * (m.ln() - lse(i))
            }
        }))
    }

    fn lin_update(mu: &Array1<f64>, kb: &Array1<f64>, exponent: f64) -> Array1<f64> {
        Array1::from_iter(
            mu.iter()
                .zip(kb)
                .map(|(&m, &s)| if m == 0.0 { 0.0 } else { (m / s).powf(exponent) }),
        )
    }

    /// Exact dual maximisation in `φ0`.
    pub fn update_first(&mut self) {
        let exponent = self.exponent;
        let mu0 = self.prob.mu0.weights();
        match &mut self.state {
            SinkhornState::Log { log_k, f, g } => {
                let lse = |i: usize| {
                    logsumexp(
                        log_k
                            .row(i)
                            .iter()
                            .zip(g.iter())
                            .filter(|(&k, _)| k > f64::NEG_INFINITY)
                            .map(|(&k, &gj)| k + gj),
                    )
                };
                *f = Self::log_update(mu0, lse, exponent);
            }
            SinkhornState::Scaling { k, a, b } => {
                let kb = k.dot(b);
                *a = Self::lin_update(mu0, &kb, exponent);
            }
        }
    }

    /// Exact dual maximisation in `φ1`.
    pub fn update_second(&mut self) {
        let exponent = self.exponent;
        let mu1 = self.prob.mu1.weights();
        match &mut self.state {
            SinkhornState::Log { log_k, f, g } => {
                let lse = |j: usize| {
                    logsumexp(
                        log_k
                            .column(j)
                            .iter()
                            .zip(f.iter())
                            .filter(|(&k, _)| k > f64::NEG_INFINITY)
                            .map(|(&k, &fi)| k + fi),
                    )
                };
                *g = Self::log_update(mu1, lse, exponent);
            }
            SinkhornState::Scaling { k, a, b } => {
                let kta = k.t().dot(a);
                *b = Self::lin_update(mu1, &kta, exponent);
            }
        }
    }

    pub fn potentials(&self) -> DualPotentials {
        let eps = self.eps;
        match &self.state {
            SinkhornState::Log { f, g, .. } => DualPotentials {
                phi0: f.iter().map(|v| eps * v).collect(),
                phi1: g.iter().map(|v| eps * v).collect(),
            },
            SinkhornState::Scaling { a, b, .. } => DualPotentials {
                phi0: a.iter().map(|v| eps * v.ln()).collect(),
                phi1: b.iter().map(|v| eps * v.ln()).collect(),
            },
        }
    }

    pub fn plan(&self) -> Plan {
        let w = match &self.state {
            SinkhornState::Log { log_k, f, g } => Array2::from_shape_fn(log_k.dim(), |(i, j)| {
                let k = log_k[[i, j]];
                if k == f64::NEG_INFINITY || f[i] == f64::NEG_INFINITY || g[j] == f64::NEG_INFINITY {
                    0.0
                } else {
                    (f[i] + k + g[j]).exp()
                }
            }),
            SinkhornState::Scaling { k, a, b } => Array2::from_shape_fn(k.dim(), |(i, j)| {
                let v = a[i] * k[[i, j]] * b[j];
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            }),
        };
        self.prob.nu.with_weights(w).expect("nonnegative plan")
    }

    /// First-order residuals `max |γᵢ - μᵢ·(F*)'(-φᵢ)|` for both marginals.
    pub fn marginal_residuals(&self, gamma: &Plan, phi: &DualPotentials) -> [f64; 2] {
        let kind = self.kind;
        let target = |mu: f64, p: f64| match kind {
            EntropyKind::Kl => {
                if mu == 0.0 {
                    0.0
                } else {
                    mu * (-p).exp()
                }
            }
            EntropyKind::Balanced => mu,
        };
        let res = |g: Array1<f64>, mu: &Array1<f64>, phi: &[f64]| {
            g.iter()
                .zip(mu)
                .zip(phi)
                .map(|((&gi, &m), &p)| (gi - target(m, p)).abs())
                .fold(0.0, f64::max)
        };
        [
            res(gamma.weights().sum_axis(Axis(1)), self.prob.mu0.weights(), &phi.phi0),
            res(gamma.weights().sum_axis(Axis(0)), self.prob.mu1.weights(), &phi.phi1),
        ]
    }

    /// Primal value reported by the solver. For balanced marginals the sharp
    /// marginal terms are dropped (they are `+∞` off exact feasibility) and
    /// feasibility is tracked by the marginal residuals instead.
    pub fn primal(&self, gamma: &Plan) -> f64 {
        match self.kind {
            EntropyKind::Kl => eval_primal_eps(self.prob, gamma, self.eps, EntropyKind::Kl).expect("grounds match"),
            EntropyKind::Balanced => {
                coupling(&self.prob.cost, gamma)
                    + self.eps
                        * divergence_weights(EntropyKind::Kl, &flat(gamma.weights()), &flat(self.prob.nu.weights()))
            }
        }
    }

    pub fn dual(&self, phi: &DualPotentials) -> f64 {
        eval_dual_eps(self.prob, phi, self.eps, self.kind).expect("shapes match")
    }
}

/// Solves `UOT_{X,ε}` by generalized Sinkhorn iterations.
pub fn solve_x_eps(
    prob: &XProblem,
    kind: EntropyKind,
    config: &SolverConfig,
) -> Result<(Plan, DualPotentials, SolveReport)> {
    solve_x_eps_from(prob, kind, config, None)
}

/// [`solve_x_eps`] with an optional warm start.
pub fn solve_x_eps_from(
    prob: &XProblem,
    kind: EntropyKind,
    config: &SolverConfig,
    warm: Option<&DualPotentials>,
) -> Result<(Plan, DualPotentials, SolveReport)> {
    config.validate()?;
    let eps = config.eps;
    let m0 = prob.mu0.mass();
    let m1 = prob.mu1.mass();
    if m0 == 0.0 || m1 == 0.0 {
        return Ok(zero_mass_solution(prob, kind, eps));
    }

    let mut sk = XSinkhorn::new(prob, kind, eps, config.stabilization);
    if let Some(phi) = warm {
        sk.warm_start(phi);
    }
    let (n0, n1) = prob.shape();
    let check_every = if n0 * n1 <= 10_000 { 1 } else { 10 };
    let mut report = None;
    for it in 1..=config.max_iters {
        sk.update_first();
        sk.update_second();
        if it % check_every != 0 && it != config.max_iters {
            continue;
        }
        let gamma = sk.plan();
        let phi = sk.potentials();
        let primal = sk.primal(&gamma);
        let dual = sk.dual(&phi);
        let residuals = sk.marginal_residuals(&gamma, &phi);
        let gap = primal - dual;
        let scale = 1.0 + primal.abs();
        let mut converged = gap.is_finite() && gap.abs() <= config.tolerance * scale;
        if kind == EntropyKind::Balanced {
            converged &= residuals[0] <= config.tolerance * (1.0 + m0);
        }
        let r = SolveReport {
            primal,
            dual,
            gap,
            iterations: it,
            marginal_residuals: residuals.to_vec(),
            converged,
        };
        if converged || it == config.max_iters {
            return Ok((gamma, phi, r));
        }
        report = Some(r);
    }
    unreachable!("loop returns on the last iteration: {report:?}")
}

fn zero_mass_solution(prob: &XProblem, kind: EntropyKind, eps: f64) -> (Plan, DualPotentials, SolveReport) {
    let gamma = prob.nu.with_weights(Array2::zeros(prob.shape())).expect("zero plan");
    let side = |mu: &DiscreteMeasure| -> Vec<f64> {
        if mu.mass() == 0.0 {
            vec![f64::NEG_INFINITY; mu.len()]
        } else {
            mu.weights()
                .iter()
                .map(|&m| if m > 0.0 { f64::INFINITY } else { 0.0 })
                .collect()
        }
    };
    let phi = DualPotentials {
        phi0: side(&prob.mu0),
        phi1: side(&prob.mu1),
    };
    let primal = eval_primal_eps(prob, &gamma, eps, kind).expect("grounds match");
    let dual = match kind {
        EntropyKind::Kl => eval_dual_eps(prob, &phi, eps, kind).expect("shapes match"),
        EntropyKind::Balanced => eps * prob.nu.mass(),
    };
    let converged = primal.is_finite();
    let report = SolveReport {
        primal,
        dual,
        gap: if converged { primal - dual } else { f64::INFINITY },
        iterations: 0,
        marginal_residuals: vec![prob.mu0.mass(), prob.mu1.mass()]
            .into_iter()
            .map(|m| if kind == EntropyKind::Kl { 0.0 } else { m })
            .collect(),
        converged,
    };
    (gamma, phi, report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnregMethod {
    /// Exact coordinate descent on the plan entries (KL) or a transport LP (balanced).
    Direct,
    /// Warm-started regularised solves along a decreasing `ε` schedule.
    EpsContinuation,
}

/// `ε` schedule used by [`UnregMethod::EpsContinuation`].
pub const CONTINUATION_SCHEDULE: [f64; 9] = [1.0, 0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4];

/// Lower bound on the unregularised value from potentials made feasible for
/// `φ0 ⊕ φ1 <= c` by lowering `φ1`.
fn clamped_dual(prob: &XProblem, phi0: &[f64], phi1: &[f64], kind: EntropyKind) -> f64 {
    let (n0, n1) = prob.shape();
    let mut p1 = phi1.to_vec();
    for j in 0..n1 {
        for i in 0..n0 {
            if prob.mu0.weights()[i] == 0.0 {
                continue;
            }
            let c = prob.cost.get(i, j);
            if c.is_finite() {
                p1[j] = p1[j].min(c - phi0[i]);
            }
        }
    }
    let mut total = 0.0;
    for (&m, &p) in prob.mu0.weights().iter().zip(phi0) {
        total += dual_marginal_term(kind, m, p);
    }
    for (&m, &p) in prob.mu1.weights().iter().zip(&p1) {
        total += dual_marginal_term(kind, m, p);
    }
    total
}

/// Minimises the unregularised primal `𝓔(γ | μ0, μ1)`.
pub fn solve_x_unreg(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    kind: EntropyKind,
    method: UnregMethod,
) -> Result<(Plan, SolveReport)> {
    let prob = XProblem::with_default_reference(mu0.clone(), mu1.clone(), cost.clone())?;
    match (method, kind) {
        (UnregMethod::Direct, EntropyKind::Kl) => Ok(coordinate_descent(&prob)),
        (UnregMethod::Direct, EntropyKind::Balanced) => balanced_lp(&prob),
        (UnregMethod::EpsContinuation, _) => continuation(&prob, kind),
    }
}

fn coordinate_descent(prob: &XProblem) -> (Plan, SolveReport) {
    const MAX_SWEEPS: usize = 1_000_000;
    let (n0, n1) = prob.shape();
    let mu0 = prob.mu0.weights();
    let mu1 = prob.mu1.weights();
    let mut w = Array2::<f64>::zeros((n0, n1));
    let mut rows = Array1::<f64>::zeros(n0);
    let mut cols = Array1::<f64>::zeros(n1);
    let active = |i: usize, j: usize| mu0[i] > 0.0 && mu1[j] > 0.0 && prob.cost.get(i, j).is_finite();

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for i in 0..n0 {
            for j in 0..n1 {
                if !active(i, j) {
                    continue;
                }
                let old = w[[i, j]];
                let r = rows[i] - old;
                let k = cols[j] - old;
                // Stationarity in this entry: (r + t)(k + t) = μ0 μ1 e^{-c}.
                let q = mu0[i] * mu1[j] * (-prob.cost.get(i, j)).exp();
                let disc = ((r - k) * (r - k) + 4.0 * q).sqrt();
                let t = (2.0 * (q - r * k) / ((r + k) + disc)).max(0.0);
                w[[i, j]] = t;
                rows[i] = r + t;
                cols[j] = k + t;
                max_change = max_change.max((t - old).abs());
            }
        }
        let scale = 1.0 + rows.iter().fold(0.0f64, |a, &v| a.max(v));
        if max_change <= 1e-15 * scale {
            converged = true;
            break;
        }
    }
    let gamma = prob.nu.with_weights(w).expect("nonnegative");
    let primal = eval_primal(prob, &gamma, EntropyKind::Kl).expect("grounds match");
    let phi0: Vec<f64> = rows
        .iter()
        .zip(mu0)
        .map(|(&g, &m)| potential_from_density(g, m))
        .collect();
    let phi1: Vec<f64> = cols
        .iter()
        .zip(mu1)
        .map(|(&g, &m)| potential_from_density(g, m))
        .collect();
    let dual = clamped_dual(prob, &phi0, &phi1, EntropyKind::Kl);
    let report = SolveReport {
        primal,
        dual,
        gap: primal - dual,
        iterations: sweeps,
        marginal_residuals: vec![0.0, 0.0],
        converged,
    };
    (gamma, report)
}

/// `φ = -log(γᵢ/μᵢ)` from the first-order condition `σ = e^{-φ}`.
fn potential_from_density(g: f64, m: f64) -> f64 {
    if m == 0.0 {
        f64::NEG_INFINITY
    } else if g == 0.0 {
        f64::INFINITY
    } else {
        -(g / m).ln()
    }
}

fn balanced_lp(prob: &XProblem) -> Result<(Plan, SolveReport)> {
    let (w, sol) = transport_lp(prob.mu0.weights(), prob.mu1.weights(), prob.cost.values());
    let gamma = prob.nu.with_weights(w)?;
    let feasible = sol.status == LpStatus::Optimal;
    let primal = if feasible { sol.objective } else { f64::INFINITY };
    let dual = if feasible {
        let n0 = prob.mu0.len();
        prob.mu0
            .weights()
            .iter()
            .zip(&sol.duals[..n0])
            .map(|(m, y)| m * y)
            .sum::<f64>()
            + prob
                .mu1
                .weights()
                .iter()
                .zip(&sol.duals[n0..])
                .map(|(m, y)| m * y)
                .sum::<f64>()
    } else {
        f64::NEG_INFINITY
    };
    Ok((
        gamma,
        SolveReport {
            primal,
            dual,
            gap: if feasible { primal - dual } else { f64::INFINITY },
            iterations: sol.iterations,
            marginal_residuals: vec![0.0, 0.0],
            converged: feasible,
        },
    ))
}

fn continuation(prob: &XProblem, kind: EntropyKind) -> Result<(Plan, SolveReport)> {
    let mut warm: Option<DualPotentials> = None;
    let mut last = None;
    let mut iterations = 0;
    let mut all_converged = true;
    for &eps in &CONTINUATION_SCHEDULE {
        let config = SolverConfig::new(eps).tolerance(1e-10).max_iters(200_000);
        let (gamma, phi, report) = solve_x_eps_from(prob, kind, &config, warm.as_ref())?;
        iterations += report.iterations;
        all_converged &= report.converged;
        warm = Some(phi.clone());
        last = Some((gamma, phi));
    }
    let (gamma, phi) = last.expect("non-empty schedule");
    let primal = match kind {
        EntropyKind::Kl => eval_primal(prob, &gamma, kind)?,
        EntropyKind::Balanced => coupling(&prob.cost, &gamma),
    };
    let dual = match kind {
        EntropyKind::Kl => clamped_dual(prob, &phi.phi0, &phi.phi1, kind),
        EntropyKind::Balanced => f64::NEG_INFINITY,
    };
    Ok((
        gamma,
        SolveReport {
            primal,
            dual,
            gap: primal - dual,
            iterations,
            marginal_residuals: vec![0.0, 0.0],
            converged: all_converged,
        },
    ))
}

/// Values of the regularised problem under three reference conventions and the
/// `𝓖` functional in two algebraic forms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemarkReport {
    /// `UOT_{X,ε}` with `F(s) = s log s - s + 1` on the plan.
    pub uot: f64,
    /// Same problem with `F̃(s) = s log s - s` on the plan.
    pub uot_tilde: f64,
    /// No transport cost, reference `e^{-c/ε} νX`.
    pub uot_bar: f64,
    pub nu_mass: f64,
    /// `Σ e^{-c/ε} νX`.
    pub nu_bar_mass: f64,
    /// `|UOT - (ŨOT + ε νX(X²))|`.
    pub residual_tilde: f64,
    /// `|UOT - (ŪOT - ε Σ e^{-c/ε}νX + ε νX(X²))|`.
    pub residual_bar: f64,
    /// `|𝓖 as averaged KL - 𝓖 in rewritten form|` at the optimal plan.
    pub g_two_form_residual: f64,
    pub reports: Vec<SolveReport>,
}

/// `Σ ν F̃(γ/ν)` with `F̃(s) = s log s - s`; `+∞` on singular mass.
fn tilde_divergence(gamma: &[f64], nu: &[f64]) -> f64 {
    gamma
        .iter()
        .zip(nu)
        .map(|(&g, &n)| {
            if n > 0.0 {
                xlogx_ratio(g, n) - g
            } else if g > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum()
}

/// `𝓖(γ | μ0, μ1) = ½(𝓕(γ | μ̂0⊗μ1) + 𝓕(γ | μ0⊗μ̂1))` with `μ̂ᵢ = μᵢ/μᵢ(X)`.
pub fn g_functional_averaged(gamma: &Plan, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<f64> {
    let (m0, m1) = (mu0.mass(), mu1.mass());
    let p = product(mu0, mu1);
    if !gamma.same_grounds(&p) {
        return Err(UotError::Structural(
            "plan is not over the grounds of mu0 and mu1".into(),
        ));
    }
    let g = flat(gamma.weights());
    let a = divergence_weights(EntropyKind::Kl, &g, &flat(&(p.weights() / m0)));
    let b = divergence_weights(EntropyKind::Kl, &g, &flat(&(p.weights() / m1)));
    Ok(0.5 * (a + b))
}

/// `𝓖` rewritten as `∫ G(σ) d(μ0⊗μ1) + G'_∞ γ^⊥` with
/// `G(s) = s log s + (c0 - 1)s + 1/c1`, `c0 = ½log(m0 m1)`, `c1 = 2 m0 m1/(m0 + m1)`.
pub fn g_functional_rewritten(gamma: &Plan, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<f64> {
    let (m0, m1) = (mu0.mass(), mu1.mass());
    let p = product(mu0, mu1);
    if !gamma.same_grounds(&p) {
        return Err(UotError::Structural(
            "plan is not over the grounds of mu0 and mu1".into(),
        ));
    }
    let c0 = 0.5 * (m0 * m1).ln();
    let c1 = 2.0 * m0 * m1 / (m0 + m1);
    let mut total = 0.0;
    for (&g, &r) in gamma.weights().iter().zip(p.weights().iter()) {
        if r > 0.0 {
            total += xlogx_ratio(g, r) + (c0 - 1.0) * g + r / c1;
        } else if g > 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(total)
}

/// Solves the three reference conventions and returns the identity residuals.
pub fn check_remark_identities(prob: &XProblem, config: &SolverConfig) -> Result<RemarkReport> {
    let eps = config.eps;
    let kind = EntropyKind::Kl;
    let (gamma, _, r_main) = solve_x_eps(prob, kind, config)?;
    let uot = r_main.primal;

    // F̃ differs from F by a constant on the reference, so the stationarity
    // conditions and hence the minimiser coincide.
    let (gamma_t, _, r_tilde) = solve_x_eps(prob, kind, config)?;
    let uot_tilde = divergence_weights(
        kind,
        slice(&gamma_t.weights().sum_axis(Axis(1))),
        slice(prob.mu0.weights()),
    ) + divergence_weights(
        kind,
        slice(&gamma_t.weights().sum_axis(Axis(0))),
        slice(prob.mu1.weights()),
    ) + coupling(&prob.cost, &gamma_t)
        + eps * tilde_divergence(&flat(gamma_t.weights()), &flat(prob.nu.weights()));

    let nu_bar_w = Array2::from_shape_fn(prob.shape(), |(i, j)| {
        let c = prob.cost.get(i, j);
        if c.is_infinite() {
            0.0
        } else {
            prob.nu.weights()[[i, j]] * (-c / eps).exp()
        }
    });
    let bar = XProblem::new(
        prob.mu0.clone(),
        prob.mu1.clone(),
        CostMatrix::custom(Array2::zeros(prob.shape()))?,
        prob.nu.with_weights(nu_bar_w)?,
    )?;
    let (_, _, r_bar) = solve_x_eps(&bar, kind, config)?;
    let uot_bar = r_bar.primal;

    let nu_mass = prob.nu.mass();
    let nu_bar_mass = bar.nu.mass();
    let g_avg = g_functional_averaged(&gamma, &prob.mu0, &prob.mu1)?;
    let g_rew = g_functional_rewritten(&gamma, &prob.mu0, &prob.mu1)?;
    Ok(RemarkReport {
        uot,
        uot_tilde,
        uot_bar,
        nu_mass,
        nu_bar_mass,
        residual_tilde: (uot - (uot_tilde + eps * nu_mass)).abs(),
        residual_bar: (uot - (uot_bar - eps * nu_bar_mass + eps * nu_mass)).abs(),
        g_two_form_residual: (g_avg - g_rew).abs(),
        reports: vec![r_main, r_tilde, r_bar],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::hk_cost;
    use crate::measures::GroundSet;
    use ndarray::array;

    fn dirac_pair(m0: f64, m1: f64, c: f64) -> XProblem {
        let mu0 = DiscreteMeasure::on_line(&[m0]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[m1]).unwrap();
        let nu = product(&mu0, &mu1);
        XProblem::new(mu0, mu1, CostMatrix::custom(array![[c]]).unwrap(), nu).unwrap()
    }

    #[test]
    fn primal_at_coincident_diracs_is_zero() {
        let p = dirac_pair(1.0, 1.0, 0.0);
        let g = p.nu.clone();
        assert_eq!(eval_primal_eps(&p, &g, 0.3, EntropyKind::Kl).unwrap(), 0.0);
    }

    #[test]
    fn primal_at_zero_plan() {
        let mu0 = DiscreteMeasure::on_line(&[0.5, 1.5]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[2.0]).unwrap();
        let nu = product(&mu0, &mu1);
        let c = CostMatrix::custom(array![[0.3], [0.1]]).unwrap();
        let p = XProblem::new(mu0, mu1, c, nu).unwrap();
        let z = p.nu.with_weights(Array2::zeros((2, 1))).unwrap();
        let v = eval_primal_eps(&p, &z, 0.7, EntropyKind::Kl).unwrap();
        assert!((v - (2.0 + 2.0 + 0.7 * 4.0)).abs() < 1e-14);
    }

    #[test]
    fn primal_off_reference_support_is_infinite() {
        let g = GroundSet::line(2);
        let mu = DiscreteMeasure::new(g, array![1.0, 1.0]).unwrap();
        let nu = mu_plan(&mu, array![[1.0, 0.0], [0.0, 1.0]]);
        let p = XProblem::new(
            mu.clone(),
            mu.clone(),
            CostMatrix::custom(Array2::zeros((2, 2))).unwrap(),
            nu,
        )
        .unwrap();
        let gamma = p.nu.with_weights(array![[0.5, 0.5], [0.0, 1.0]]).unwrap();
        assert_eq!(
            eval_primal_eps(&p, &gamma, 0.1, EntropyKind::Kl).unwrap(),
            f64::INFINITY
        );
    }

    fn mu_plan(mu: &DiscreteMeasure, w: Array2<f64>) -> Plan {
        Plan::new(mu.ground().clone(), mu.ground().clone(), w).unwrap()
    }

    #[test]
    fn dual_examples() {
        let p = dirac_pair(1.0, 2.0, 0.0);
        let zero = DualPotentials {
            phi0: vec![0.0],
            phi1: vec![0.0],
        };
        assert_eq!(eval_dual_eps(&p, &zero, 0.4, EntropyKind::Kl).unwrap(), 0.0);
        let p = dirac_pair(1.0, 2.0, 0.9);
        let want = 0.4 * 2.0 * (1.0 - (-0.9f64 / 0.4).exp());
        assert!((eval_dual_eps(&p, &zero, 0.4, EntropyKind::Kl).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn reverse_examples() {
        let p = dirac_pair(1.0, 1.0, 0.0);
        assert_eq!(eval_reverse_eps(&p, &p.nu.clone(), 0.5, EntropyKind::Kl).unwrap(), 0.0);
        let p = dirac_pair(1.5, 0.5, 0.2);
        let z = p.nu.with_weights(array![[0.0]]).unwrap();
        let v = eval_reverse_eps(&p, &z, 0.5, EntropyKind::Kl).unwrap();
        assert!((v - (1.5 + 0.5 + 0.5 * 0.75)).abs() < 1e-14);
    }

    #[test]
    fn homogeneous_at_reference_is_zero() {
        let p = dirac_pair(1.0, 1.0, 0.0);
        assert!(
            eval_homogeneous_eps(&p, &p.nu.clone(), 0.5, EntropyKind::Kl)
                .unwrap()
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn coincident_diracs_solve_to_zero() {
        let p = dirac_pair(1.0, 1.0, 0.0);
        let (g, _, r) = solve_x_eps(&p, EntropyKind::Kl, &SolverConfig::new(0.5)).unwrap();
        assert!(r.converged);
        assert!(r.primal.abs() < 1e-9);
        assert!((g.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unreachable_diracs_destroy_all_mass() {
        let (m0, m1, eps) = (0.7, 1.3, 0.2);
        let p = dirac_pair(m0, m1, hk_cost(2.0));
        let (g, _, r) = solve_x_eps(&p, EntropyKind::Kl, &SolverConfig::new(eps)).unwrap();
        assert_eq!(g.mass(), 0.0);
        assert!((r.primal - (m0 + m1 + eps * m0 * m1)).abs() < 1e-12);
        assert!(r.converged);
    }

    #[test]
    fn zero_mass_side_short_circuits() {
        let mu0 = DiscreteMeasure::on_line(&[0.0, 0.0]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[1.0, 2.0]).unwrap();
        let nu = Plan::new(
            mu0.ground().clone(),
            mu1.ground().clone(),
            Array2::from_elem((2, 2), 0.25),
        )
        .unwrap();
        let p = XProblem::new(mu0, mu1, CostMatrix::custom(Array2::zeros((2, 2))).unwrap(), nu).unwrap();
        let (g, phi, r) = solve_x_eps(&p, EntropyKind::Kl, &SolverConfig::new(0.3)).unwrap();
        assert_eq!(g.mass(), 0.0);
        assert!((r.primal - (3.0 + 0.3)).abs() < 1e-14);
        assert!((eval_dual_eps(&p, &phi, 0.3, EntropyKind::Kl).unwrap() - r.primal).abs() < 1e-14);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn scaling_and_log_domain_agree() {
        let mu0 = DiscreteMeasure::on_line(&[0.4, 1.1, 0.6]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[0.9, 0.5]).unwrap();
        let c = CostMatrix::squared_euclidean(mu0.ground(), mu1.ground());
        let p = XProblem::with_default_reference(mu0, mu1, c).unwrap();
        let cfg = SolverConfig::new(0.5);
        let (_, _, a) = solve_x_eps(&p, EntropyKind::Kl, &cfg).unwrap();
        let (_, _, b) = solve_x_eps(&p, EntropyKind::Kl, &cfg.clone().stabilization(Stabilization::Scaling)).unwrap();
        assert!((a.primal - b.primal).abs() < 1e-9);
    }

    #[test]
    fn update_exponent_solves_one_dimensional_stationarity() {
        // For fixed φ1, the φ0-derivative of the dual at a single atom is
        // μ e^{-φ} - Σ ν e^{(φ + φ1 - c)/ε}; find its root by bisection and
        // compare with the closed-form scaling update.
        let (mu, nu, c, phi1, eps) = (1.7, 0.3, 0.8, 0.25, 0.35);
        let deriv = |phi: f64| mu * (-phi).exp() - nu * ((phi + phi1 - c) / eps).exp();
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if deriv(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        let kb = nu * (-c / eps).exp() * (phi1 / eps).exp();
        let a = (mu / kb).powf(1.0 / (1.0 + eps));
        assert!((eps * a.ln() - root).abs() < 1e-12);
    }

    #[test]
    fn structural_mismatch_is_reported() {
        let mu0 = DiscreteMeasure::on_line(&[1.0]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[1.0]).unwrap();
        let c = CostMatrix::custom(array![[0.0]]).unwrap();
        let foreign = DiscreteMeasure::on_line(&[1.0]).unwrap();
        let nu = product(&foreign, &mu1);
        assert!(matches!(XProblem::new(mu0, mu1, c, nu), Err(UotError::Structural(_))));
    }

    #[test]
    fn unreg_dirac_closed_form() {
        let (m0, m1, d) = (0.8, 1.9, 0.6);
        let mu0 = DiscreteMeasure::on_line(&[m0]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[m1]).unwrap();
        let c = CostMatrix::custom(array![[hk_cost(d)]]).unwrap();
        let (_, r) = solve_x_unreg(&mu0, &mu1, &c, EntropyKind::Kl, UnregMethod::Direct).unwrap();
        let want = m0 + m1 - 2.0 * (m0 * m1).sqrt() * d.cos();
        assert!((r.primal - want).abs() < 1e-12);
        assert!(r.gap.abs() < 1e-12);
    }

    #[test]
    fn balanced_direct_is_transport_lp() {
        let mu0 = DiscreteMeasure::on_line(&[0.5, 0.5]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[0.5, 0.5]).unwrap();
        let c = CostMatrix::squared_euclidean(mu0.ground(), mu1.ground());
        let (_, r) = solve_x_unreg(&mu0, &mu1, &c, EntropyKind::Balanced, UnregMethod::Direct).unwrap();
        assert!(r.primal.abs() < 1e-14);
        let mu1 = DiscreteMeasure::on_line(&[0.5, 0.6]).unwrap();
        let c = CostMatrix::squared_euclidean(mu0.ground(), mu1.ground());
        let (_, r) = solve_x_unreg(&mu0, &mu1, &c, EntropyKind::Balanced, UnregMethod::Direct).unwrap();
        assert_eq!(r.primal, f64::INFINITY);
        assert!(!r.converged);
    }

    #[test]
    fn g_forms_agree_on_a_fixed_plan() {
        let mu0 = DiscreteMeasure::on_line(&[0.4, 1.1]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[0.9, 0.5, 0.3]).unwrap();
        let gamma = Plan::new(
            mu0.ground().clone(),
            mu1.ground().clone(),
            array![[0.1, 0.2, 0.0], [0.5, 0.05, 0.3]],
        )
        .unwrap();
        let a = g_functional_averaged(&gamma, &mu0, &mu1).unwrap();
        let b = g_functional_rewritten(&gamma, &mu0, &mu1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
