//! Extended-space formulation on `Y = X × ℝ₊`.
//!
//! Plans live on `(x0, s0, x1, s1)` with the radial coordinates restricted to
//! finite grids. The homogeneous marginal `𝗁ᵢ^p α` projects `sᵢ^p α` to the
//! `i`-th copy of `X`. The unregularised problem `min (H_p, α)` subject to
//! `𝗁ᵢ^p α = μᵢ` is a linear program; the regularised one adds
//! `ε 𝓕_KL(α | νY)` and is solved by alternating KL projections.

use std::sync::Arc;

use ndarray::{Array1, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::{check_p, perspective_h, CostMatrix};
use crate::entropy::{xlogx_ratio, EntropyKind};
use crate::error::{Result, UotError};
use crate::lp::{transport_lp, LinearProgram, LpStatus};
use crate::measures::{DiscreteMeasure, GroundSet, Mass};
use crate::numeric::logsumexp;
use crate::solver_x::{SolveReport, SolverConfig};

/// Radial nodes: strictly increasing, nonnegative, containing 0, bounded by `cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    cap: f64,
}

impl RadialGrid {
    pub fn new(nodes: Vec<f64>, cap: f64) -> Result<Self> {
        if nodes.first() != Some(&0.0) {
            return Err(UotError::Input("radial grid must start with the node 0".into()));
        }
        if !(cap.is_finite() && cap >= 0.0) {
            return Err(UotError::Input(format!(
                "radial cap must be finite and >= 0, got {cap}"
            )));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(UotError::Input("radial nodes must be strictly increasing".into()));
            }
        }
        if nodes.iter().any(|&s| !s.is_finite() || s > cap) {
            return Err(UotError::Input(format!("radial nodes must lie in [0, {cap}]")));
        }
        Ok(RadialGrid { nodes, cap })
    }

    /// `0` followed by `n` geometrically spaced nodes from `smin_frac·cap` to `cap`.
    pub fn geometric(n: usize, smin_frac: f64, cap: f64) -> Result<Self> {
        if n == 0 {
            return Err(UotError::Input("need at least one positive radial node".into()));
        }
        if !(smin_frac > 0.0 && smin_frac <= 1.0) {
            return Err(UotError::Input(format!(
                "smin fraction must lie in (0, 1], got {smin_frac}"
            )));
        }
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(UotError::Input(format!("radial cap must be positive, got {cap}")));
        }
        let mut nodes = vec![0.0];
        if n == 1 {
            nodes.push(cap);
        } else {
            let (lo, hi) = (smin_frac.ln(), 0.0f64);
            for k in 0..n {
                let t = lo + (hi - lo) * k as f64 / (n - 1) as f64;
                nodes.push(if k == n - 1 { cap } else { cap * t.exp() });
            }
        }
        nodes.dedup();
        Self::new(nodes, cap)
    }

    /// `0` followed by `n` equispaced nodes up to `cap`.
    pub fn uniform(n: usize, cap: f64) -> Result<Self> {
        if n == 0 || !(cap > 0.0 && cap.is_finite()) {
            return Err(UotError::Input("uniform grid needs n >= 1 and a positive cap".into()));
        }
        let nodes = (0..=n)
            .map(|k| if k == n { cap } else { cap * k as f64 / n as f64 })
            .collect();
        Self::new(nodes, cap)
    }

    /// Default grid for an instance: geometric over `[smin_frac·s*, s*]` with
    /// `s* = (μ0(X) + μ1(X))^{1/p}`.
    pub fn for_instance(
        mu0: &DiscreteMeasure,
        mu1: &DiscreteMeasure,
        p: f64,
        n: usize,
        smin_frac: f64,
    ) -> Result<Self> {
        check_p(p)?;
        let total = mu0.mass() + mu1.mass();
        if total == 0.0 {
            return Self::new(vec![0.0], 0.0);
        }
        Self::geometric(n, smin_frac, total.powf(1.0 / p))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub const DEFAULT_RADIAL_NODES: usize = 64;
pub const DEFAULT_SMIN_FRAC: f64 = 1e-4;

/// Nonnegative weights over `(x0, s0-node, x1, s1-node)`.
#[derive(Debug, Clone)]
pub struct ExtendedPlan {
    ground0: Arc<GroundSet>,
    ground1: Arc<GroundSet>,
    grid0: RadialGrid,
    grid1: RadialGrid,
    p: f64,
    weights: Array4<f64>,
}

impl ExtendedPlan {
    pub fn new(
        ground0: Arc<GroundSet>,
        ground1: Arc<GroundSet>,
        grid0: RadialGrid,
        grid1: RadialGrid,
        p: f64,
        weights: Array4<f64>,
    ) -> Result<Self> {
        check_p(p)?;
        let want = (ground0.len(), grid0.len(), ground1.len(), grid1.len());
        if weights.dim() != want {
            return Err(UotError::Structural(format!(
                "extended plan has shape {:?}, expected {want:?}",
                weights.dim()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(UotError::Input("extended plan weights must be finite and >= 0".into()));
        }
        Ok(ExtendedPlan {
            ground0,
            ground1,
            grid0,
            grid1,
            p,
            weights,
        })
    }

    pub fn zeros(
        ground0: Arc<GroundSet>,
        ground1: Arc<GroundSet>,
        grid0: RadialGrid,
        grid1: RadialGrid,
        p: f64,
    ) -> Result<Self> {
        let dim = (ground0.len(), grid0.len(), ground1.len(), grid1.len());
        Self::new(ground0, ground1, grid0, grid1, p, Array4::zeros(dim))
    }

    pub fn weights(&self) -> &Array4<f64> {
        &self.weights
    }

    pub fn grids(&self) -> (&RadialGrid, &RadialGrid) {
        (&self.grid0, &self.grid1)
    }

    pub fn grounds(&self) -> (&Arc<GroundSet>, &Arc<GroundSet>) {
        (&self.ground0, &self.ground1)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn with_weights(&self, weights: Array4<f64>) -> Result<Self> {
        Self::new(
            self.ground0.clone(),
            self.ground1.clone(),
            self.grid0.clone(),
            self.grid1.clone(),
            self.p,
            weights,
        )
    }

    /// `(H_p, α)` for KL marginal entropies.
    pub fn objective(&self, cost: &CostMatrix) -> Result<f64> {
        cost.check_shape(self.ground0.len(), self.ground1.len())?;
        let mut total = 0.0;
        for ((i, k0, j, k1), &w) in self.weights.indexed_iter() {
            if w > 0.0 {
                let h = perspective_h(
                    EntropyKind::Kl,
                    self.grid0.nodes[k0].powf(self.p),
                    self.grid1.nodes[k1].powf(self.p),
                    cost.get(i, j),
                )?;
                total += w * h;
            }
        }
        Ok(total)
    }

    /// Nonzero atoms as an explicit cloud.
    pub fn to_atoms(&self) -> AtomCloud {
        let atoms = self
            .weights
            .indexed_iter()
            .filter(|(_, &w)| w > 0.0)
            .map(|((i, k0, j, k1), &w)| ExtAtom {
                x0: i,
                s0: self.grid0.nodes[k0],
                x1: j,
                s1: self.grid1.nodes[k1],
                weight: w,
            })
            .collect();
        AtomCloud {
            ground0: self.ground0.clone(),
            ground1: self.ground1.clone(),
            p: self.p,
            atoms,
        }
    }
}

impl Mass for ExtendedPlan {
    fn mass(&self) -> f64 {
        self.weights.sum()
    }
}

/// `𝗁ᵢ^p α`: the `sᵢ^p`-weighted projection onto the `i`-th copy of `X`.
pub fn homogeneous_marginal(alpha: &ExtendedPlan, i: usize) -> DiscreteMeasure {
    let p = alpha.p;
    let (n0, m0, n1, m1) = alpha.weights.dim();
    let w = match i {
        0 => Array1::from_shape_fn(n0, |x| {
            let mut acc = 0.0;
            for k0 in 0..m0 {
                let sp = alpha.grid0.nodes[k0].powf(p);
                if sp == 0.0 {
                    continue;
                }
                let mut row = 0.0;
                for y in 0..n1 {
                    for k1 in 0..m1 {
                        row += alpha.weights[[x, k0, y, k1]];
                    }
                }
                acc += sp * row;
            }
            acc
        }),
        1 => Array1::from_shape_fn(n1, |y| {
            let mut acc = 0.0;
            for k1 in 0..m1 {
                let sp = alpha.grid1.nodes[k1].powf(p);
                if sp == 0.0 {
                    continue;
                }
                let mut col = 0.0;
                for x in 0..n0 {
                    for k0 in 0..m0 {
                        col += alpha.weights[[x, k0, y, k1]];
                    }
                }
                acc += sp * col;
            }
            acc
        }),
        _ => panic!("homogeneous marginal index must be 0 or 1, got {i}"),
    };
    let ground = if i == 0 { &alpha.ground0 } else { &alpha.ground1 };
    DiscreteMeasure::new(ground.clone(), w).expect("nonnegative weights")
}

/// One weighted atom `(x0, s0, x1, s1)` with off-grid radial coordinates allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtAtom {
    pub x0: usize,
    pub s0: f64,
    pub x1: usize,
    pub s1: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct AtomCloud {
    pub ground0: Arc<GroundSet>,
    pub ground1: Arc<GroundSet>,
    pub p: f64,
    pub atoms: Vec<ExtAtom>,
}

impl AtomCloud {
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn objective(&self, cost: &CostMatrix) -> Result<f64> {
        let mut total = 0.0;
        for a in &self.atoms {
            let h = perspective_h(
                EntropyKind::Kl,
                a.s0.powf(self.p),
                a.s1.powf(self.p),
                cost.get(a.x0, a.x1),
            )?;
            total += a.weight * h;
        }
        Ok(total)
    }

    pub fn homogeneous_marginal(&self, i: usize) -> DiscreteMeasure {
        let (ground, n) = if i == 0 {
            (&self.ground0, self.ground0.len())
        } else {
            (&self.ground1, self.ground1.len())
        };
        let mut w = Array1::zeros(n);
        for a in &self.atoms {
            let (x, s) = if i == 0 { (a.x0, a.s0) } else { (a.x1, a.s1) };
            w[x] += a.weight * s.powf(self.p);
        }
        DiscreteMeasure::new(ground.clone(), w).expect("nonnegative weights")
    }

    /// Largest radial coordinate in the cloud.
    pub fn max_radius(&self) -> f64 {
        self.atoms.iter().map(|a| a.s0.max(a.s1)).fold(0.0, f64::max)
    }
}

/// Pushes `α` forward by `(x0, s0, x1, s1) ↦ (x0, s0/θ, x1, s1/θ)` with weight
/// `θ^p`, `θ = (s0^p + s1^p)^{1/p} / s*`, `s* = (𝗁₀α(X) + 𝗁₁α(X))^{1/p}`.
/// Atoms with `s0 = s1 = 0` are dropped. The result is a probability measure
/// supported in `{s0, s1 <= s*}` with the same homogeneous marginals and
/// objective.
pub fn rescale_plan(alpha: &ExtendedPlan) -> AtomCloud {
    rescale_atoms(&alpha.to_atoms())
}

pub fn rescale_atoms(cloud: &AtomCloud) -> AtomCloud {
    let p = cloud.p;
    let total: f64 = cloud
        .atoms
        .iter()
        .map(|a| a.weight * (a.s0.powf(p) + a.s1.powf(p)))
        .sum();
    let s_star = total.powf(1.0 / p);
    let atoms = cloud
        .atoms
        .iter()
        .filter_map(|a| {
            let r = a.s0.powf(p) + a.s1.powf(p);
            if r == 0.0 || a.weight == 0.0 {
                return None;
            }
            let theta = r.powf(1.0 / p) / s_star;
            Some(ExtAtom {
                x0: a.x0,
                s0: a.s0 / theta,
                x1: a.x1,
                s1: a.s1 / theta,
                weight: a.weight * r / total,
            })
        })
        .collect();
    AtomCloud {
        ground0: cloud.ground0.clone(),
        ground1: cloud.ground1.clone(),
        p,
        atoms,
    }
}

/// An atom of a measure on `Y = X × ℝ₊`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeAtom {
    pub x: usize,
    pub s: f64,
    pub weight: f64,
}

/// Ordinary marginals `βᵢ = πᵢ_# α` on `Y` and the coupling value `(H_p, α)`.
pub fn uot_as_ot_decomposition(alpha: &AtomCloud, cost: &CostMatrix) -> Result<(Vec<ConeAtom>, Vec<ConeAtom>, f64)> {
    let collect = |key: &dyn Fn(&ExtAtom) -> (usize, f64)| {
        let mut out: Vec<ConeAtom> = Vec::new();
        for a in &alpha.atoms {
            let (x, s) = key(a);
            match out.iter_mut().find(|c| c.x == x && c.s == s) {
                Some(c) => c.weight += a.weight,
                None => out.push(ConeAtom { x, s, weight: a.weight }),
            }
        }
        out.sort_by(|a, b| a.x.cmp(&b.x).then(a.s.total_cmp(&b.s)));
        out
    };
    let beta0 = collect(&|a| (a.x0, a.s0));
    let beta1 = collect(&|a| (a.x1, a.s1));
    Ok((beta0, beta1, alpha.objective(cost)?))
}

/// Balanced transport between two cone measures with cost `H_p`.
pub fn cone_ot(beta0: &[ConeAtom], beta1: &[ConeAtom], cost: &CostMatrix, p: f64) -> Result<f64> {
    let a = Array1::from_iter(beta0.iter().map(|b| b.weight));
    let b = Array1::from_iter(beta1.iter().map(|b| b.weight));
    let mut c = ndarray::Array2::zeros((beta0.len(), beta1.len()));
    for (i, u) in beta0.iter().enumerate() {
        for (j, v) in beta1.iter().enumerate() {
            c[[i, j]] = perspective_h(EntropyKind::Kl, u.s.powf(p), v.s.powf(p), cost.get(u.x, v.x))?;
        }
    }
    let (_, sol) = transport_lp(&a, &b, &c);
    match sol.status {
        LpStatus::Optimal => Ok(sol.objective),
        s => Err(UotError::Infeasible(format!(
            "cone transport LP ended with status {s:?}"
        ))),
    }
}

/// Constraint form for the unregularised problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalConstraint {
    /// `𝗁ᵢ^p α = μᵢ`.
    Equality,
    /// `𝗁ᵢ^p α <= μᵢ` with the defect charged at `F(0)`.
    Inequality,
}

fn check_instance(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, cost: &CostMatrix, p: f64) -> Result<()> {
    check_p(p)?;
    cost.check_shape(mu0.len(), mu1.len())
}

/// `min (H_p, α)` over grid atoms subject to the homogeneous marginal constraints.
pub fn solve_y_unreg(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    p: f64,
    grids: (&RadialGrid, &RadialGrid),
) -> Result<(ExtendedPlan, SolveReport)> {
    solve_y_unreg_with(mu0, mu1, cost, p, grids, MarginalConstraint::Equality)
}

pub fn solve_y_unreg_with(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    p: f64,
    grids: (&RadialGrid, &RadialGrid),
    constraint: MarginalConstraint,
) -> Result<(ExtendedPlan, SolveReport)> {
    check_instance(mu0, mu1, cost, p)?;
    let (g0, g1) = grids;
    let (n0, n1) = (mu0.len(), mu1.len());
    let w0 = mu0.weights();
    let w1 = mu1.weights();
    let sp0: Vec<f64> = g0.nodes.iter().map(|s| s.powf(p)).collect();
    let sp1: Vec<f64> = g1.nodes.iter().map(|s| s.powf(p)).collect();

    let rhs: Vec<f64> = w0.iter().chain(w1.iter()).copied().collect();
    let mut lp = LinearProgram::new(rhs);
    let mut cells = Vec::new();
    let mut covered = vec![false; n0 + n1];
    for i in 0..n0 {
        for (k0, &a) in sp0.iter().enumerate() {
            if a > 0.0 && w0[i] == 0.0 {
                continue;
            }
            for j in 0..n1 {
                for (k1, &b) in sp1.iter().enumerate() {
                    if (b > 0.0 && w1[j] == 0.0) || (a == 0.0 && b == 0.0) {
                        continue;
                    }
                    let h = perspective_h(EntropyKind::Kl, a, b, cost.get(i, j))?;
                    lp.add_column(h, &[(i, a), (n0 + j, b)]);
                    cells.push((i, k0, j, k1));
                    covered[i] |= a > 0.0;
                    covered[n0 + j] |= b > 0.0;
                }
            }
        }
    }
    if constraint == MarginalConstraint::Inequality {
        for r in 0..n0 + n1 {
            lp.add_column(EntropyKind::Kl.f_at_zero(), &[(r, 1.0)]);
            covered[r] = true;
        }
    }
    for (r, &m) in w0.iter().chain(w1.iter()).enumerate() {
        if m > 0.0 && !covered[r] {
            let (side, x) = if r < n0 { (0, r) } else { (1, r - n0) };
            return Err(UotError::Infeasible(format!(
                "mu{side} has mass at point {x} but the radial grid has no positive node to carry it"
            )));
        }
    }

    let sol = lp.solve();
    if sol.status != LpStatus::Optimal {
        return Err(UotError::Infeasible(format!(
            "extended LP ended with status {:?}",
            sol.status
        )));
    }
    let mut weights = Array4::zeros((n0, g0.len(), n1, g1.len()));
    for &(col, v) in &sol.primal {
        if col < cells.len() {
            weights[cells[col]] = v;
        }
    }
    let plan = ExtendedPlan::new(
        mu0.ground().clone(),
        mu1.ground().clone(),
        g0.clone(),
        g1.clone(),
        p,
        weights,
    )?;
    let dual: f64 = w0.iter().chain(w1.iter()).zip(&sol.duals).map(|(m, y)| m * y).sum();
    let primal = sol.objective;
    Ok((
        plan,
        SolveReport {
            primal,
            dual,
            gap: primal - dual,
            iterations: sol.iterations,
            marginal_residuals: vec![0.0, 0.0],
            converged: true,
        },
    ))
}

/// Uniform probability over the grid atoms with `s0 > 0` and `s1 > 0`.
pub fn default_reference_y(
    ground0: Arc<GroundSet>,
    ground1: Arc<GroundSet>,
    grids: (&RadialGrid, &RadialGrid),
    p: f64,
) -> Result<ExtendedPlan> {
    let (g0, g1) = grids;
    let dim = (ground0.len(), g0.len(), ground1.len(), g1.len());
    let count = dim.0 * (g0.len() - 1) * dim.2 * (g1.len() - 1);
    if count == 0 {
        return Err(UotError::Input("radial grids need a positive node".into()));
    }
    let v = 1.0 / count as f64;
    let w = Array4::from_shape_fn(dim, |(_, k0, _, k1)| if k0 > 0 && k1 > 0 { v } else { 0.0 });
    ExtendedPlan::new(ground0, ground1, g0.clone(), g1.clone(), p, w)
}

/// Grid atom participating in the regularised solve.
struct Atom {
    idx: (usize, usize, usize, usize),
    sp0: f64,
    sp1: f64,
    h: f64,
    log_nu: f64,
}

/// Alternating KL projections for the regularised extended problem.
struct Projections<'a> {
    atoms: Vec<Atom>,
    by_x0: Vec<Vec<usize>>,
    by_x1: Vec<Vec<usize>>,
    mu0: &'a Array1<f64>,
    mu1: &'a Array1<f64>,
    eps: f64,
    lam0: Vec<f64>,
    lam1: Vec<f64>,
}

impl Projections<'_> {
    fn log_alpha(&self, a: &Atom) -> f64 {
        let x0 = a.idx.0;
        let x1 = a.idx.2;
        let mut v = a.log_nu - a.h / self.eps;
        if a.sp0 > 0.0 {
            v += self.lam0[x0] * a.sp0;
        }
        if a.sp1 > 0.0 {
            v += self.lam1[x1] * a.sp1;
        }
        v
    }

    /// Per-point tilts solving `Σ sᵢ^p α e^{λ sᵢ^p} = μᵢ(x)` for side `i`.
    fn project(&mut self, side: usize) {
        let groups = if side == 0 { &self.by_x0 } else { &self.by_x1 };
        let mu = if side == 0 { self.mu0 } else { self.mu1 };
        let lam = if side == 0 { &self.lam0 } else { &self.lam1 };
        let new: Vec<f64> = groups
            .par_iter()
            .enumerate()
            .map(|(x, group)| {
                if mu[x] == 0.0 || group.is_empty() {
                    return f64::NEG_INFINITY;
                }
                // Base log-weights without the current tilt of this side.
                let terms: Vec<(f64, f64)> = group
                    .iter()
                    .map(|&k| {
                        let a = &self.atoms[k];
                        let b = if side == 0 { a.sp0 } else { a.sp1 };
                        (self.log_alpha(a) - lam[x] * b + b.ln(), b)
                    })
                    .collect();
                solve_tilt(&terms, mu[x].ln(), lam[x])
            })
            .collect();
        if side == 0 {
            self.lam0 = new;
        } else {
            self.lam1 = new;
        }
    }

    fn homogeneous(&self, side: usize) -> Vec<f64> {
        let (groups, n) = if side == 0 {
            (&self.by_x0, self.mu0.len())
        } else {
            (&self.by_x1, self.mu1.len())
        };
        (0..n)
            .map(|x| {
                groups[x]
                    .iter()
                    .map(|&k| {
                        let a = &self.atoms[k];
                        let b = if side == 0 { a.sp0 } else { a.sp1 };
                        b * self.log_alpha(a).exp()
                    })
                    .sum()
            })
            .collect()
    }

    fn residual(&self, side: usize) -> f64 {
        let mu = if side == 0 { self.mu0 } else { self.mu1 };
        self.homogeneous(side)
            .iter()
            .zip(mu)
            .map(|(h, m)| (h - m).abs())
            .fold(0.0, f64::max)
    }

    /// `(H_p, α) + ε 𝓕(α | νY)`; `nu_rest` is the reference mass on excluded atoms.
    fn primal(&self, nu_rest: f64) -> f64 {
        let mut total = self.eps * nu_rest;
        for a in &self.atoms {
            let la = self.log_alpha(a);
            let alpha = la.exp();
            let nu = a.log_nu.exp();
            total += alpha * a.h + self.eps * (xlogx_ratio(alpha, nu) - alpha + nu);
        }
        total
    }

    /// `Σ μᵢ uᵢ - ε Σ νY (e^{(u0 s0^p + u1 s1^p - H_p)/ε} - 1)` with `u = ελ`.
    fn dual(&self, nu_rest: f64) -> f64 {
        let mut total = self.eps * nu_rest;
        for (mu, lam) in [(self.mu0, &self.lam0), (self.mu1, &self.lam1)] {
            for (&m, &l) in mu.iter().zip(lam) {
                if m > 0.0 {
                    total += m * self.eps * l;
                }
            }
        }
        for a in &self.atoms {
            let nu = a.log_nu.exp();
            total -= self.eps * (self.log_alpha(a).exp() - nu);
        }
        total
    }
}

/// Root of `λ ↦ LSE_k(a_k + λ b_k) - target` (increasing, convex) by Newton
/// steps safeguarded with bisection; the bracket grows by doubling.
fn solve_tilt(terms: &[(f64, f64)], target: f64, guess: f64) -> f64 {
    let eval = |l: f64| -> (f64, f64) {
        let lse = logsumexp(terms.iter().map(|&(a, b)| a + l * b));
        let d: f64 = terms.iter().map(|&(a, b)| b * (a + l * b - lse).exp()).sum();
        (lse - target, d)
    };
    let start = if guess.is_finite() { guess } else { 0.0 };
    let (g_start, _) = eval(start);
    if g_start == 0.0 {
        return start;
    }
    let (mut lo, mut hi) = (start, start);
    let mut step = 1.0;
    if g_start < 0.0 {
        loop {
            hi = start + step;
            if eval(hi).0 >= 0.0 {
                break;
            }
            lo = hi;
            step *= 2.0;
        }
    } else {
        loop {
            lo = start - step;
            if eval(lo).0 <= 0.0 {
                break;
            }
            hi = lo;
            step *= 2.0;
        }
    }
    let mut l = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (g, d) = eval(l);
        if g.abs() <= 1e-15 {
            return l;
        }
        if g < 0.0 {
            lo = l;
        } else {
            hi = l;
        }
        let newton = l - g / d;
        let next = if newton > lo && newton < hi && d > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if next == l || hi - lo <= 4.0 * f64::EPSILON * l.abs().max(1.0) {
            return next;
        }
        l = next;
    }
    l
}

/// `min (H_p, α) + ε 𝓕_KL(α | νY)` subject to `𝗁ᵢ^p α = μᵢ`.
///
/// Starting from `α = e^{-H_p/ε} νY`, each projection tilts the atoms above a
/// point `xᵢ` by `e^{λ(xᵢ) sᵢ^p}` so that the `i`-th homogeneous marginal is
/// matched exactly. Iteration stops when the other marginal's residual is at
/// most `tolerance·(1 + max μ)`.
pub fn solve_y_eps(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    p: f64,
    grids: (&RadialGrid, &RadialGrid),
    nu_y: Option<&ExtendedPlan>,
    config: &SolverConfig,
) -> Result<(ExtendedPlan, SolveReport)> {
    check_instance(mu0, mu1, cost, p)?;
    config.validate()?;
    let eps = config.eps;
    let (g0, g1) = grids;
    let default_nu;
    let nu = match nu_y {
        Some(n) => {
            if n.grids() != (g0, g1)
                || n.p != p
                || !Arc::ptr_eq(&n.ground0, mu0.ground())
                || !Arc::ptr_eq(&n.ground1, mu1.ground())
            {
                return Err(UotError::Structural(
                    "reference does not match the instance discretisation".into(),
                ));
            }
            n
        }
        None => {
            default_nu = default_reference_y(mu0.ground().clone(), mu1.ground().clone(), grids, p)?;
            &default_nu
        }
    };

    let w0 = mu0.weights();
    let w1 = mu1.weights();
    let (n0, n1) = (mu0.len(), mu1.len());
    let mut atoms = Vec::new();
    let mut by_x0 = vec![Vec::new(); n0];
    let mut by_x1 = vec![Vec::new(); n1];
    let mut nu_rest = 0.0;
    for ((i, k0, j, k1), &v) in nu.weights.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        let sp0 = g0.nodes[k0].powf(p);
        let sp1 = g1.nodes[k1].powf(p);
        if (sp0 > 0.0 && w0[i] == 0.0) || (sp1 > 0.0 && w1[j] == 0.0) {
            nu_rest += v;
            continue;
        }
        let k = atoms.len();
        if sp0 > 0.0 {
            by_x0[i].push(k);
        }
        if sp1 > 0.0 {
            by_x1[j].push(k);
        }
        atoms.push(Atom {
            idx: (i, k0, j, k1),
            sp0,
            sp1,
            h: perspective_h(EntropyKind::Kl, sp0, sp1, cost.get(i, j))?,
            log_nu: v.ln(),
        });
    }
    for (side, (w, groups)) in [(w0, &by_x0), (w1, &by_x1)].into_iter().enumerate() {
        for (x, (&m, g)) in w.iter().zip(groups).enumerate() {
            if m > 0.0 && g.is_empty() {
                return Err(UotError::Infeasible(format!(
                    "mu{side} has mass at point {x} but no reference atom with positive radius sits above it"
                )));
            }
        }
    }

    let mut proj = Projections {
        atoms,
        by_x0,
        by_x1,
        mu0: w0,
        mu1: w1,
        eps,
        lam0: w0
            .iter()
            .map(|&m| if m > 0.0 { 0.0 } else { f64::NEG_INFINITY })
            .collect(),
        lam1: w1
            .iter()
            .map(|&m| if m > 0.0 { 0.0 } else { f64::NEG_INFINITY })
            .collect(),
    };
    let scale = 1.0 + w0.iter().chain(w1.iter()).fold(0.0f64, |a, &b| a.max(b));
    let mut iterations = 0;
    let mut converged = false;
    let mut residual0 = f64::INFINITY;
    while iterations < config.max_iters {
        iterations += 1;
        proj.project(0);
        proj.project(1);
        residual0 = proj.residual(0);
        if residual0 <= config.tolerance * scale {
            converged = true;
            break;
        }
    }
    let residual1 = proj.residual(1);

    let mut weights = Array4::zeros(nu.weights.dim());
    for a in &proj.atoms {
        weights[a.idx] = proj.log_alpha(a).exp();
    }
    let plan = nu.with_weights(weights)?;
    let primal = proj.primal(nu_rest);
    let dual = proj.dual(nu_rest);
    Ok((
        plan,
        SolveReport {
            primal,
            dual,
            gap: primal - dual,
            iterations,
            marginal_residuals: vec![residual0, residual1],
            converged,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::hk_cost;
    use ndarray::array;

    fn single_atom(s0: f64, s1: f64, w: f64, p: f64) -> ExtendedPlan {
        let g = GroundSet::line(1);
        let grid0 = RadialGrid::new(vec![0.0, s0], s0.max(1.0)).unwrap();
        let grid1 = RadialGrid::new(vec![0.0, s1], s1.max(1.0)).unwrap();
        let mut a = Array4::zeros((1, 2, 1, 2));
        a[[0, 1, 0, 1]] = w;
        ExtendedPlan::new(g.clone(), g, grid0, grid1, p, a).unwrap()
    }

    #[test]
    fn homogeneous_marginal_examples() {
        let a = single_atom(1.0, 1.0, 1.0, 1.0);
        assert_eq!(homogeneous_marginal(&a, 0).weights()[0], 1.0);
        let a = single_atom(3.0, 1.0, 2.0, 2.0);
        assert_eq!(homogeneous_marginal(&a, 0).weights()[0], 18.0);

        let g = GroundSet::line(1);
        let grid = RadialGrid::new(vec![0.0, 1.0], 1.0).unwrap();
        let mut w = Array4::zeros((1, 2, 1, 2));
        w[[0, 0, 0, 1]] = 5.0;
        let a = ExtendedPlan::new(g.clone(), g, grid.clone(), grid, 1.0, w).unwrap();
        assert_eq!(homogeneous_marginal(&a, 0).weights()[0], 0.0);
        assert_eq!(homogeneous_marginal(&a, 1).weights()[0], 5.0);
    }

    #[test]
    fn grids_validate() {
        assert!(RadialGrid::new(vec![0.0, 1.0, 1.0], 2.0).is_err());
        assert!(RadialGrid::new(vec![0.5, 1.0], 2.0).is_err());
        assert!(RadialGrid::new(vec![0.0, 3.0], 2.0).is_err());
        let g = RadialGrid::geometric(64, 1e-4, 2.0).unwrap();
        assert_eq!(g.len(), 65);
        assert_eq!(g.nodes()[64], 2.0);
        assert!((g.nodes()[1] - 2e-4).abs() < 1e-16);
    }

    #[test]
    fn coincident_diracs_unreg() {
        let mu = DiscreteMeasure::on_line(&[1.0]).unwrap();
        let c = CostMatrix::custom(array![[0.0]]).unwrap();
        let g = RadialGrid::for_instance(&mu, &mu, 1.0, 16, 1e-3).unwrap();
        let (a, r) = solve_y_unreg(&mu, &mu, &c, 1.0, (&g, &g)).unwrap();
        assert!(r.primal.abs() < 1e-12);
        assert!((homogeneous_marginal(&a, 0).weights()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hk_dirac_pair_unreg() {
        let (m0, m1, d) = (0.6, 1.4, 0.8);
        let mu0 = DiscreteMeasure::on_line(&[m0]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[m1]).unwrap();
        let c = CostMatrix::custom(array![[hk_cost(d)]]).unwrap();
        let g = RadialGrid::for_instance(&mu0, &mu1, 1.0, 128, 1e-4).unwrap();
        let (_, r) = solve_y_unreg(&mu0, &mu1, &c, 1.0, (&g, &g)).unwrap();
        let want = m0 + m1 - 2.0 * (m0 * m1).sqrt() * d.cos();
        assert!(r.primal >= want - 1e-12);
        assert!(r.primal - want < 1e-3);
    }

    #[test]
    fn infeasible_grid_is_reported() {
        let mu = DiscreteMeasure::on_line(&[1.0]).unwrap();
        let c = CostMatrix::custom(array![[0.0]]).unwrap();
        let g = RadialGrid::new(vec![0.0], 0.0).unwrap();
        assert!(matches!(
            solve_y_unreg(&mu, &mu, &c, 1.0, (&g, &g)),
            Err(UotError::Infeasible(_))
        ));
    }

    #[test]
    fn tilt_root_is_exact() {
        let terms = [(0.3f64.ln(), 1.0), (0.2f64.ln() + 2f64.ln(), 2.0)];
        let l = solve_tilt(&terms, 1.5f64.ln(), 0.0);
        let lhs = 0.3 * l.exp() + 2.0 * 0.2 * (2.0 * l).exp();
        assert!((lhs - 1.5).abs() < 1e-13);
    }

    #[test]
    fn projection_matches_marginal_exactly() {
        let mu0 = DiscreteMeasure::on_line(&[0.7, 1.2]).unwrap();
        let mu1 = DiscreteMeasure::on_line(&[0.9, 0.4]).unwrap();
        let c = CostMatrix::squared_euclidean(mu0.ground(), mu1.ground());
        let g = RadialGrid::for_instance(&mu0, &mu1, 1.0, 8, 1e-2).unwrap();
        let cfg = SolverConfig::new(0.5).max_iters(1);
        let (a, r) = solve_y_eps(&mu0, &mu1, &c, 1.0, (&g, &g), None, &cfg).unwrap();
        let h1 = homogeneous_marginal(&a, 1);
        for (x, y) in h1.weights().iter().zip(mu1.weights()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn regularised_value_decreases_with_eps() {
        let mu = DiscreteMeasure::on_line(&[1.0]).unwrap();
        let c = CostMatrix::custom(array![[0.0]]).unwrap();
        let g = RadialGrid::for_instance(&mu, &mu, 1.0, 12, 1e-2).unwrap();
        let solve = |eps: f64| {
            let cfg = SolverConfig::new(eps).tolerance(1e-12).max_iters(100_000);
            solve_y_eps(&mu, &mu, &c, 1.0, (&g, &g), None, &cfg).unwrap().1
        };
        let a = solve(0.5);
        let b = solve(0.1);
        assert!(a.converged && b.converged);
        assert!(b.primal >= 0.0);
        assert!(b.primal <= a.primal + 1e-12);
        assert!(a.gap.abs() < 1e-9);
    }

    #[test]
    fn rescale_examples() {
        // θ = 1 already: s0 + s1 = s* with s* from the plan's own masses.
        let a = single_atom(0.5, 0.5, 1.0, 1.0);
        let r = rescale_plan(&a);
        assert_eq!(r.atoms.len(), 1);
        assert!((r.atoms[0].s0 - 0.5).abs() < 1e-15 && (r.atoms[0].weight - 1.0).abs() < 1e-15);

        let g = GroundSet::line(1);
        let grid = RadialGrid::new(vec![0.0, 1.0], 1.0).unwrap();
        let mut w = Array4::zeros((1, 2, 1, 2));
        w[[0, 0, 0, 0]] = 3.0;
        let a = ExtendedPlan::new(g.clone(), g, grid.clone(), grid, 1.0, w).unwrap();
        assert!(rescale_plan(&a).atoms.is_empty());
    }

    #[test]
    fn decomposition_of_single_atom() {
        let a = single_atom(1.0, 2.0, 0.5, 1.0);
        let c = CostMatrix::custom(array![[0.4]]).unwrap();
        let (b0, b1, v) = uot_as_ot_decomposition(&a.to_atoms(), &c).unwrap();
        assert_eq!(b0.len(), 1);
        assert_eq!(b1[0].s, 2.0);
        let h = perspective_h(EntropyKind::Kl, 1.0, 2.0, 0.4).unwrap();
        assert!((v - 0.5 * h).abs() < 1e-15);
        assert!((cone_ot(&b0, &b1, &c, 1.0).unwrap() - v).abs() < 1e-14);
    }
}
