//! Lifted formulations solved as linear programs over grid atoms.
//!
//! * balanced transport lifted to `X² × ℝ₊` with cost `s^p c`;
//! * the balanced entropic problem lifted to `X² × ℝ₊²` with cost
//!   `s^p c + ε s^p R(S^p / s^p)`;
//! * the extended form of the original-space regularised problem over
//!   `(x0, s0, x1, s1, S)` with cost `H^ε_p`;
//! * the second-order lift over `(x0, x1, s0, s1, w)` with cost `w H_p`.
//!
//! All objectives are linear in the lifted measure, so each is a single LP.

use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::costs::{balanced_h_eps, check_p, perspective_h, perspective_h_eps, second_order_h_tilde, CostMatrix};
use crate::entropy::EntropyKind;
use crate::error::{Result, UotError};
use crate::lp::{LinearProgram, LpSolution, LpStatus};
use crate::measures::{DiscreteMeasure, GroundSet, Mass, Plan};
use crate::solver_y::RadialGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftOutcome {
    pub status: LiftStatus,
    #[serde(with = "crate::numeric::extended")]
    pub value: f64,
    pub lp_iterations: usize,
}

impl LiftOutcome {
    fn from_lp(sol: &LpSolution) -> Result<Self> {
        match sol.status {
            LpStatus::Optimal => Ok(LiftOutcome {
                status: LiftStatus::Optimal,
                value: sol.objective,
                lp_iterations: sol.iterations,
            }),
            LpStatus::Infeasible => Ok(LiftOutcome {
                status: LiftStatus::Infeasible,
                value: f64::INFINITY,
                lp_iterations: sol.iterations,
            }),
            s => Err(UotError::Infeasible(format!("lifted LP ended with status {s:?}"))),
        }
    }
}

/// One atom `(x0, s0, x1, s1, S)` of a triple radial plan, by grid index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripleAtom {
    pub x0: usize,
    pub k0: usize,
    pub x1: usize,
    pub k1: usize,
    pub ks: usize,
    pub weight: f64,
}

/// Sparse nonnegative measure on `(x0, s0, x1, s1, S)` grid atoms.
#[derive(Debug, Clone)]
pub struct TripleRadialPlan {
    ground0: Arc<GroundSet>,
    ground1: Arc<GroundSet>,
    grids: [RadialGrid; 3],
    p: f64,
    atoms: Vec<TripleAtom>,
}

impl TripleRadialPlan {
    pub fn new(
        ground0: Arc<GroundSet>,
        ground1: Arc<GroundSet>,
        grids: [RadialGrid; 3],
        p: f64,
        atoms: Vec<TripleAtom>,
    ) -> Result<Self> {
        check_p(p)?;
        for a in &atoms {
            if a.x0 >= ground0.len()
                || a.x1 >= ground1.len()
                || a.k0 >= grids[0].len()
                || a.k1 >= grids[1].len()
                || a.ks >= grids[2].len()
            {
                return Err(UotError::Structural(format!("atom {a:?} is out of range")));
            }
            if !(a.weight >= 0.0 && a.weight.is_finite()) {
                return Err(UotError::Input(format!(
                    "atom weight must be finite and >= 0, got {}",
                    a.weight
                )));
            }
        }
        Ok(TripleRadialPlan {
            ground0,
            ground1,
            grids,
            p,
            atoms,
        })
    }

    pub fn atoms(&self) -> &[TripleAtom] {
        &self.atoms
    }

    pub fn grids(&self) -> &[RadialGrid; 3] {
        &self.grids
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    fn radii(&self, a: &TripleAtom) -> (f64, f64, f64) {
        (
            self.grids[0].nodes()[a.k0],
            self.grids[1].nodes()[a.k1],
            self.grids[2].nodes()[a.ks],
        )
    }

    /// `𝗁ᵢ^p η`.
    pub fn homogeneous_marginal(&self, i: usize) -> DiscreteMeasure {
        let (ground, n) = if i == 0 {
            (&self.ground0, self.ground0.len())
        } else {
            (&self.ground1, self.ground1.len())
        };
        let mut w = ndarray::Array1::zeros(n);
        for a in &self.atoms {
            let (s0, s1, _) = self.radii(a);
            let (x, s) = if i == 0 { (a.x0, s0) } else { (a.x1, s1) };
            w[x] += a.weight * s.powf(self.p);
        }
        DiscreteMeasure::new(ground.clone(), w).expect("nonnegative")
    }

    /// `(H^ε_p, η)`.
    pub fn objective(&self, cost: &CostMatrix, eps: f64) -> Result<f64> {
        let mut total = 0.0;
        for a in &self.atoms {
            let (s0, s1, s) = self.radii(a);
            let p = self.p;
            total += a.weight * perspective_h_eps(s0.powf(p), s1.powf(p), s.powf(p), cost.get(a.x0, a.x1), eps)?;
        }
        Ok(total)
    }

    pub fn to_cloud(&self) -> TripleCloud {
        TripleCloud {
            p: self.p,
            atoms: self
                .atoms
                .iter()
                .map(|a| {
                    let (s0, s1, s) = self.radii(a);
                    TriplePoint {
                        x0: a.x0,
                        s0,
                        x1: a.x1,
                        s1,
                        s,
                        weight: a.weight,
                    }
                })
                .collect(),
        }
    }
}

/// `𝖧^p η = π^{(x0,x1)}_# (S^p η)`.
#[allow(non_snake_case)]
pub fn H_marginal(eta: &TripleRadialPlan) -> Plan {
    let mut w = Array2::zeros((eta.ground0.len(), eta.ground1.len()));
    for a in &eta.atoms {
        let (_, _, s) = eta.radii(a);
        w[[a.x0, a.x1]] += a.weight * s.powf(eta.p);
    }
    Plan::new(eta.ground0.clone(), eta.ground1.clone(), w).expect("nonnegative")
}

/// Off-grid atom of a pushed-forward triple plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriplePoint {
    pub x0: usize,
    pub s0: f64,
    pub x1: usize,
    pub s1: f64,
    pub s: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleCloud {
    pub p: f64,
    pub atoms: Vec<TriplePoint>,
}

impl TripleCloud {
    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn objective(&self, cost: &CostMatrix, eps: f64) -> Result<f64> {
        let p = self.p;
        let mut total = 0.0;
        for a in &self.atoms {
            total += a.weight * perspective_h_eps(a.s0.powf(p), a.s1.powf(p), a.s.powf(p), cost.get(a.x0, a.x1), eps)?;
        }
        Ok(total)
    }

    /// Homogeneous marginals `(𝗁₀^p, 𝗁₁^p)` as raw weights and `𝖧^p` as a matrix.
    pub fn marginals(&self, n0: usize, n1: usize) -> (Vec<f64>, Vec<f64>, Array2<f64>) {
        let p = self.p;
        let mut h0 = vec![0.0; n0];
        let mut h1 = vec![0.0; n1];
        let mut big = Array2::zeros((n0, n1));
        for a in &self.atoms {
            h0[a.x0] += a.weight * a.s0.powf(p);
            h1[a.x1] += a.weight * a.s1.powf(p);
            big[[a.x0, a.x1]] += a.weight * a.s.powf(p);
        }
        (h0, h1, big)
    }
}

/// Pushes `η` forward by `prd_θ` with `θ = (s0^p + s1^p + S^p)^{1/p} / s*`,
/// `s* = (𝗁₀η(X) + 𝗁₁η(X) + νX(X²))^{1/p}`, weight `θ^p`; atoms with
/// `s0 = s1 = S = 0` are dropped.
pub fn rescale_triple(eta: &TripleCloud, nu_mass: f64) -> TripleCloud {
    let p = eta.p;
    let hom: f64 = eta.atoms.iter().map(|a| a.weight * (a.s0.powf(p) + a.s1.powf(p))).sum();
    let star_p = hom + nu_mass;
    let atoms = eta
        .atoms
        .iter()
        .filter_map(|a| {
            let r = a.s0.powf(p) + a.s1.powf(p) + a.s.powf(p);
            if r == 0.0 || a.weight == 0.0 {
                return None;
            }
            let theta = (r / star_p).powf(1.0 / p);
            Some(TriplePoint {
                x0: a.x0,
                s0: a.s0 / theta,
                x1: a.x1,
                s1: a.s1 / theta,
                s: a.s / theta,
                weight: a.weight * r / star_p,
            })
        })
        .collect();
    TripleCloud { p, atoms }
}

fn check_instance(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, cost: &CostMatrix, p: f64) -> Result<()> {
    check_p(p)?;
    cost.check_shape(mu0.len(), mu1.len())
}

fn check_reference(nu: &Plan, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Result<()> {
    if !nu.spans(mu0, mu1) {
        return Err(UotError::Structural(
            "reference plan is not built on the grounds of mu0 and mu1".into(),
        ));
    }
    Ok(())
}

/// Balanced transport as `min Σ s^p c β` over `β` on `X² × ℝ₊` with
/// `π^{xᵢ}_# (s^p β) = μᵢ`.
pub fn solve_lifted_balanced(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    p: f64,
    grid: &RadialGrid,
) -> Result<LiftOutcome> {
    check_instance(mu0, mu1, cost, p)?;
    let (n0, n1) = (mu0.len(), mu1.len());
    let rhs: Vec<f64> = mu0.weights().iter().chain(mu1.weights().iter()).copied().collect();
    let mut lp = LinearProgram::new(rhs);
    for i in 0..n0 {
        for j in 0..n1 {
            let c = cost.get(i, j);
            if c.is_infinite() {
                continue;
            }
            for &s in grid.nodes() {
                let sp = s.powf(p);
                if sp > 0.0 {
                    lp.add_column(sp * c, &[(i, sp), (n0 + j, sp)]);
                }
            }
        }
    }
    LiftOutcome::from_lp(&lp.solve())
}

/// Balanced entropic transport lifted to `(x0, x1, s, S)` atoms with cost
/// `s^p c + ε s^p R(S^p/s^p)` and constraints `π^{xᵢ}_# (s^p β) = μᵢ`,
/// `π^{(x0,x1)}_# (S^p β) = νX`.
#[allow(clippy::too_many_arguments)]
pub fn solve_lifted_balanced_eps(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    nu: &Plan,
    p: f64,
    grids: (&RadialGrid, &RadialGrid),
    eps: f64,
) -> Result<LiftOutcome> {
    check_instance(mu0, mu1, cost, p)?;
    check_reference(nu, mu0, mu1)?;
    let (n0, n1) = (mu0.len(), mu1.len());
    let (gs, gbig) = grids;
    let rhs: Vec<f64> = mu0
        .weights()
        .iter()
        .chain(mu1.weights().iter())
        .chain(nu.weights().iter())
        .copied()
        .collect();
    let mut lp = LinearProgram::new(rhs);
    for i in 0..n0 {
        for j in 0..n1 {
            let c = cost.get(i, j);
            let r = n0 + n1 + i * n1 + j;
            for &s in gs.nodes() {
                let sp = s.powf(p);
                if sp > 0.0 && c.is_infinite() {
                    continue;
                }
                for &big in gbig.nodes() {
                    let bp = big.powf(p);
                    if sp == 0.0 && bp == 0.0 {
                        continue;
                    }
                    let h = balanced_h_eps(sp, sp, bp, c, eps)?;
                    if h.is_finite() {
                        lp.add_column(h, &[(i, sp), (n0 + j, sp), (r, bp)]);
                    }
                }
            }
        }
    }
    LiftOutcome::from_lp(&lp.solve())
}

/// Constraint form for [`solve_x_extended`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtendedConstraint {
    Equality,
    /// Constraints as `<=` with defects charged at `F(0)`.
    Inequality,
}

/// `min (H^ε_p, η)` over `(x0, s0, x1, s1, S)` grid atoms subject to
/// `𝗁ᵢ^p η = μᵢ` and `𝖧^p η = νX`.
#[allow(clippy::too_many_arguments)]
pub fn solve_x_extended(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    nu: &Plan,
    eps: f64,
    p: f64,
    grids: [&RadialGrid; 3],
    constraint: ExtendedConstraint,
) -> Result<(TripleRadialPlan, f64)> {
    check_instance(mu0, mu1, cost, p)?;
    check_reference(nu, mu0, mu1)?;
    if !(eps > 0.0) {
        return Err(UotError::Input(format!("eps must be > 0, got {eps}")));
    }
    let (n0, n1) = (mu0.len(), mu1.len());
    let pw = |g: &RadialGrid| -> Vec<f64> { g.nodes().iter().map(|s| s.powf(p)).collect() };
    let (sp0, sp1, spb) = (pw(grids[0]), pw(grids[1]), pw(grids[2]));
    let (w0, w1, wn) = (mu0.weights(), mu1.weights(), nu.weights());

    let rhs: Vec<f64> = w0.iter().chain(w1.iter()).chain(wn.iter()).copied().collect();
    let n_rows = rhs.len();
    let mut lp = LinearProgram::new(rhs);
    let mut cells = Vec::new();
    for i in 0..n0 {
        for j in 0..n1 {
            let c = cost.get(i, j);
            let r = n0 + n1 + i * n1 + j;
            for (k0, &a) in sp0.iter().enumerate() {
                if a > 0.0 && w0[i] == 0.0 {
                    continue;
                }
                for (k1, &b) in sp1.iter().enumerate() {
                    if b > 0.0 && w1[j] == 0.0 {
                        continue;
                    }
                    for (ks, &s) in spb.iter().enumerate() {
                        if (s > 0.0 && wn[[i, j]] == 0.0) || (a == 0.0 && b == 0.0 && s == 0.0) {
                            continue;
                        }
                        let h = perspective_h_eps(a, b, s, c, eps)?;
                        lp.add_column(h, &[(i, a), (n0 + j, b), (r, s)]);
                        cells.push((i, k0, j, k1, ks));
                    }
                }
            }
        }
    }
    if constraint == ExtendedConstraint::Inequality {
        for row in 0..n_rows {
            lp.add_column(EntropyKind::Kl.f_at_zero(), &[(row, 1.0)]);
        }
    }
    let sol = lp.solve();
    if sol.status != LpStatus::Optimal {
        return Err(UotError::Infeasible(format!(
            "extended LP ended with status {:?}; the radial grids cannot carry the marginals",
            sol.status
        )));
    }
    let atoms = sol
        .primal
        .iter()
        .filter(|(col, _)| *col < cells.len())
        .map(|&(col, weight)| {
            let (x0, k0, x1, k1, ks) = cells[col];
            TripleAtom {
                x0,
                k0,
                x1,
                k1,
                ks,
                weight,
            }
        })
        .collect();
    let plan = TripleRadialPlan::new(
        mu0.ground().clone(),
        mu1.ground().clone(),
        [grids[0].clone(), grids[1].clone(), grids[2].clone()],
        p,
        atoms,
    )?;
    Ok((plan, sol.objective))
}

/// Radial grids for [`solve_x_extended`]. `H^ε_p` is jointly 1-homogeneous in
/// `(s0^p, s1^p, S^p)`, so the `S` grid is `{0, 1}` and the `sᵢ` grids carry the
/// ratios: geometric with `n` nodes up to `sᵢ^p = max μᵢ(x)/νX(x, y)`, the
/// largest ratio an optimal atom can need, down to `smin_frac` of that.
pub fn default_extended_grids(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    nu: &Plan,
    p: f64,
    n: usize,
    smin_frac: f64,
) -> Result<[RadialGrid; 3]> {
    check_p(p)?;
    check_reference(nu, mu0, mu1)?;
    let cap = |mu: &DiscreteMeasure, side: usize| -> f64 {
        let mut best = 0.0f64;
        for ((i, j), &v) in nu.weights().indexed_iter() {
            if v > 0.0 {
                let m = mu.weights()[if side == 0 { i } else { j }];
                best = best.max(m / v);
            }
        }
        if best > 0.0 {
            best.powf(1.0 / p)
        } else {
            1.0
        }
    };
    Ok([
        RadialGrid::geometric(n, smin_frac, cap(mu0, 0))?,
        RadialGrid::geometric(n, smin_frac, cap(mu1, 1))?,
        RadialGrid::new(vec![0.0, 1.0], 1.0)?,
    ])
}

/// Radial grids `(s, S)` for [`solve_lifted_balanced_eps`]: `S ∈ {0, 1}` and a
/// geometric `s` grid up to `s^p = max min(μ0(x), μ1(y))/νX(x, y)`.
pub fn default_balanced_eps_grids(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    nu: &Plan,
    p: f64,
    n: usize,
    smin_frac: f64,
) -> Result<(RadialGrid, RadialGrid)> {
    check_p(p)?;
    check_reference(nu, mu0, mu1)?;
    let mut best = 0.0f64;
    for ((i, j), &v) in nu.weights().indexed_iter() {
        if v > 0.0 {
            best = best.max(mu0.weights()[i].min(mu1.weights()[j]) / v);
        }
    }
    let cap = if best > 0.0 { best.powf(1.0 / p) } else { 1.0 };
    Ok((
        RadialGrid::geometric(n, smin_frac, cap)?,
        RadialGrid::new(vec![0.0, 1.0], 1.0)?,
    ))
}

/// Second-order lift: `min Σ w H_p ξ` over `(x0, x1, s0, s1, w)` atoms with
/// `π^{xᵢ}_# (sᵢ^p w ξ) = μᵢ`. Only atoms with equal density coordinates
/// `w0 = w1 = w` are generated; see [`solve_second_order_lift_full`].
pub fn solve_second_order_lift(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    p: f64,
    grids: (&RadialGrid, &RadialGrid, &RadialGrid),
) -> Result<LiftOutcome> {
    second_order(mu0, mu1, cost, p, grids, false)
}

/// Second-order lift over independent `(w0, w1)` density coordinates with the
/// cost `H̃`, which is `+∞` off `w0 = w1`; those atoms are never selected.
pub fn solve_second_order_lift_full(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    p: f64,
    grids: (&RadialGrid, &RadialGrid, &RadialGrid),
) -> Result<LiftOutcome> {
    second_order(mu0, mu1, cost, p, grids, true)
}

fn second_order(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    cost: &CostMatrix,
    p: f64,
    grids: (&RadialGrid, &RadialGrid, &RadialGrid),
    full: bool,
) -> Result<LiftOutcome> {
    check_instance(mu0, mu1, cost, p)?;
    let (n0, n1) = (mu0.len(), mu1.len());
    let (g0, g1, gw) = grids;
    let (w0, w1) = (mu0.weights(), mu1.weights());
    let rhs: Vec<f64> = w0.iter().chain(w1.iter()).copied().collect();
    let mut lp = LinearProgram::new(rhs);
    let mut covered = vec![false; n0 + n1];
    let ws: Vec<f64> = gw.nodes().iter().copied().filter(|&w| w > 0.0).collect();
    let pairs: Vec<(f64, f64)> = if full {
        ws.iter().flat_map(|&a| ws.iter().map(move |&b| (a, b))).collect()
    } else {
        ws.iter().map(|&w| (w, w)).collect()
    };
    for i in 0..n0 {
        for &s0 in g0.nodes() {
            let a = s0.powf(p);
            if a > 0.0 && w0[i] == 0.0 {
                continue;
            }
            for j in 0..n1 {
                for &s1 in g1.nodes() {
                    let b = s1.powf(p);
                    if (b > 0.0 && w1[j] == 0.0) || (a == 0.0 && b == 0.0) {
                        continue;
                    }
                    let h = perspective_h(EntropyKind::Kl, a, b, cost.get(i, j))?;
                    for &(wa, wb) in &pairs {
                        let c = second_order_h_tilde(s0, s1, wa, wb, h);
                        if c.is_finite() {
                            lp.add_column(c, &[(i, a * wa), (n0 + j, b * wb)]);
                            covered[i] |= a > 0.0;
                            covered[n0 + j] |= b > 0.0;
                        }
                    }
                }
            }
        }
    }
    for (r, &m) in w0.iter().chain(w1.iter()).enumerate() {
        if m > 0.0 && !covered[r] {
            return Err(UotError::Infeasible(format!(
                "no lifted atom can carry the mass of row {r}"
            )));
        }
    }
    LiftOutcome::from_lp(&lp.solve())
}

/// Residual of `π^i_# (𝖧^p η) = μ_j(X) 𝗁ᵢ^p η` for a product reference.
pub fn product_reference_residual(eta: &TripleRadialPlan, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> f64 {
    let big = H_marginal(eta);
    let h0 = eta.homogeneous_marginal(0);
    let h1 = eta.homogeneous_marginal(1);
    let rows = big.weights().sum_axis(ndarray::Axis(1));
    let cols = big.weights().sum_axis(ndarray::Axis(0));
    let r0 = rows
        .iter()
        .zip(h0.weights())
        .map(|(a, b)| (a - mu1.mass() * b).abs())
        .fold(0.0, f64::max);
    let r1 = cols
        .iter()
        .zip(h1.weights())
        .map(|(a, b)| (a - mu0.mass() * b).abs())
        .fold(0.0, f64::max);
    r0.max(r1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::product;
    use ndarray::array;

    fn unit() -> (DiscreteMeasure, CostMatrix) {
        (
            DiscreteMeasure::on_line(&[1.0]).unwrap(),
            CostMatrix::custom(array![[0.0]]).unwrap(),
        )
    }

    fn grid(nodes: &[f64]) -> RadialGrid {
        let cap = nodes.iter().copied().fold(0.0, f64::max);
        RadialGrid::new(nodes.to_vec(), cap).unwrap()
    }

    #[test]
    fn h_marginal_examples() {
        let g = GroundSet::line(1);
        let grids = [grid(&[0.0, 1.0]), grid(&[0.0, 1.0]), grid(&[0.0, 1.0, 2.0])];
        let atom = |ks, weight| TripleAtom {
            x0: 0,
            k0: 1,
            x1: 0,
            k1: 1,
            ks,
            weight,
        };
        let eta = TripleRadialPlan::new(g.clone(), g.clone(), grids.clone(), 1.0, vec![atom(1, 1.0)]).unwrap();
        assert_eq!(H_marginal(&eta).weights()[[0, 0]], 1.0);
        let eta = TripleRadialPlan::new(g.clone(), g.clone(), grids.clone(), 1.0, vec![atom(0, 4.0)]).unwrap();
        assert_eq!(H_marginal(&eta).weights()[[0, 0]], 0.0);
        let eta = TripleRadialPlan::new(g.clone(), g, grids, 1.0, vec![atom(2, 3.0)]).unwrap();
        assert_eq!(H_marginal(&eta).weights()[[0, 0]], 6.0);
    }

    #[test]
    fn lifted_balanced_examples() {
        let (mu, c) = unit();
        let g = grid(&[0.0, 0.5, 1.0]);
        let out = solve_lifted_balanced(&mu, &mu, &c, 1.0, &g).unwrap();
        assert_eq!(out.status, LiftStatus::Optimal);
        assert!(out.value.abs() < 1e-15);
        let mu1 = DiscreteMeasure::on_line(&[2.0]).unwrap();
        let out = solve_lifted_balanced(&mu, &mu1, &c, 1.0, &g).unwrap();
        assert_eq!(out.status, LiftStatus::Infeasible);
        assert_eq!(out.value, f64::INFINITY);
    }

    #[test]
    fn balanced_eps_zero_cost_on_diagonal() {
        let (mu, c) = unit();
        let nu = product(&mu, &mu);
        let g = grid(&[0.0, 1.0]);
        let out = solve_lifted_balanced_eps(&mu, &mu, &c, &nu, 1.0, (&g, &g), 0.3).unwrap();
        assert!(out.value.abs() < 1e-15);
    }

    #[test]
    fn x_extended_coincident_diracs() {
        let (mu, c) = unit();
        let nu = product(&mu, &mu);
        let g = grid(&[0.0, 0.5, 1.0]);
        let (eta, v) =
            solve_x_extended(&mu, &mu, &c, &nu, 0.4, 1.0, [&g, &g, &g], ExtendedConstraint::Equality).unwrap();
        assert!(v.abs() < 1e-14);
        assert!((eta.objective(&c, 0.4).unwrap() - v).abs() < 1e-14);
        assert!(product_reference_residual(&eta, &mu, &mu) < 1e-14);
    }

    #[test]
    fn second_order_coincident_diracs() {
        let (mu, c) = unit();
        let g = grid(&[0.0, 0.5, 1.0]);
        let out = solve_second_order_lift(&mu, &mu, &c, 1.0, (&g, &g, &g)).unwrap();
        assert!(out.value.abs() < 1e-15);
    }

    #[test]
    fn rescale_triple_keeps_unit_support() {
        let cloud = TripleCloud {
            p: 1.0,
            atoms: vec![TriplePoint {
                x0: 0,
                s0: 1.0,
                x1: 0,
                s1: 1.0,
                s: 1.0,
                weight: 1.0,
            }],
        };
        // s* = (1 + 1 + 1)^{1} = 3 = s0 + s1 + S, so θ = 1.
        let r = rescale_triple(&cloud, 1.0);
        assert_eq!(r, cloud);
    }
}
