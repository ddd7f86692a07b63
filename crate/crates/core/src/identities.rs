//! Three conventions for balanced entropic transport between probability
//! measures on a uniform grid in ℝᵈ, with quadratic cost `c = |x - y|²`:
//!
//! ```text
//! W1(ε) = min (c, γ) + ε H(γ)               H(γ) = Σ γ log(γ / vol²)
//! W2(ε) = min (c, γ) + ε Σ γ log(γ / μ⊗ν)
//! W3(ε) = min ε Σ γ log(γ / K)              K = (2πε)^{-d/2} e^{-c/(2ε)} vol²
//! ```
//!
//! At any coupling the objectives differ by constants, so
//! `W2(ε) = W1(ε) - ε(H(μ) + H(ν))` and `W3(ε) = ½ W1(2ε) + (dε/2) log(2πε)`,
//! and the minimisers coincide.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costs::CostMatrix;
use crate::entropy::{xlogx_ratio, EntropyKind};
use crate::error::{Result, UotError};
use crate::measures::{DiscreteMeasure, GroundSet, Mass, Plan};
use crate::solver_x::{Stabilization, XProblem, XSinkhorn};

/// A probability measure on the cell centres of a uniform grid over `[0, 1]^d`.
#[derive(Debug, Clone)]
pub struct GridMeasure {
    measure: DiscreteMeasure,
    cells_per_dim: usize,
    dim: usize,
}

impl GridMeasure {
    /// Ground set of `n^d` cell centres of side `1/n`.
    pub fn ground(n: usize, dim: usize) -> Result<Arc<GroundSet>> {
        if n == 0 || dim == 0 {
            return Err(UotError::Input("grid needs n >= 1 cells per axis and d >= 1".into()));
        }
        let total = n
            .checked_pow(dim as u32)
            .filter(|&t| t <= 1 << 16)
            .ok_or_else(|| UotError::Input(format!("grid {n}^{dim} is too large")))?;
        let h = 1.0 / n as f64;
        let points = (0..total)
            .map(|mut k| {
                (0..dim)
                    .map(|_| {
                        let idx = k % n;
                        k /= n;
                        (idx as f64 + 0.5) * h
                    })
                    .collect()
            })
            .collect();
        GroundSet::new(points)
    }

    pub fn new(ground: Arc<GroundSet>, cells_per_dim: usize, weights: Vec<f64>) -> Result<Self> {
        let dim = ground.dim();
        if cells_per_dim.pow(dim as u32) != ground.len() {
            return Err(UotError::Structural("ground is not a full grid".into()));
        }
        let measure = DiscreteMeasure::new(ground, weights)?;
        if (measure.mass() - 1.0).abs() > 1e-12 {
            return Err(UotError::Input(format!(
                "grid measure must have mass 1, got {}",
                measure.mass()
            )));
        }
        Ok(GridMeasure {
            measure,
            cells_per_dim,
            dim,
        })
    }

    pub fn uniform(ground: Arc<GroundSet>, cells_per_dim: usize) -> Result<Self> {
        let n = ground.len();
        Self::new(ground, cells_per_dim, vec![1.0 / n as f64; n])
    }

    /// Weights drawn uniformly from `[0.1, 1]` and normalised.
    pub fn random(ground: Arc<GroundSet>, cells_per_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let w: Vec<f64> = (0..ground.len()).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        Self::new(ground, cells_per_dim, w.into_iter().map(|v| v / total).collect())
    }

    pub fn measure(&self) -> &DiscreteMeasure {
        &self.measure
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_volume(&self) -> f64 {
        (1.0 / self.cells_per_dim as f64).powi(self.dim as i32)
    }

    /// `H(μ) = Σ μ log(μ / vol)` over `μ > 0`.
    pub fn entropy(&self) -> f64 {
        let vol = self.cell_volume();
        self.measure.weights().iter().map(|&m| xlogx_ratio(m, vol)).sum()
    }
}

/// Random pair of grid measures from a seed.
pub fn random_pair(n: usize, dim: usize, seed: u64) -> Result<(GridMeasure, GridMeasure)> {
    let ground = GridMeasure::ground(n, dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = GridMeasure::random(ground.clone(), n, &mut rng)?;
    let nu = GridMeasure::random(ground, n, &mut rng)?;
    Ok((mu, nu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Lebesgue,
    Product,
    HeatKernel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropicValue {
    pub value: f64,
    pub iterations: usize,
    pub marginal_residual: f64,
    pub converged: bool,
}

const SINKHORN_TOL: f64 = 1e-14;
const SINKHORN_MAX_ITERS: usize = 200_000;

fn check_pair(mu: &GridMeasure, nu: &GridMeasure, eps: f64) -> Result<()> {
    if !mu.measure.same_ground(&nu.measure) {
        return Err(UotError::Structural("mu and nu must share one grid".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(UotError::Input(format!("eps must be > 0, got {eps}")));
    }
    Ok(())
}

/// Solves one convention and returns its value and optimal plan.
pub fn w_eps(mu: &GridMeasure, nu: &GridMeasure, eps: f64, convention: Convention) -> Result<(EntropicValue, Plan)> {
    check_pair(mu, nu, eps)?;
    let a = &mu.measure;
    let b = &nu.measure;
    let c = CostMatrix::squared_euclidean(a.ground(), b.ground());
    let vol2 = mu.cell_volume() * nu.cell_volume();
    let shape = (a.len(), b.len());
    let (kernel_cost, reference) = match convention {
        Convention::Lebesgue => (c.values().clone(), Array2::from_elem(shape, vol2)),
        Convention::Product => (
            c.values().clone(),
            Array2::from_shape_fn(shape, |(i, j)| a.weights()[i] * b.weights()[j]),
        ),
        Convention::HeatKernel => {
            let scale = (2.0 * std::f64::consts::PI * eps).powf(-(mu.dim() as f64) / 2.0);
            (c.values() / 2.0, Array2::from_elem(shape, scale * vol2))
        }
    };
    let nu_plan = Plan::new(a.ground().clone(), b.ground().clone(), reference.clone())?;
    let prob = XProblem::new(a.clone(), b.clone(), CostMatrix::custom(kernel_cost.clone())?, nu_plan)?;
    let mut sk = XSinkhorn::new(&prob, EntropyKind::Balanced, eps, Stabilization::LogDomain);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut previous = f64::INFINITY;
    let mut stalled = 0;
    while iterations < SINKHORN_MAX_ITERS {
        sk.update_first();
        sk.update_second();
        iterations += 1;
        let gamma = sk.plan();
        residual = sk.marginal_residuals(&gamma, &sk.potentials())[0];
        if residual <= SINKHORN_TOL {
            break;
        }
        // Round-off floor: stop once the residual no longer improves.
        stalled = if residual >= previous { stalled + 1 } else { 0 };
        if stalled >= 20 && residual <= 1e-12 {
            break;
        }
        previous = residual;
    }
    let gamma = sk.plan();
    let mut value = 0.0;
    for ((i, j), &g) in gamma.weights().indexed_iter() {
        if g > 0.0 {
            value += g * kernel_cost[[i, j]] + eps * xlogx_ratio(g, reference[[i, j]]);
        }
    }
    Ok((
        EntropicValue {
            value,
            iterations,
            marginal_residual: residual,
            converged: residual <= 1e-12,
        },
        gamma,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub eps: f64,
    pub dim: usize,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w1_double_eps: f64,
    pub entropy_mu: f64,
    pub entropy_nu: f64,
    /// `|W2(ε) - (W1(ε) - ε(H(μ) + H(ν)))|`.
    pub residual_product: f64,
    /// `|W3(ε) - (½ W1(2ε) + (dε/2) log(2πε))|`.
    pub residual_heat: f64,
    /// `max |γ1(ε) - γ2(ε)|`.
    pub plan_residual_product: f64,
    /// `max |γ3(ε) - γ1(2ε)|`.
    pub plan_residual_heat: f64,
    pub converged: bool,
}

fn max_abs_diff(a: &Plan, b: &Plan) -> f64 {
    a.weights()
        .iter()
        .zip(b.weights().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Solves the four problems and reports value and plan residuals.
pub fn verify_identities(mu: &GridMeasure, nu: &GridMeasure, eps: f64) -> Result<IdentityReport> {
    let (w1, g1) = w_eps(mu, nu, eps, Convention::Lebesgue)?;
    let (w2, g2) = w_eps(mu, nu, eps, Convention::Product)?;
    let (w3, g3) = w_eps(mu, nu, eps, Convention::HeatKernel)?;
    let (w1d, g1d) = w_eps(mu, nu, 2.0 * eps, Convention::Lebesgue)?;
    let d = mu.dim() as f64;
    let (h_mu, h_nu) = (mu.entropy(), nu.entropy());
    let shift = 0.5 * d * eps * (2.0 * std::f64::consts::PI * eps).ln();
    Ok(IdentityReport {
        eps,
        dim: mu.dim(),
        w1: w1.value,
        w2: w2.value,
        w3: w3.value,
        w1_double_eps: w1d.value,
        entropy_mu: h_mu,
        entropy_nu: h_nu,
        residual_product: (w2.value - (w1.value - eps * (h_mu + h_nu))).abs(),
        residual_heat: (w3.value - (0.5 * w1d.value + shift)).abs(),
        plan_residual_product: max_abs_diff(&g1, &g2),
        plan_residual_heat: max_abs_diff(&g3, &g1d),
        converged: w1.converged && w2.converged && w3.converged && w1d.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_layout() {
        let g = GridMeasure::ground(4, 2).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g.points()[0], vec![0.125, 0.125]);
        assert_eq!(g.points()[5], vec![0.375, 0.375]);
    }

    #[test]
    fn single_cell_product_value_is_zero() {
        let g = GridMeasure::ground(1, 1).unwrap();
        let m = GridMeasure::uniform(g, 1).unwrap();
        let (v, plan) = w_eps(&m, &m, 0.5, Convention::Product).unwrap();
        assert!(v.value.abs() < 1e-15);
        assert!((plan.weights()[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_entropy_is_minus_log_volume_weighted() {
        let g = GridMeasure::ground(8, 1).unwrap();
        let m = GridMeasure::uniform(g, 8).unwrap();
        // Density is 1 everywhere on [0, 1].
        assert!(m.entropy().abs() < 1e-15);
        let r = verify_identities(&m, &m, 0.2).unwrap();
        assert!(r.residual_product < 1e-9 && r.residual_heat < 1e-9);
    }

    #[test]
    fn heat_shift_at_unit_eps() {
        let (mu, nu) = random_pair(8, 1, 3).unwrap();
        let r = verify_identities(&mu, &nu, 1.0).unwrap();
        let shift = 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((r.w3 - 0.5 * r.w1_double_eps - shift).abs() < 1e-9);
    }

    #[test]
    fn mismatched_grounds_rejected() {
        let a = GridMeasure::uniform(GridMeasure::ground(2, 1).unwrap(), 2).unwrap();
        let b = GridMeasure::uniform(GridMeasure::ground(2, 1).unwrap(), 2).unwrap();
        assert!(matches!(verify_identities(&a, &b, 0.2), Err(UotError::Structural(_))));
    }
}
