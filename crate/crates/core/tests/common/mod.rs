//! Independent oracles and instance generators shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uotlab::solver_y::RadialGrid;
use uotlab::{CostMatrix, DiscreteMeasure, GroundSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` distinct random points in `[0, 1]^dim`.
pub fn random_ground(rng: &mut impl Rng, n: usize, dim: usize) -> Arc<GroundSet> {
    loop {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
            .collect();
        if let Ok(g) = GroundSet::new(pts) {
            return g;
        }
    }
}

pub fn random_measure(rng: &mut impl Rng, ground: &Arc<GroundSet>, lo: f64, hi: f64) -> DiscreteMeasure {
    let w: Vec<f64> = (0..ground.len()).map(|_| rng.random_range(lo..hi)).collect();
    DiscreteMeasure::new(ground.clone(), w).unwrap()
}

pub struct Instance {
    pub mu0: DiscreteMeasure,
    pub mu1: DiscreteMeasure,
    pub cost: CostMatrix,
}

/// Random `n0 x n1` instance on `[0,1]^dim` with squared Euclidean cost.
pub fn random_instance(rng: &mut impl Rng, n0: usize, n1: usize, dim: usize) -> Instance {
    let g0 = random_ground(rng, n0, dim);
    let g1 = random_ground(rng, n1, dim);
    let mu0 = random_measure(rng, &g0, 0.2, 2.0);
    let mu1 = random_measure(rng, &g1, 0.2, 2.0);
    let cost = CostMatrix::squared_euclidean(&g0, &g1);
    Instance { mu0, mu1, cost }
}

pub fn kl_f(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        s * s.ln() - s + 1.0
    }
}

/// `Σ ref·F(m/ref)` for KL with strictly positive references.
pub fn kl(m: &[f64], reference: &[f64]) -> f64 {
    m.iter().zip(reference).map(|(&a, &b)| b * kl_f(a / b)).sum()
}

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..400 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    f(0.5 * (lo + hi)).min(fa).min(fb)
}

/// `inf_{t >= 0} t c + t R(s0/t) + t R(s1/t) + ε t R(S/t)` with `R(s) = s - log s - 1`,
/// by one-dimensional search in `log t`.
pub fn h_eps_by_definition(s0: f64, s1: f64, big_s: f64, c: f64, eps: f64) -> f64 {
    let tr = |s: f64, t: f64| s - t * (s / t).ln() - t;
    let obj = |u: f64| {
        let t = u.exp();
        t * c + tr(s0, t) + tr(s1, t) + eps * tr(big_s, t)
    };
    let scale = s0.max(s1).max(big_s);
    let interior = golden_min(obj, scale.ln() - 60.0, scale.ln() + 5.0);
    interior.min(s0 + s1 + eps * big_s)
}

/// Closed-form unbalanced HK distance between two Diracs.
pub fn hk_dirac(m0: f64, m1: f64, d: f64) -> f64 {
    m0 + m1 - 2.0 * (m0 * m1).sqrt() * d.cos()
}

/// Balanced OT between two 2-point measures of equal mass, by enumerating the
/// endpoints of the one-parameter family of feasible plans.
pub fn classical_ot_2x2(a: [f64; 2], b: [f64; 2], c: &Array2<f64>) -> f64 {
    let plan_cost = |t: f64| {
        let g = [[t, a[0] - t], [b[0] - t, a[1] - b[0] + t]];
        (0..2)
            .map(|i| (0..2).map(|j| g[i][j] * c[[i, j]]).sum::<f64>())
            .sum::<f64>()
    };
    let lo = 0.0f64.max(b[0] - a[1]);
    let hi = a[0].min(b[0]);
    plan_cost(lo).min(plan_cost(hi))
}

/// Projected gradient descent with Barzilai-Borwein steps and an Armijo
/// safeguard for a smooth convex `f` on the box `x >= lower`.
pub fn projected_gradient(
    f: impl Fn(&[f64]) -> f64,
    grad: impl Fn(&[f64]) -> Vec<f64>,
    mut x: Vec<f64>,
    lower: f64,
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let project = |v: &mut Vec<f64>| v.iter_mut().for_each(|t| *t = t.max(lower));
    project(&mut x);
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut step = 1e-2;
    for _ in 0..max_iters {
        let mut tau = step;
        let (mut y, mut fy);
        loop {
            y = x.iter().zip(&g).map(|(a, b)| a - tau * b).collect::<Vec<_>>();
            project(&mut y);
            fy = f(&y);
            let decrease: f64 = x.iter().zip(&y).zip(&g).map(|((a, b), d)| d * (a - b)).sum();
            if fy.is_finite() && fy <= fx - 1e-4 * decrease {
                break;
            }
            tau *= 0.5;
            if tau < 1e-30 {
                return (x, fx);
            }
        }
        let gy = grad(&y);
        let s: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let r: Vec<f64> = gy.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sr: f64 = s.iter().zip(&r).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sr > 0.0 {
            (ss / sr).clamp(1e-12, 1e6)
        } else {
            tau * 2.0
        };
        let moved = ss.sqrt();
        x = y;
        fx = fy;
        g = gy;
        if moved < 1e-15 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
    }
    (x, fx)
}

/// Original-space regularised objective `(c,γ) + KL(γ₀|μ0) + KL(γ₁|μ1) + ε KL(γ|ν)`
/// minimised over `γ >= 0` by projected gradient.
pub fn x_eps_oracle(mu0: &[f64], mu1: &[f64], c: &Array2<f64>, nu: &Array2<f64>, eps: f64) -> f64 {
    let (n0, n1) = c.dim();
    let value = |g: &[f64]| {
        let mut r0 = vec![0.0; n0];
        let mut r1 = vec![0.0; n1];
        let mut total = 0.0;
        for i in 0..n0 {
            for j in 0..n1 {
                let v = g[i * n1 + j];
                r0[i] += v;
                r1[j] += v;
                total += v * c[[i, j]] + eps * nu[[i, j]] * kl_f(v / nu[[i, j]]);
            }
        }
        total + kl(&r0, mu0) + kl(&r1, mu1)
    };
    let grad = |g: &[f64]| {
        let mut r0 = vec![0.0; n0];
        let mut r1 = vec![0.0; n1];
        for i in 0..n0 {
            for j in 0..n1 {
                r0[i] += g[i * n1 + j];
                r1[j] += g[i * n1 + j];
            }
        }
        let mut out = vec![0.0; n0 * n1];
        for i in 0..n0 {
            for j in 0..n1 {
                let v = g[i * n1 + j];
                out[i * n1 + j] =
                    c[[i, j]] + (r0[i] / mu0[i]).ln() + (r1[j] / mu1[j]).ln() + eps * (v / nu[[i, j]]).ln();
            }
        }
        out
    };
    let start = nu.iter().copied().collect();
    projected_gradient(value, grad, start, 1e-300, 200_000).1
}

/// Extended-space regularised problem on fixed radial grids, solved through
/// its concave dual in `(u0, u1)` by the same gradient routine:
/// `max Σ μ0 u0 + Σ μ1 u1 - ε Σ ν (exp((u0 s0^p + u1 s1^p - H)/ε) - 1)`,
/// with `H = s0^p + s1^p - 2 (s0^p s1^p)^{1/2} e^{-c/2}` and `ν` the uniform
/// probability over atoms with both radii positive.
pub fn y_eps_oracle(mu0: &[f64], mu1: &[f64], c: &Array2<f64>, nodes: &[f64], p: f64, eps: f64) -> f64 {
    let (n0, n1) = c.dim();
    let pos: Vec<f64> = nodes.iter().copied().filter(|&s| s > 0.0).map(|s| s.powf(p)).collect();
    let nu = 1.0 / (n0 * n1 * pos.len() * pos.len()) as f64;
    let mut atoms = Vec::new();
    for i in 0..n0 {
        for j in 0..n1 {
            for &a in &pos {
                for &b in &pos {
                    let h = a + b - 2.0 * (a * b).sqrt() * (-c[[i, j]] / 2.0).exp();
                    atoms.push((i, j, a, b, h));
                }
            }
        }
    }
    let neg_dual = |u: &[f64]| {
        let lin: f64 = mu0.iter().zip(&u[..n0]).map(|(m, v)| m * v).sum::<f64>()
            + mu1.iter().zip(&u[n0..]).map(|(m, v)| m * v).sum::<f64>();
        let reg: f64 = atoms
            .iter()
            .map(|&(i, j, a, b, h)| nu * ((u[i] * a + u[n0 + j] * b - h) / eps).exp_m1())
            .sum();
        -(lin - eps * reg)
    };
    let grad = |u: &[f64]| {
        let mut g = vec![0.0; n0 + n1];
        for (k, m) in mu0.iter().chain(mu1).enumerate() {
            g[k] = -m;
        }
        for &(i, j, a, b, h) in &atoms {
            let e = nu * ((u[i] * a + u[n0 + j] * b - h) / eps).exp();
            g[i] += e * a;
            g[n0 + j] += e * b;
        }
        g
    };
    let (_, v) = projected_gradient(neg_dual, grad, vec![0.0; n0 + n1], f64::NEG_INFINITY, 200_000);
    -v
}

/// The geometric grid used by the Y-solver tests (positive nodes plus 0).
pub fn grid_for(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, p: f64, n: usize) -> RadialGrid {
    RadialGrid::for_instance(mu0, mu1, p, n, uotlab::solver_y::DEFAULT_SMIN_FRAC).unwrap()
}
