//! Ground costs and the marginal perspective cost functions built on them.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::entropy::EntropyKind;
use crate::error::{Result, UotError};
use crate::measures::{read_json_file, GroundSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostProvenance {
    SquaredEuclidean,
    HellingerKantorovich,
    Custom,
}

/// Extended-real cost over pairs of support points; entries are `>= 0` or `+∞`.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    values: Array2<f64>,
    provenance: CostProvenance,
}

impl CostMatrix {
    pub fn custom(values: Array2<f64>) -> Result<Self> {
        for ((i, j), &v) in values.indexed_iter() {
            if v.is_nan() || v < 0.0 {
                return Err(UotError::Input(format!(
                    "cost entry ({i},{j}) = {v} is negative or NaN"
                )));
            }
        }
        Ok(CostMatrix {
            values,
            provenance: CostProvenance::Custom,
        })
    }

    pub fn squared_euclidean(rows: &GroundSet, cols: &GroundSet) -> Self {
        let values = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| {
            let d = GroundSet::distance(&rows.points()[i], &cols.points()[j]);
            d * d
        });
        CostMatrix {
            values,
            provenance: CostProvenance::SquaredEuclidean,
        }
    }

    /// `-log cos² d` on Euclidean distances, `+∞` beyond `π/2`.
    pub fn hellinger_kantorovich(rows: &GroundSet, cols: &GroundSet) -> Self {
        let values = Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| {
            hk_cost(GroundSet::distance(&rows.points()[i], &cols.points()[j]))
        });
        CostMatrix {
            values,
            provenance: CostProvenance::HellingerKantorovich,
        }
    }

    /// Reads `{ "rows", "cols", "weights" }` where `null` entries stand for `+∞`.
    pub fn read_json(path: &Path) -> Result<Self> {
        let file: CostFile = read_json_file(path)?;
        let origin = path.display().to_string();
        if file.weights.len() != file.rows {
            return Err(UotError::Input(format!(
                "{origin}: field \"weights\" has {} rows, \"rows\" says {}",
                file.weights.len(),
                file.rows
            )));
        }
        let mut values = Array2::zeros((file.rows, file.cols));
        for (i, row) in file.weights.iter().enumerate() {
            if row.len() != file.cols {
                return Err(UotError::Input(format!(
                    "{origin}: weights row {i} has {} entries, \"cols\" says {}",
                    row.len(),
                    file.cols
                )));
            }
            for (j, v) in row.iter().enumerate() {
                values[[i, j]] = v.unwrap_or(f64::INFINITY);
            }
        }
        Self::custom(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn provenance(&self) -> CostProvenance {
        self.provenance
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub(crate) fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.shape() != (rows, cols) {
            return Err(UotError::Structural(format!(
                "cost is {:?} but the measures have {rows} x {cols} atoms",
                self.shape()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    rows: usize,
    cols: usize,
    weights: Vec<Vec<Option<f64>>>,
}

/// Hellinger–Kantorovich ground cost `-log(cos² d)` for `d < π/2`, else `+∞`.
pub fn hk_cost(d: f64) -> f64 {
    debug_assert!(d >= 0.0, "distance must be nonnegative");
    if d >= FRAC_PI_2 {
        f64::INFINITY
    } else {
        -2.0 * d.cos().ln()
    }
}

fn check_radial(args: &[(&str, f64)]) -> Result<()> {
    for &(name, v) in args {
        if v.is_nan() || v < 0.0 {
            return Err(UotError::Domain(format!("{name} must be >= 0, got {v}")));
        }
    }
    Ok(())
}

/// Marginal perspective cost `H(s0, s1; c)`.
///
/// For KL this is `s0 + s1 - 2√(s0 s1)·e^{-c/2}`; an infinite cost removes the
/// transport term entirely. The balanced kind charges `a·c` on the diagonal
/// `s0 = s1 = a` and `+∞` off it.
pub fn perspective_h(kind: EntropyKind, s0: f64, s1: f64, c: f64) -> Result<f64> {
    check_radial(&[("s0", s0), ("s1", s1), ("c", c)])?;
    Ok(match kind {
        EntropyKind::Kl => {
            if c.is_infinite() || s0 == 0.0 || s1 == 0.0 {
                s0 + s1
            } else {
                s0 + s1 - 2.0 * (s0 * s1).sqrt() * (-0.5 * c).exp()
            }
        }
        EntropyKind::Balanced => {
            if s0 != s1 {
                f64::INFINITY
            } else if s0 == 0.0 {
                0.0
            } else {
                s0 * c
            }
        }
    })
}

/// Regularised perspective cost (KL), closed form
/// `s0 + s1 + εS - (2+ε)(s0 s1)^{1/(2+ε)} S^{ε/(2+ε)} e^{-c/(2+ε)}`.
///
/// The product term is taken as 0 whenever one of its bases is 0 or `c = +∞`.
pub fn perspective_h_eps(s0: f64, s1: f64, big_s: f64, c: f64, eps: f64) -> Result<f64> {
    check_radial(&[("s0", s0), ("s1", s1), ("S", big_s), ("c", c)])?;
    if !(eps > 0.0) {
        return Err(UotError::Domain(format!("eps must be > 0, got {eps}")));
    }
    let linear = s0 + s1 + eps * big_s;
    if s0 == 0.0 || s1 == 0.0 || big_s == 0.0 || c.is_infinite() {
        return Ok(linear);
    }
    let k = 2.0 + eps;
    let log_term = (s0.ln() + s1.ln() + eps * big_s.ln() - c) / k;
    Ok(linear - k * log_term.exp())
}

/// Regularised perspective cost with sharp marginal entropies:
/// `a·c + ε a R(S/a)` on `s0 = s1 = a`, `+∞` elsewhere.
pub fn balanced_h_eps(s0: f64, s1: f64, big_s: f64, c: f64, eps: f64) -> Result<f64> {
    check_radial(&[("s0", s0), ("s1", s1), ("S", big_s), ("c", c)])?;
    if s0 != s1 {
        return Ok(f64::INFINITY);
    }
    let a = s0;
    if a == 0.0 {
        // t·R(S/t) as t -> 0 tends to S·R'_∞ = S.
        return Ok(eps * big_s);
    }
    let transport = if c.is_infinite() { f64::INFINITY } else { a * c };
    Ok(transport + eps * a * EntropyKind::Kl.r(big_s / a)?)
}

/// `H_p(x0, s0, x1, s1) = H(s0^p, s1^p; c(x0, x1))`.
pub fn perspective_h_p(
    kind: EntropyKind,
    x0: usize,
    s0: f64,
    x1: usize,
    s1: f64,
    cost: &CostMatrix,
    p: f64,
) -> Result<f64> {
    check_p(p)?;
    perspective_h(kind, s0.powf(p), s1.powf(p), cost.get(x0, x1))
}

/// `H^ε_p(x0, s0, x1, s1, S) = H_ε(s0^p, s1^p, S^p; c(x0, x1))`.
#[allow(clippy::too_many_arguments)]
pub fn perspective_h_p_eps(
    x0: usize,
    s0: f64,
    x1: usize,
    s1: f64,
    big_s: f64,
    cost: &CostMatrix,
    p: f64,
    eps: f64,
) -> Result<f64> {
    check_p(p)?;
    perspective_h_eps(s0.powf(p), s1.powf(p), big_s.powf(p), cost.get(x0, x1), eps)
}

pub(crate) fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(UotError::Domain(format!("p must be a positive finite number, got {p}")));
    }
    Ok(())
}

/// Second-order perspective `H̃`: `w·H` when the two density coordinates agree
/// exactly, `+∞` otherwise.
pub fn second_order_h_tilde(s0: f64, s1: f64, w0: f64, w1: f64, h_value: f64) -> f64 {
    debug_assert!(s0 >= 0.0 && s1 >= 0.0 && w0 >= 0.0 && w1 >= 0.0);
    if w0 != w1 {
        f64::INFINITY
    } else if w0 == 0.0 {
        0.0
    } else {
        w0 * h_value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, LN_2};

    const KL: EntropyKind = EntropyKind::Kl;

    /// Golden-section minimum of a convex function on `[lo, hi]`.
    fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut a = hi - g * (hi - lo);
        let mut b = lo + g * (hi - lo);
        let (mut fa, mut fb) = (f(a), f(b));
        for _ in 0..300 {
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

    /// `inf_{t>=0} t·(R(s0/t) + R(s1/t) + εR(S/t) + c)` by direct minimisation;
    /// `eps = 0` drops the `S` term. The value at `t = 0` is the limit
    /// `s0 + s1 + εS`.
    fn h_by_definition(s0: f64, s1: f64, big_s: f64, c: f64, eps: f64) -> f64 {
        let r = |s: f64, t: f64| t * KL.r(s / t).unwrap();
        let obj = |t: f64| {
            let reg = if eps == 0.0 { 0.0 } else { eps * r(big_s, t) };
            r(s0, t) + r(s1, t) + reg + c * t
        };
        let interior = golden_min(obj, 1e-12, 10.0 * s0.max(s1).max(big_s).max(1.0));
        interior.min(s0 + s1 + eps * big_s)
    }

    #[test]
    fn hk_cost_values() {
        assert_eq!(hk_cost(0.0), 0.0);
        assert!((hk_cost(FRAC_PI_4) - LN_2).abs() < 1e-14);
        assert_eq!(hk_cost(FRAC_PI_2), f64::INFINITY);
    }

    #[test]
    fn h_values() {
        assert_eq!(perspective_h(KL, 1.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(perspective_h(KL, 1.0, 0.0, 3.7).unwrap(), 1.0);
        let want = 2.0 - 2.0 * (-1f64).exp();
        assert!((perspective_h(KL, 1.0, 1.0, 2.0).unwrap() - want).abs() < 1e-15);
        assert!((want - 1.2642411).abs() < 1e-7);
        assert!((h_by_definition(1.0, 1.0, 0.0, 2.0, 0.0) - want).abs() < 1e-7);
        assert!(perspective_h(KL, -1.0, 1.0, 0.0).is_err());
        assert_eq!(perspective_h(KL, 2.0, 3.0, f64::INFINITY).unwrap(), 5.0);
    }

    #[test]
    fn balanced_h() {
        let b = EntropyKind::Balanced;
        assert_eq!(perspective_h(b, 2.0, 2.0, 1.5).unwrap(), 3.0);
        assert_eq!(perspective_h(b, 2.0, 1.0, 1.5).unwrap(), f64::INFINITY);
    }

    #[test]
    fn h_eps_values() {
        assert!(perspective_h_eps(1.0, 1.0, 1.0, 0.0, 1.0).unwrap().abs() < 1e-15);
        assert_eq!(perspective_h_eps(1.5, 0.5, 0.0, 0.3, 0.7).unwrap(), 2.0);
        let want = 3.0 - 3.0 * (-1f64).exp();
        let got = perspective_h_eps(1.0, 1.0, 1.0, 3.0, 1.0).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((want - 1.8963617).abs() < 1e-7);
        assert!((h_by_definition(1.0, 1.0, 1.0, 3.0, 1.0) - want).abs() < 1e-7);
        assert!(perspective_h_eps(1.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(perspective_h_eps(1.0, -1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn h_eps_one_side_zero_is_the_small_t_limit() {
        let v = perspective_h_eps(0.0, 2.0, 1.5, 0.4, 0.5).unwrap();
        assert_eq!(v, 2.0 + 0.5 * 1.5);
        assert!((h_by_definition(0.0, 2.0, 1.5, 0.4, 0.5) - v).abs() < 1e-7);
    }

    #[test]
    fn h_p_examples() {
        let cost = CostMatrix::custom(ndarray::array![[0.0, 0.7], [0.7, 0.0]]).unwrap();
        let a = perspective_h_p(KL, 0, 1.3, 1, 0.6, &cost, 1.0).unwrap();
        assert_eq!(a, perspective_h(KL, 1.3, 0.6, 0.7).unwrap());
        let b = perspective_h_p(KL, 0, 1.0, 1, 1.0, &cost, 2.0).unwrap();
        assert_eq!(b, perspective_h_p(KL, 0, 1.0, 1, 1.0, &cost, 1.0).unwrap());
        assert!((perspective_h_p(KL, 0, 2.0, 0, 1.0, &cost, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(perspective_h_p(KL, 0, 1.0, 0, 1.0, &cost, 0.0).is_err());
    }

    #[test]
    fn h_tilde() {
        assert_eq!(second_order_h_tilde(1.0, 2.0, 1.0, 1.0, 0.3), 0.3);
        assert_eq!(second_order_h_tilde(1.0, 2.0, 2.0, 2.0, 3.0), 6.0);
        assert_eq!(second_order_h_tilde(1.0, 2.0, 1.0, 2.0, 3.0), f64::INFINITY);
    }

    #[test]
    fn h_eps_tends_to_h() {
        let (s0, s1, c) = (1.7, 0.4, 0.9);
        let h = perspective_h(KL, s0, s1, c).unwrap();
        let big_s = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let eps = 10f64.powi(-k);
            let err = (perspective_h_eps(s0, s1, big_s, c, eps).unwrap() - h).abs();
            assert!(err <= prev, "not monotone at eps = {eps}");
            prev = err;
        }
        assert!(prev < 1e-5);
    }

    #[test]
    fn balanced_h_eps_vanishes_on_s_equals_big_s_at_zero_cost() {
        assert_eq!(balanced_h_eps(0.7, 0.7, 0.7, 0.0, 0.3).unwrap(), 0.0);
        assert_eq!(balanced_h_eps(0.7, 0.6, 0.7, 0.0, 0.3).unwrap(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn h_is_one_homogeneous(s0 in 0.0f64..5.0, s1 in 0.0f64..5.0, c in 0.0f64..5.0, lam in 0.01f64..20.0) {
            let a = perspective_h(KL, lam * s0, lam * s1, c).unwrap();
            let b = lam * perspective_h(KL, s0, s1, c).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }

        #[test]
        fn h_eps_is_one_homogeneous(s0 in 0.0f64..5.0, s1 in 0.0f64..5.0, big_s in 0.0f64..5.0,
                                     c in 0.0f64..5.0, eps in 0.01f64..2.0, lam in 0.01f64..20.0) {
            let a = perspective_h_eps(lam * s0, lam * s1, lam * big_s, c, eps).unwrap();
            let b = lam * perspective_h_eps(s0, s1, big_s, c, eps).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }

        #[test]
        fn closed_form_matches_definition(s0 in 0.1f64..5.0, s1 in 0.1f64..5.0, big_s in 0.1f64..5.0,
                                          c in 0.0f64..5.0, eps in 0.01f64..2.0) {
            let closed = perspective_h_eps(s0, s1, big_s, c, eps).unwrap();
            prop_assert!((closed - h_by_definition(s0, s1, big_s, c, eps)).abs() <= 1e-7);
        }

        #[test]
        fn hk_dirac_formula(m0 in 0.01f64..5.0, m1 in 0.01f64..5.0, d in 0.0f64..1.5) {
            let got = perspective_h(KL, m0, m1, hk_cost(d)).unwrap();
            let want = m0 + m1 - 2.0 * (m0 * m1).sqrt() * d.cos();
            prop_assert!((got - want).abs() <= 1e-12 * (m0 + m1));
        }
    }
}
