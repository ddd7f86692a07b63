//! Entropy functions, their reverse entropies and Legendre conjugates, and the
//! divergence functional between discrete measures.
//!
//! Two kinds ship: Kullback–Leibler, `F(s) = s log s - s + 1`, and the sharp
//! "balanced" entropy which is `0` at `s = 1` and `+∞` elsewhere. Values are
//! extended reals represented as `f64` with `+∞` allowed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};
use crate::measures::{split_weights, DiscreteMeasure, Plan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyKind {
    Kl,
    Balanced,
}

impl fmt::Display for EntropyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntropyKind::Kl => write!(f, "kl"),
            EntropyKind::Balanced => write!(f, "balanced"),
        }
    }
}

impl FromStr for EntropyKind {
    type Err = UotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(EntropyKind::Kl),
            "balanced" => Ok(EntropyKind::Balanced),
            other => Err(UotError::Input(format!(
                "unknown entropy {other:?}, expected kl or balanced"
            ))),
        }
    }
}

/// `s log s` with the convention `0 log 0 = 0`.
pub(crate) fn xlogx(s: f64) -> f64 {
    if s == 0.0 {
        0.0
    } else {
        s * s.ln()
    }
}

fn check_nonneg(what: &str, s: f64) -> Result<()> {
    if s.is_nan() || s < 0.0 {
        return Err(UotError::Domain(format!("{what} requires s >= 0, got {s}")));
    }
    Ok(())
}

impl EntropyKind {
    /// Entropy function `F(s)`.
    pub fn f(self, s: f64) -> Result<f64> {
        check_nonneg("F", s)?;
        Ok(match self {
            EntropyKind::Kl => xlogx(s) - s + 1.0,
            EntropyKind::Balanced => sharp(s),
        })
    }

    /// `F(0)`.
    pub fn f_at_zero(self) -> f64 {
        match self {
            EntropyKind::Kl => 1.0,
            EntropyKind::Balanced => f64::INFINITY,
        }
    }

    /// Recession constant `F'_∞ = lim F(s)/s`.
    pub fn recession(self) -> f64 {
        f64::INFINITY
    }

    /// Reverse entropy `R(s) = s F(1/s)`, with `R(0) = F'_∞`.
    pub fn r(self, s: f64) -> Result<f64> {
        check_nonneg("R", s)?;
        if s == 0.0 {
            return Ok(self.recession());
        }
        Ok(match self {
            EntropyKind::Kl => s - s.ln() - 1.0,
            EntropyKind::Balanced => sharp(s),
        })
    }

    /// Recession constant of the reverse entropy, `R'_∞ = F(0)`.
    pub fn r_recession(self) -> f64 {
        self.f_at_zero()
    }

    /// Conjugate `F*(φ) = sup_{s>0} sφ - F(s)`.
    pub fn legendre_f(self, phi: f64) -> f64 {
        match self {
            EntropyKind::Kl => phi.exp_m1(),
            EntropyKind::Balanced => phi,
        }
    }

    /// Conjugate of the reverse entropy, `R*(ψ)`.
    pub fn legendre_r(self, psi: f64) -> f64 {
        match self {
            EntropyKind::Kl => {
                if psi >= 1.0 {
                    f64::INFINITY
                } else {
                    -(-psi).ln_1p()
                }
            }
            EntropyKind::Balanced => psi,
        }
    }

    /// `F(σ)·r` for a reference weight `r > 0`; the building block of the
    /// divergence.
    fn weighted(self, sigma: f64, r: f64) -> f64 {
        match self {
            EntropyKind::Kl => {
                let m = sigma * r;
                xlogx_ratio(m, r) - m + r
            }
            EntropyKind::Balanced => sharp(sigma) * r,
        }
    }
}

fn sharp(s: f64) -> f64 {
    if s == 1.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// `m log(m / r)` with `0 log 0 = 0`; `r > 0`.
pub(crate) fn xlogx_ratio(m: f64, r: f64) -> f64 {
    if m == 0.0 {
        0.0
    } else {
        m * (m / r).ln()
    }
}

/// Divergence over raw weight slices of equal length.
pub(crate) fn divergence_weights(kind: EntropyKind, measure: &[f64], reference: &[f64]) -> f64 {
    let (density, singular) = split_weights(measure, reference);
    let mut total = 0.0;
    for ((&sigma, &r), &sing) in density.iter().zip(reference).zip(&singular) {
        if r > 0.0 {
            total += kind.weighted(sigma, r);
        }
        if sing > 0.0 {
            total += kind.recession() * sing;
        }
    }
    total
}

/// `𝓕(measure | reference)`: `Σ F(σ)·reference + F'_∞ · singular mass`.
pub fn divergence(kind: EntropyKind, measure: &DiscreteMeasure, reference: &DiscreteMeasure) -> Result<f64> {
    if !measure.same_ground(reference) {
        return Err(UotError::Structural(
            "divergence: measure and reference live on different ground sets".into(),
        ));
    }
    Ok(divergence_weights(
        kind,
        measure.weights().as_slice().expect("contiguous"),
        reference.weights().as_slice().expect("contiguous"),
    ))
}

/// Divergence between two plans over the same pair of grounds.
pub fn plan_divergence(kind: EntropyKind, plan: &Plan, reference: &Plan) -> Result<f64> {
    if !plan.same_grounds(reference) {
        return Err(UotError::Structural(
            "plan_divergence: plans live on different ground sets".into(),
        ));
    }
    let a: Vec<f64> = plan.weights().iter().copied().collect();
    let b: Vec<f64> = reference.weights().iter().copied().collect();
    Ok(divergence_weights(kind, &a, &b))
}
