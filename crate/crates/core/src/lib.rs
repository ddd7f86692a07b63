//! Entropy-regularised unbalanced optimal transport on finitely supported
//! measures.
//!
//! The crate implements original-space and extended-space regularisation of
//! unbalanced transport with KL marginal penalties, their unregularised
//! limits, lifted formulations used to cross-check the solvers, and the value
//! identities between common balanced entropic transport conventions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod costs;
pub mod entropy;
pub mod error;
pub mod identities;
pub mod lifting;
pub mod lp;
pub mod measures;
pub(crate) mod numeric;
pub mod solver_x;
pub mod solver_y;

pub use costs::{hk_cost, perspective_h, perspective_h_eps, CostMatrix};
pub use entropy::{divergence, EntropyKind};
pub use error::{Result, UotError};
pub use measures::{DiscreteMeasure, GroundSet, Mass, Plan};
pub use solver_x::{solve_x_eps, solve_x_unreg, DualPotentials, SolveReport, SolverConfig, XProblem};
