//! C bindings for `uotlab`.
//!
//! Measures cross the boundary as opaque [`UotMeasure`] handles. Every entry
//! point returns a [`UotStatus`]; on failure a description is available from
//! [`uot_last_error_message`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use uotlab::solver_y::{solve_y_unreg, RadialGrid, DEFAULT_SMIN_FRAC};
use uotlab::{
    hk_cost, perspective_h_eps, solve_x_eps, CostMatrix, DiscreteMeasure, EntropyKind, GroundSet, Mass, SolverConfig,
    UotError, XProblem,
};

/// Status codes returned by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UotStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Structural = 3,
    Infeasible = 4,
    InvalidInput = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UotCost {
    SquaredEuclidean = 0,
    HellingerKantorovich = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UotEntropy {
    Kl = 0,
    Balanced = 1,
}

/// Summary of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct UotReport {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub iterations: u64,
    /// Largest marginal residual over both sides.
    pub marginal_residual: f64,
    pub converged: bool,
}

/// Opaque handle to a finitely supported nonnegative measure.
pub struct UotMeasure {
    inner: DiscreteMeasure,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &UotError) -> UotStatus {
    match err {
        UotError::Domain(_) => UotStatus::Domain,
        UotError::Structural(_) => UotStatus::Structural,
        UotError::Infeasible(_) => UotStatus::Infeasible,
        UotError::Input(_) | UotError::Parse { .. } => UotStatus::InvalidInput,
        UotError::Io { .. } => UotStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(UotError),
}

impl From<UotError> for Failure {
    fn from(e: UotError) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UotStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_error(format!("null pointer passed for `{name}`"));
            UotStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            UotStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

fn cost_matrix(kind: UotCost, mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> CostMatrix {
    match kind {
        UotCost::SquaredEuclidean => CostMatrix::squared_euclidean(mu0.ground(), mu1.ground()),
        UotCost::HellingerKantorovich => CostMatrix::hellinger_kantorovich(mu0.ground(), mu1.ground()),
    }
}

/// Message for the last failing call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn uot_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a measure from `n` points of dimension `dim` (row-major) and `n` weights.
///
/// # Safety
/// `points` must hold `n * dim` doubles, `weights` must hold `n` doubles and
/// `out_measure` must be writable. Free the handle with [`uot_measure_free`].
#[no_mangle]
pub unsafe extern "C" fn uot_measure_new(
    points: *const f64,
    n: usize,
    dim: usize,
    weights: *const f64,
    out_measure: *mut *mut UotMeasure,
) -> UotStatus {
    guard(|| {
        let slot = out(out_measure, "out_measure")?;
        *slot = ptr::null_mut();
        if n == 0 || dim == 0 {
            return Err(UotError::Input("n and dim must be positive".into()).into());
        }
        if points.is_null() {
            return Err(Failure::Null("points"));
        }
        if weights.is_null() {
            return Err(Failure::Null("weights"));
        }
        let coords = std::slice::from_raw_parts(points, n * dim);
        let w = std::slice::from_raw_parts(weights, n);
        let ground = GroundSet::new(coords.chunks(dim).map(|c| c.to_vec()).collect())?;
        let inner = DiscreteMeasure::new(ground, w.to_vec())?;
        *slot = Box::into_raw(Box::new(UotMeasure { inner }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `measure` must come from [`uot_measure_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn uot_measure_free(measure: *mut UotMeasure) {
    if !measure.is_null() {
        drop(Box::from_raw(measure));
    }
}

/// Number of support points.
///
/// # Safety
/// `measure` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn uot_measure_len(measure: *const UotMeasure, out_len: *mut usize) -> UotStatus {
    guard(|| {
        *out(out_len, "out_len")? = deref(measure, "measure")?.inner.len();
        Ok(())
    })
}

/// Total mass.
///
/// # Safety
/// `measure` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn uot_measure_mass(measure: *const UotMeasure, out_mass: *mut f64) -> UotStatus {
    guard(|| {
        *out(out_mass, "out_mass")? = deref(measure, "measure")?.inner.mass();
        Ok(())
    })
}

/// Solves the original-space regularised problem with the normalised product
/// reference. If `plan` is non-NULL it receives the `len(mu0) * len(mu1)`
/// optimal plan in row-major order.
///
/// # Safety
/// Handles must be live, `report` writable, and `plan` NULL or large enough.
#[no_mangle]
pub unsafe extern "C" fn uot_solve_x_eps(
    mu0: *const UotMeasure,
    mu1: *const UotMeasure,
    cost: UotCost,
    entropy: UotEntropy,
    eps: f64,
    tolerance: f64,
    max_iters: u64,
    plan: *mut f64,
    report: *mut UotReport,
) -> UotStatus {
    guard(|| {
        let report = out(report, "report")?;
        let (m0, m1) = (&deref(mu0, "mu0")?.inner, &deref(mu1, "mu1")?.inner);
        let c = cost_matrix(cost, m0, m1);
        let prob = XProblem::with_default_reference(m0.clone(), m1.clone(), c)?;
        let kind = match entropy {
            UotEntropy::Kl => EntropyKind::Kl,
            UotEntropy::Balanced => EntropyKind::Balanced,
        };
        let config = SolverConfig::new(eps)
            .tolerance(tolerance)
            .max_iters(usize::try_from(max_iters).unwrap_or(usize::MAX));
        let (gamma, _, r) = solve_x_eps(&prob, kind, &config)?;
        if !plan.is_null() {
            let dst = std::slice::from_raw_parts_mut(plan, m0.len() * m1.len());
            for (d, s) in dst.iter_mut().zip(gamma.weights().iter()) {
                *d = *s;
            }
        }
        *report = to_report(&r);
        Ok(())
    })
}

/// Solves the unregularised extended-space problem on a geometric radial grid
/// with `radial_nodes` positive nodes.
///
/// # Safety
/// Handles must be live and `report` writable.
#[no_mangle]
pub unsafe extern "C" fn uot_solve_y_unreg(
    mu0: *const UotMeasure,
    mu1: *const UotMeasure,
    cost: UotCost,
    p: f64,
    radial_nodes: usize,
    report: *mut UotReport,
) -> UotStatus {
    guard(|| {
        let report = out(report, "report")?;
        let (m0, m1) = (&deref(mu0, "mu0")?.inner, &deref(mu1, "mu1")?.inner);
        let c = cost_matrix(cost, m0, m1);
        let grid = RadialGrid::for_instance(m0, m1, p, radial_nodes, DEFAULT_SMIN_FRAC)?;
        let (_, r) = solve_y_unreg(m0, m1, &c, p, (&grid, &grid))?;
        *report = to_report(&r);
        Ok(())
    })
}

fn to_report(r: &uotlab::SolveReport) -> UotReport {
    UotReport {
        primal: r.primal,
        dual: r.dual,
        gap: r.gap,
        iterations: r.iterations as u64,
        marginal_residual: r.marginal_residuals.iter().copied().fold(0.0, f64::max),
        converged: r.converged,
    }
}

/// Hellinger-Kantorovich cost of a distance `d` (infinite beyond pi/2).
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uot_hk_cost(d: f64, out_value: *mut f64) -> UotStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        if d.is_nan() || d < 0.0 {
            return Err(UotError::Domain(format!("distance must be >= 0, got {d}")).into());
        }
        *slot = hk_cost(d);
        Ok(())
    })
}

/// Regularised perspective cost `H_eps(s0, s1, S, c)`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn uot_perspective_h_eps(
    s0: f64,
    s1: f64,
    big_s: f64,
    c: f64,
    eps: f64,
    out_value: *mut f64,
) -> UotStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        *slot = perspective_h_eps(s0, s1, big_s, c, eps)?;
        Ok(())
    })
}
