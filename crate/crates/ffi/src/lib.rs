//! C ABI over the `csimpute` solver.
//!
//! Objects cross the boundary as opaque heap handles created by `*_new` or
//! producer functions and released by the matching `*_free`. Every fallible
//! function returns a [`CsiStatus`]; the message of the most recent failure on
//! the calling thread is available from [`csi_last_error`]. Matrices are
//! passed as row-major `double` buffers with explicit lengths.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use csimpute::simulate::{generate_dataset, SimConfig, SimOutput};
use csimpute::{make_grid, make_spline_basis, Basis, Error, FitResult, Mask, MaskedMatrix, Method, Problem, SolverConfig, TreatmentMatrix};
use nalgebra::DMatrix;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    BufferTooSmall = 4,
    NumericalFailure = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiMethod {
    Csi = 0,
    Sli = 1,
}

impl From<CsiMethod> for Method {
    fn from(m: CsiMethod) -> Self {
        match m {
            CsiMethod::Csi => Method::Csi,
            CsiMethod::Sli => Method::Sli,
        }
    }
}

/// Solver settings; obtain defaults from [`csi_solver_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CsiSolverConfig {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub denom_guard: f64,
}

impl From<CsiSolverConfig> for SolverConfig {
    fn from(c: CsiSolverConfig) -> Self {
        SolverConfig {
            lambda: c.lambda,
            tolerance: c.tolerance,
            max_iter: c.max_iter,
            denom_guard: c.denom_guard,
            check_monotonicity: false,
        }
    }
}

/// Orthonormal spline basis on a uniform grid.
pub struct CsiBasis {
    inner: Basis,
}

/// Observed matrix, treatment onsets and basis of one fitting problem.
pub struct CsiProblem {
    y: MaskedMatrix,
    treatments: TreatmentMatrix,
    basis: Basis,
}

/// Result of a fit.
pub struct CsiFit {
    inner: FitResult,
    basis: Basis,
    treatments: TreatmentMatrix,
}

/// Simulated dataset with its ground truth.
pub struct CsiSim {
    inner: SimOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> CsiStatus {
    match err {
        Error::ShapeMismatch { .. } => CsiStatus::ShapeMismatch,
        Error::SvdFailure | Error::RankDeficient { .. } => CsiStatus::NumericalFailure,
        _ => CsiStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (CsiStatus, String)>) -> CsiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsiStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CsiStatus::Panic
        }
    }
}

fn lib<T>(r: csimpute::Result<T>) -> Result<T, (CsiStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CsiStatus, String) {
    (CsiStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (CsiStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (CsiStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (CsiStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), (CsiStatus, String)> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err((
            CsiStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn csi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn csi_solver_config_default() -> CsiSolverConfig {
    let d = SolverConfig::default();
    CsiSolverConfig {
        lambda: d.lambda,
        tolerance: d.tolerance,
        max_iter: d.max_iter,
        denom_guard: d.denom_guard,
    }
}

/// Basis of dimension `k` on `t` uniform points spanning `[t_min, t_max]`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csi_basis_new(t_min: f64, t_max: f64, t: usize, k: usize, out: *mut *mut CsiBasis) -> CsiStatus {
    guard(|| {
        let grid = lib(make_grid(t_min, t_max, t))?;
        let inner = lib(make_spline_basis(&grid, k))?;
        put(out, CsiBasis { inner })
    })
}

/// # Safety
/// `basis` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn csi_basis_free(basis: *mut CsiBasis) {
    free(basis)
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn csi_basis_dims(basis: *const CsiBasis, t: *mut usize, k: *mut usize) -> CsiStatus {
    guard(|| {
        let b = &deref(basis, "basis")?.inner;
        if t.is_null() || k.is_null() {
            return Err(null("output pointer"));
        }
        *t = b.num_points();
        *k = b.dim();
        Ok(())
    })
}

/// Copies the `t x k` basis matrix, row-major, into `buf`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csi_basis_matrix(basis: *const CsiBasis, buf: *mut f64, len: usize) -> CsiStatus {
    guard(|| {
        let b = &deref(basis, "basis")?.inner;
        copy_out(&row_major(b.matrix()), buf, len)
    })
}

/// Problem from row-major `n x t` values, a zero-one mask of the same shape
/// and per-row treatment onsets (zero-based grid column, negative for never
/// treated). Values outside the mask are ignored.
///
/// # Safety
/// `values` and `mask` must hold `n * t` entries, `onsets` `n` entries.
#[no_mangle]
pub unsafe extern "C" fn csi_problem_new(
    basis: *const CsiBasis,
    n: usize,
    t: usize,
    values: *const f64,
    mask: *const u8,
    onsets: *const i64,
    out: *mut *mut CsiProblem,
) -> CsiStatus {
    guard(|| {
        let basis = deref(basis, "basis")?.inner.clone();
        let len = n.checked_mul(t).ok_or((CsiStatus::InvalidArgument, "n * t overflows".into()))?;
        let values = slice(values, len, "values")?;
        let mask = slice(mask, len, "mask")?;
        let onsets = slice(onsets, n, "onsets")?;
        let bits = mask.iter().map(|&m| m != 0).collect();
        let mask = lib(Mask::from_row_major(n, t, bits))?;
        let y = lib(MaskedMatrix::new(DMatrix::from_row_slice(n, t, values), mask))?;
        let onset = onsets.iter().map(|&o| usize::try_from(o).ok()).collect();
        let treatments = lib(TreatmentMatrix::new(onset, t))?;
        lib(Problem::new(&y, &treatments, &basis))?;
        put(out, CsiProblem { y, treatments, basis })
    })
}

/// # Safety
/// `problem` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn csi_problem_free(problem: *mut CsiProblem) {
    free(problem)
}

/// Fits the problem from zero. Running out of iterations is not an error;
/// check [`csi_fit_converged`].
///
/// # Safety
/// Pointers must be valid; `config` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn csi_fit(
    problem: *const CsiProblem,
    method: CsiMethod,
    config: *const CsiSolverConfig,
    out: *mut *mut CsiFit,
) -> CsiStatus {
    guard(|| {
        let p = deref(problem, "problem")?;
        let config: SolverConfig = match config.as_ref() {
            Some(c) => (*c).into(),
            None => SolverConfig::default(),
        };
        let method = Method::from(method);
        let treatments = match method {
            Method::Csi => p.treatments.clone(),
            Method::Sli => TreatmentMatrix::untreated(p.y.nrows(), p.y.ncols()),
        };
        let problem = lib(Problem::new(&p.y, &treatments, &p.basis))?;
        let inner = lib(problem.fit(method, &config))?;
        put(
            out,
            CsiFit {
                inner,
                basis: p.basis.clone(),
                treatments,
            },
        )
    })
}

/// # Safety
/// `fit` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn csi_fit_free(fit: *mut CsiFit) {
    free(fit)
}

/// Scalar summary of a fit. Any output pointer may be null.
///
/// # Safety
/// Non-null pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn csi_fit_summary(
    fit: *const CsiFit,
    mu: *mut f64,
    lambda: *mut f64,
    iterations: *mut usize,
    converged: *mut bool,
) -> CsiStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.inner;
        if let Some(p) = mu.as_mut() {
            *p = f.mu;
        }
        if let Some(p) = lambda.as_mut() {
            *p = f.lambda;
        }
        if let Some(p) = iterations.as_mut() {
            *p = f.iterations;
        }
        if let Some(p) = converged.as_mut() {
            *p = f.converged;
        }
        Ok(())
    })
}

/// Whether the fit met the stopping rule; false also for a null handle.
///
/// # Safety
/// `fit` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn csi_fit_converged(fit: *const CsiFit) -> bool {
    fit.as_ref().is_some_and(|f| f.inner.converged)
}

/// Copies the row-major `n x k` coefficient matrix.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csi_fit_w(fit: *const CsiFit, buf: *mut f64, len: usize) -> CsiStatus {
    guard(|| copy_out(&row_major(&deref(fit, "fit")?.inner.w), buf, len))
}

/// Copies the objective value after each iteration; `len` must be at least
/// the iteration count.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csi_fit_loss_trace(fit: *const CsiFit, buf: *mut f64, len: usize) -> CsiStatus {
    guard(|| copy_out(&deref(fit, "fit")?.inner.loss_trace, buf, len))
}

/// Copies the row-major `n x t` prediction `W B' + mu I_S`.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csi_fit_predict(fit: *const CsiFit, buf: *mut f64, len: usize) -> CsiStatus {
    guard(|| {
        let f = deref(fit, "fit")?;
        let y_hat = lib(csimpute::predict(&f.inner.w, f.inner.mu, &f.treatments, &f.basis))?;
        copy_out(&row_major(&y_hat), buf, len)
    })
}

/// Simulated dataset with default auxiliary parameters.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn csi_simulate(
    n: usize,
    t: usize,
    k: usize,
    mu: f64,
    rho: f64,
    seed: u64,
    out: *mut *mut CsiSim,
) -> CsiStatus {
    guard(|| {
        let config = SimConfig {
            mu,
            rho,
            seed,
            ..SimConfig::with_dims(n, t, k)
        };
        let inner = lib(generate_dataset(&config))?;
        put(out, CsiSim { inner })
    })
}

/// # Safety
/// `sim` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn csi_sim_free(sim: *mut CsiSim) {
    free(sim)
}

/// Ground-truth treatment effect.
///
/// # Safety
/// `sim` must be valid.
#[no_mangle]
pub unsafe extern "C" fn csi_sim_mu(sim: *const CsiSim) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.inner.mu_true)
}

/// Copies the row-major `n x k` true coefficients.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn csi_sim_w(sim: *const CsiSim, buf: *mut f64, len: usize) -> CsiStatus {
    guard(|| copy_out(&row_major(&deref(sim, "sim")?.inner.w_true), buf, len))
}

/// New problem handle over the simulated observations.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn csi_sim_problem(sim: *const CsiSim, out: *mut *mut CsiProblem) -> CsiStatus {
    guard(|| {
        let s = &deref(sim, "sim")?.inner;
        put(
            out,
            CsiProblem {
                y: s.observed.clone(),
                treatments: s.treatments.clone(),
                basis: s.basis.clone(),
            },
        )
    })
}
