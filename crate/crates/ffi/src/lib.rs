//! C interface to the `passgp` classifier.
//!
//! Models are opaque handles created by [`passgp_fit`] or
//! [`passgp_model_load`] and released with [`passgp_model_free`]. Every
//! fallible call returns a [`PassgpStatus`]; on failure the message is
//! available from [`passgp_last_error`] on the same thread.
//!
//! Matrices are dense, row-major, `n` rows by `d` columns.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::DMatrix;
use passgp::active_set::{fit, PassConfig, SelectionMode};
use passgp::kernels::KernelSpec;
use passgp::model_file::{self, SavedModel};
use passgp::probit::probit_predictive;
use passgp::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassgpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    ModelFormat = 5,
    Panic = 6,
}

/// Active set selection strategy.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassgpMode {
    Pass = 0,
    Fpass = 1,
    Random = 2,
    Full = 3,
}

/// Training options; start from [`passgp_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PassgpFitOptions {
    pub mode: PassgpMode,
    pub n_init: usize,
    pub n_sub: usize,
    pub n_pass: usize,
    pub p_inc: f64,
    pub p_del: f64,
    pub m_budget: usize,
    pub p_exc: f64,
    /// Re-tune the kernel every this many subset iterations.
    pub hyperopt_every: usize,
    /// Nonzero keeps the initial kernel.
    pub fixed_theta: i32,
    pub seed: u64,
    /// Initial squared-exponential kernel, natural scale.
    pub signal_var: f64,
    pub sq_length: f64,
    pub jitter: f64,
}

/// A trained binary classifier.
pub struct PassgpModel {
    inner: SavedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PassgpStatus {
    match e.root() {
        Error::Io { .. } => PassgpStatus::Io,
        Error::ModelFormat(_) | Error::Parse { .. } => PassgpStatus::ModelFormat,
        _ if e.is_numerical() => PassgpStatus::Numerical,
        _ => PassgpStatus::InvalidArgument,
    }
}

fn fail(status: PassgpStatus, msg: impl Into<String>) -> PassgpStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), PassgpStatus>) -> PassgpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PassgpStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(PassgpStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn lib<T>(r: passgp::Result<T>) -> Result<T, PassgpStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), PassgpStatus> {
    if p.is_null() {
        Err(fail(PassgpStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, PassgpStatus> {
    non_null(path, "path")?;
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| fail(PassgpStatus::InvalidArgument, "path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn matrix_arg(x: *const f64, n: usize, d: usize) -> Result<DMatrix<f64>, PassgpStatus> {
    if n == 0 {
        return Ok(DMatrix::zeros(0, d));
    }
    non_null(x, "x")?;
    let len = n
        .checked_mul(d)
        .ok_or_else(|| fail(PassgpStatus::InvalidArgument, "n * d overflows"))?;
    Ok(DMatrix::from_row_slice(
        n,
        d,
        std::slice::from_raw_parts(x, len),
    ))
}

/// Library defaults: PASS mode, unit signal variance, jitter 0.01.
#[no_mangle]
pub extern "C" fn passgp_fit_options_default() -> PassgpFitOptions {
    let c = PassConfig::default();
    PassgpFitOptions {
        mode: PassgpMode::Pass,
        n_init: c.n_init,
        n_sub: c.n_sub,
        n_pass: c.n_pass,
        p_inc: c.p_inc,
        p_del: c.p_del,
        m_budget: c.m_budget,
        p_exc: c.p_exc,
        hyperopt_every: c.hyperopt_every,
        fixed_theta: 0,
        seed: 0,
        signal_var: 1.0,
        sq_length: 1.0,
        jitter: 0.01,
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn passgp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Trains on `n x d` inputs `x` with labels `y` in {-1, +1}.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` doubles and `out` to
/// writable storage for one handle. `options` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn passgp_fit(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    options: *const PassgpFitOptions,
    out: *mut *mut PassgpModel,
) -> PassgpStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let xm = matrix_arg(x, n, d)?;
        non_null(y, "y")?;
        let labels = std::slice::from_raw_parts(y, n);
        let o = if options.is_null() {
            passgp_fit_options_default()
        } else {
            *options
        };
        let config = PassConfig {
            mode: match o.mode {
                PassgpMode::Pass => SelectionMode::Pass,
                PassgpMode::Fpass => SelectionMode::Fpass,
                PassgpMode::Random => SelectionMode::Random,
                PassgpMode::Full => SelectionMode::Full,
            },
            n_init: o.n_init,
            n_sub: o.n_sub,
            n_pass: o.n_pass,
            p_inc: o.p_inc,
            p_del: o.p_del,
            m_budget: o.m_budget,
            p_exc: o.p_exc,
            hyperopt_every: o.hyperopt_every,
            fixed_theta: o.fixed_theta != 0,
            seed: o.seed,
            ..PassConfig::default()
        };
        let kernel = lib(KernelSpec::se_jitter(o.signal_var, o.sq_length, o.jitter))?;
        let model = lib(fit(&xm, labels, &kernel, &config))?;
        let handle = Box::new(PassgpModel {
            inner: SavedModel {
                model,
                scaling: None,
                target_class: None,
                n_train: n,
            },
        });
        *out = Box::into_raw(handle);
        Ok(())
    })
}

/// Reads a model file written by `passgp train` or [`passgp_model_save`].
///
/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn passgp_model_load(
    path: *const c_char,
    out: *mut *mut PassgpModel,
) -> PassgpStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let p = path_arg(path)?;
        let inner = lib(model_file::load(&p))?;
        *out = Box::into_raw(Box::new(PassgpModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn passgp_model_save(
    model: *const PassgpModel,
    path: *const c_char,
) -> PassgpStatus {
    guard(|| {
        non_null(model, "model")?;
        let p = path_arg(path)?;
        lib(model_file::save(&p, &(*model).inner))
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn passgp_model_free(model: *mut PassgpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of active points, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn passgp_model_active_size(model: *const PassgpModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.inner.model.active_idx().len())
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn passgp_model_dim(model: *const PassgpModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.inner.model.x_active().ncols())
}

/// Predictive mean, variance and probability of `+1` for `n` queries.
/// Any output pointer may be null to skip it.
///
/// # Safety
/// `x` must point to `n * d` doubles and each non-null output to `n`.
#[no_mangle]
pub unsafe extern "C" fn passgp_predict(
    model: *const PassgpModel,
    x: *const f64,
    n: usize,
    d: usize,
    mean: *mut f64,
    var: *mut f64,
    prob: *mut f64,
) -> PassgpStatus {
    guard(|| {
        non_null(model, "model")?;
        let m = &(*model).inner;
        let dim = m.model.x_active().ncols();
        if d != dim {
            return Err(fail(
                PassgpStatus::InvalidArgument,
                format!("queries have {d} features, model expects {dim}"),
            ));
        }
        if n == 0 {
            return Ok(());
        }
        let mut xm = matrix_arg(x, n, d)?;
        if let Some(s) = &m.scaling {
            xm = s.apply(&xm);
        }
        let moments = lib(m.model.predict_moments(&xm))?;
        for (i, (mu, v)) in moments.into_iter().enumerate() {
            if !mean.is_null() {
                *mean.add(i) = mu;
            }
            if !var.is_null() {
                *var.add(i) = v;
            }
            if !prob.is_null() {
                *prob.add(i) = probit_predictive(1.0, mu, v);
            }
        }
        Ok(())
    })
}
