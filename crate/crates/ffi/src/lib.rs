//! C ABI over the `plab` library.
//!
//! Objects are opaque heap handles released with their `*_free` function.
//! Every fallible call returns a [`PlabStatus`]; on failure the message is
//! available from [`plab_last_error_message`] on the same thread. Matrices
//! cross the boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use plab::collapse;
use plab::experiments::{self, ExperimentConfig};
use plab::network::{self, Activation, Network, Objective, TrainConfig};
use plab::parsimony::{self, Case};
use plab::{tensor, Error, Matrix, Seed};

/// Opaque dense matrix.
pub struct PlabMatrix(Matrix);

/// Opaque feed-forward network.
pub struct PlabNetwork(Network);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DegenerateData = 3,
    Unsupported = 4,
    Divergence = 5,
    DegenerateRecursion = 6,
    InsufficientMargin = 7,
    InvalidInitialization = 8,
    DegenerateBetweenClass = 9,
    BufferTooSmall = 10,
    Config = 11,
    Io = 12,
    Internal = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlabActivation {
    Linear = 0,
    Relu = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlabCase {
    LowRank = 0,
    Wide = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PlabStatus {
    match e {
        Error::InvalidArgument(_) | Error::Comparison(_) => PlabStatus::InvalidArgument,
        Error::DegenerateData(_) => PlabStatus::DegenerateData,
        Error::Unsupported(_) => PlabStatus::Unsupported,
        Error::Divergence { .. } => PlabStatus::Divergence,
        Error::DegenerateRecursion { .. } => PlabStatus::DegenerateRecursion,
        Error::InsufficientMargin { .. } => PlabStatus::InsufficientMargin,
        Error::InvalidInitialization { .. } => PlabStatus::InvalidInitialization,
        Error::DegenerateBetweenClass { .. } => PlabStatus::DegenerateBetweenClass,
        Error::Config { .. } => PlabStatus::Config,
        Error::Io { .. } | Error::Format { .. } | Error::Json(_) => PlabStatus::Io,
        Error::Experiment { source, .. } => status_of(source),
        _ => PlabStatus::Internal,
    }
}

struct Failure(PlabStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PlabStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PlabStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PlabStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PlabStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PlabStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn plab_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn plab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a `rows × cols` matrix from a row-major buffer of `rows * cols`
/// values, or zeros when `data` is NULL.
///
/// # Safety
/// `data` must be NULL or point to `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plab_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut PlabMatrix,
) -> PlabStatus {
    guard(|| {
        let len = rows.checked_mul(cols).ok_or_else(|| invalid("matrix size overflows"))?;
        let m = if data.is_null() {
            Matrix::zeros(rows, cols)
        } else {
            Matrix::from_row_slice(rows, cols, slice(data, len, "data")?)
        };
        put(out, boxed(PlabMatrix(m)), "out")
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn plab_matrix_free(m: *mut PlabMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn plab_matrix_rows(m: *const PlabMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.nrows())
}

/// # Safety
/// `m` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn plab_matrix_cols(m: *const PlabMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.ncols())
}

/// Copies the entries row-major into `buf`, which must hold `rows * cols`.
///
/// # Safety
/// `m` must be a live handle and `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn plab_matrix_copy_data(m: *const PlabMatrix, buf: *mut f64, len: usize) -> PlabStatus {
    guard(|| {
        let m = &deref(m, "matrix")?.0;
        if len < m.len() {
            return Err(Failure(PlabStatus::BufferTooSmall, format!("need {} entries, got {len}", m.len())));
        }
        let buf = slice_mut(buf, len, "buf")?;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                buf[i * m.ncols() + j] = m[(i, j)];
            }
        }
        Ok(())
    })
}

/// `ε`-scaled random orthogonal matrix (`WᵀW = ε²I` when tall, `WWᵀ = ε²I`
/// when wide).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plab_random_orthogonal(
    rows: usize,
    cols: usize,
    eps: f64,
    seed: u64,
    out: *mut *mut PlabMatrix,
) -> PlabStatus {
    guard(|| {
        let m = tensor::random_orthogonal(rows, cols, eps, Seed(seed))?;
        put(out, boxed(PlabMatrix(m)), "out")
    })
}

/// Writes the singular values in descending order; `buf` must hold
/// `min(rows, cols)` values.
///
/// # Safety
/// `m` must be a live handle and `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn plab_singular_values(m: *const PlabMatrix, buf: *mut f64, len: usize) -> PlabStatus {
    guard(|| {
        let s = tensor::svd(&deref(m, "matrix")?.0)?.s;
        if len < s.len() {
            return Err(Failure(PlabStatus::BufferTooSmall, format!("need {} values, got {len}", s.len())));
        }
        slice_mut(buf, len, "buf")?[..s.len()].copy_from_slice(&s);
        Ok(())
    })
}

/// Projector distance `‖AAᵀ − BBᵀ‖_F` between the spans of two orthonormal
/// bases.
///
/// # Safety
/// `a`, `b` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn plab_subspace_distance(a: *const PlabMatrix, b: *const PlabMatrix, out: *mut f64) -> PlabStatus {
    guard(|| {
        let d = tensor::subspace_distance(&deref(a, "a")?.0, &deref(b, "b")?.0)?;
        put(out, d, "out")
    })
}

fn activation(a: PlabActivation) -> Activation {
    match a {
        PlabActivation::Linear => Activation::Linear,
        PlabActivation::Relu => Activation::Relu,
    }
}

/// Network with widths `dims[0..n_dims]` (input first) and ε-orthogonal layers.
///
/// # Safety
/// `dims` must point to `n_dims` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plab_network_orthogonal(
    dims: *const usize,
    n_dims: usize,
    eps: f64,
    act: PlabActivation,
    seed: u64,
    out: *mut *mut PlabNetwork,
) -> PlabStatus {
    guard(|| {
        let dims = slice(dims, n_dims, "dims")?;
        let net = Network::orthogonal(dims, eps, activation(act), Seed(seed))?;
        put(out, boxed(PlabNetwork(net)), "out")
    })
}

/// # Safety
/// `net` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn plab_network_free(net: *mut PlabNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of layers, or 0 for NULL.
///
/// # Safety
/// `net` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn plab_network_depth(net: *const PlabNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.depth())
}

/// Copy of layer `l` (1-indexed).
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn plab_network_layer(net: *const PlabNetwork, l: usize, out: *mut *mut PlabMatrix) -> PlabStatus {
    guard(|| {
        let net = &deref(net, "network")?.0;
        if l == 0 || l > net.depth() {
            return Err(invalid(format!("layer {l} outside 1..={}", net.depth())));
        }
        put(out, boxed(PlabMatrix(net.layer(l).clone())), "out")
    })
}

/// End-to-end product `W_L ⋯ W_1` of a linear network.
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn plab_network_end_to_end(net: *const PlabNetwork, out: *mut *mut PlabMatrix) -> PlabStatus {
    guard(|| {
        let e = network::end_to_end(&deref(net, "network")?.0)?;
        put(out, boxed(PlabMatrix(e)), "out")
    })
}

/// `½‖f(X) − Y‖_F²` with samples as columns of `x` and `y`.
///
/// # Safety
/// All handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn plab_network_loss(
    net: *const PlabNetwork,
    x: *const PlabMatrix,
    y: *const PlabMatrix,
    out: *mut f64,
) -> PlabStatus {
    guard(|| {
        let l = network::loss(&deref(net, "network")?.0, &deref(x, "x")?.0, &deref(y, "y")?.0)?;
        put(out, l, "out")
    })
}

/// Full-batch GD on `½‖f(X) − Y‖_F²`. Writes the final network, its loss, and
/// the iteration at which the loss reached `loss_tol` (or -1).
///
/// # Safety
/// All handles must be live and the three outputs writable.
#[no_mangle]
pub unsafe extern "C" fn plab_network_train(
    net: *const PlabNetwork,
    x: *const PlabMatrix,
    y: *const PlabMatrix,
    eta: f64,
    lambda: f64,
    mu: f64,
    max_iters: usize,
    loss_tol: f64,
    out: *mut *mut PlabNetwork,
    final_loss: *mut f64,
    converged_at: *mut i64,
) -> PlabStatus {
    guard(|| {
        if out.is_null() || final_loss.is_null() || converged_at.is_null() {
            return Err(null("output"));
        }
        let cfg = TrainConfig {
            eta,
            lambda,
            mu,
            max_iters,
            loss_tol,
            snapshot_every: max_iters.max(1),
        };
        let objective = Objective::regression(deref(x, "x")?.0.clone(), deref(y, "y")?.0.clone());
        let trace = network::train(&deref(net, "network")?.0, &objective, &cfg)?;
        put(final_loss, trace.final_loss(), "final_loss")?;
        put(converged_at, trace.converged_at.map_or(-1, |t| t as i64), "converged_at")?;
        put(out, boxed(PlabNetwork(trace.final_network().clone())), "out")
    })
}

/// Predicted trailing singular values `ρ(0..=steps)`; `buf` must hold
/// `steps + 1` values.
///
/// # Safety
/// `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn plab_rho_sequence(
    case_: PlabCase,
    eps: f64,
    eta: f64,
    lambda: f64,
    depth: usize,
    mu: f64,
    steps: usize,
    buf: *mut f64,
    len: usize,
) -> PlabStatus {
    guard(|| {
        let need = steps.checked_add(1).ok_or_else(|| invalid("steps overflows"))?;
        if len < need {
            return Err(Failure(PlabStatus::BufferTooSmall, format!("need {need} values, got {len}")));
        }
        let case = match case_ {
            PlabCase::LowRank => Case::LowRank,
            PlabCase::Wide => Case::Wide,
        };
        let rho = parsimony::rho_sequence_momentum(case, eps, eta, lambda, depth, mu, steps)?;
        slice_mut(buf, len, "buf")?[..need].copy_from_slice(&rho.values);
        Ok(())
    })
}

/// `Tr Σ_W / Tr Σ_B` of the columns of `features` grouped by `labels`
/// (`n_labels` must equal the column count).
///
/// # Safety
/// `features` must be live, `labels` must point to `n_labels` values and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn plab_separation_measure(
    features: *const PlabMatrix,
    labels: *const usize,
    n_labels: usize,
    out: *mut f64,
) -> PlabStatus {
    guard(|| {
        let z = &deref(features, "features")?.0;
        let labels = slice(labels, n_labels, "labels")?;
        let (sw, sb) = collapse::class_scatter(z, labels)?;
        put(out, collapse::separation_measure(&sw, &sb)?, "out")
    })
}

/// Runs the experiment config at `config_path`, writing artifacts into
/// `out_dir`. `passed` receives whether every check held.
///
/// # Safety
/// Both strings must be NUL-terminated UTF-8 and `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn plab_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
    passed: *mut bool,
) -> PlabStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(path(config_path, "config_path")?)?;
        let manifest = experiments::run(&cfg, path(out_dir, "out_dir")?)?;
        put(passed, manifest.passed, "passed")
    })
}
