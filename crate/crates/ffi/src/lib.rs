//! C interface to wedgenet.
//!
//! Every fallible call returns a [`WnStatus`]; on failure the message is
//! available from [`wn_last_error`] on the same thread. Objects are opaque
//! handles released with their `*_free` function. Strings returned by the
//! library are released with [`wn_string_free`]. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;
use wedgenet::cli::{build_for_variant, VariantArg};
use wedgenet::dict::{BuildConfig, Dictionary};
use wedgenet::lasso::{self, LassoProblem, LassoSolution, Loss, SolverConfig};
use wedgenet::net::{self, ReluNetwork};
use wedgenet::polish::{self, PolishConfig};
use wedgenet::{ga, DataMatrix, Error};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WnStatus {
    Ok = 0,
    /// The solver hit its iteration cap; the best iterate is still returned.
    NonConverged = 1,
    InvalidArgument = 2,
    NullPointer = 3,
    Dimension = 4,
    DegenerateFeature = 5,
    State = 6,
    Variant = 7,
    Rank = 8,
    Size = 9,
    Numerical = 10,
    Provenance = 11,
    Data = 12,
    Io = 13,
    Panic = 14,
}

/// Loss selector for [`wn_solve`] and [`wn_network_cost`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WnLoss {
    Squared = 0,
    Logistic = 1,
}

impl From<WnLoss> for Loss {
    fn from(l: WnLoss) -> Self {
        match l {
            WnLoss::Squared => Loss::SquaredError,
            WnLoss::Logistic => Loss::Logistic,
        }
    }
}

/// Samples and labels.
pub struct WnDataset(DataMatrix);

/// Feature dictionary together with the data its descriptors index into.
pub struct WnDictionary {
    dict: Dictionary,
    data: DataMatrix,
}

/// Solution of the penalized convex program.
pub struct WnSolution(LassoSolution);

/// Feed-forward ReLU network.
pub struct WnNetwork(ReluNetwork);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WnStatus {
    match e {
        Error::Dimension(_) => WnStatus::Dimension,
        Error::DegenerateFeature(_) => WnStatus::DegenerateFeature,
        Error::State(_) => WnStatus::State,
        Error::Variant(_) => WnStatus::Variant,
        Error::Rank(_) => WnStatus::Rank,
        Error::Size(_) => WnStatus::Size,
        Error::Numerical(_) => WnStatus::Numerical,
        Error::NonConverged { .. } => WnStatus::NonConverged,
        Error::Provenance(_) => WnStatus::Provenance,
        Error::InvalidArgument(_) => WnStatus::InvalidArgument,
        Error::Data(_) | Error::Json(_) => WnStatus::Data,
        Error::Io(_) => WnStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type FfiResult<T> = std::result::Result<T, Fail>;

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<WnStatus>) -> WnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => {
            if s == WnStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            s
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            WnStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            WnStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            WnStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, what: &'static str) -> FfiResult<&'a mut [f64]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn reference<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

fn check_len(rows: usize, cols: usize) -> FfiResult<usize> {
    rows.checked_mul(cols).ok_or_else(|| Fail::Arg("matrix size overflows".into()))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    let c = CString::new(s).map_err(|_| Fail::Arg("string contains a nul byte".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn wn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn wn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Signed volume of the `d × d` row-major matrix `rows`.
///
/// # Safety
/// `rows` must hold `d * d` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wn_signed_volume(rows: *const f64, d: usize, out: *mut f64) -> WnStatus {
    guard(|| {
        let len = check_len(d, d)?;
        let r = slice(rows, len, "rows")?;
        let vs: Vec<&[f64]> = r.chunks(d.max(1)).take(d).collect();
        let v = ga::signed_volume(&vs)?;
        *out_slice(out, 1, "out")?.first_mut().expect("len 1") = v;
        Ok(WnStatus::Ok)
    })
}

/// Generalized cross product of the `d − 1` row-major vectors in `rows`;
/// writes `d` doubles to `out`.
///
/// # Safety
/// `rows` must hold `(d - 1) * d` doubles and `out` must hold `d`.
#[no_mangle]
pub unsafe extern "C" fn wn_cross(rows: *const f64, d: usize, out: *mut f64) -> WnStatus {
    guard(|| {
        if d < 2 {
            return Err(Fail::Arg(format!("cross product needs d >= 2, got {d}")));
        }
        let r = slice(rows, check_len(d - 1, d)?, "rows")?;
        let vs: Vec<&[f64]> = r.chunks(d).collect();
        let c = ga::cross(&vs)?;
        out_slice(out, d, "out")?.copy_from_slice(&c.direction);
        Ok(WnStatus::Ok)
    })
}

/// Positive part of the signed distance from `x` to the span of the `k`
/// row-major vectors in `basis` (`k = d - 1`).
///
/// # Safety
/// `x` must hold `d` doubles, `basis` `k * d`, `out` one.
#[no_mangle]
pub unsafe extern "C" fn wn_dist_plus_to_span(
    x: *const f64,
    basis: *const f64,
    k: usize,
    d: usize,
    out: *mut f64,
) -> WnStatus {
    guard(|| {
        let xs = slice(x, d, "x")?;
        let b = slice(basis, check_len(k, d)?, "basis")?;
        let vs: Vec<&[f64]> = b.chunks(d.max(1)).take(k).collect();
        *out_slice(out, 1, "out")?.first_mut().expect("len 1") = ga::dist_plus_to_span(xs, &vs)?;
        Ok(WnStatus::Ok)
    })
}

/// Positive part of the signed distance from `x` to the affine hull of the
/// `k` row-major points in `points` (`k = d`).
///
/// # Safety
/// `x` must hold `d` doubles, `points` `k * d`, `out` one.
#[no_mangle]
pub unsafe extern "C" fn wn_dist_plus_to_affine(
    x: *const f64,
    points: *const f64,
    k: usize,
    d: usize,
    out: *mut f64,
) -> WnStatus {
    guard(|| {
        let xs = slice(x, d, "x")?;
        let b = slice(points, check_len(k, d)?, "points")?;
        let vs: Vec<&[f64]> = b.chunks(d.max(1)).take(k).collect();
        *out_slice(out, 1, "out")?.first_mut().expect("len 1") = ga::dist_plus_to_affine(xs, &vs)?;
        Ok(WnStatus::Ok)
    })
}

/// Dataset from an `n × d` sample matrix and `n × c` label matrix.
///
/// # Safety
/// `x` must hold `n * d` doubles, `y` `n * c`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wn_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    y: *const f64,
    c: usize,
    out: *mut *mut WnDataset,
) -> WnStatus {
    guard(|| {
        let xs = slice(x, check_len(n, d)?, "x")?;
        let ys = slice(y, check_len(n, c)?, "y")?;
        let data = DataMatrix::new(matrix(xs, n, d), matrix(ys, n, c))?;
        put(out, WnDataset(data))?;
        Ok(WnStatus::Ok)
    })
}

/// Reads a CSV with a header row; the last `label_cols` columns are labels.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wn_dataset_read_csv(
    path: *const c_char,
    label_cols: usize,
    out: *mut *mut WnDataset,
) -> WnStatus {
    guard(|| {
        let p = string(path, "path")?;
        put(out, WnDataset(DataMatrix::read_csv(p, label_cols)?))?;
        Ok(WnStatus::Ok)
    })
}

/// Writes the sample count, input dimension and label count.
///
/// # Safety
/// `ds` must be a live dataset; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn wn_dataset_shape(
    ds: *const WnDataset,
    n: *mut usize,
    d: *mut usize,
    c: *mut usize,
) -> WnStatus {
    guard(|| {
        let data = &reference(ds, "dataset")?.0;
        for (p, v) in [(n, data.n()), (d, data.d()), (c, data.outputs())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(WnStatus::Ok)
    })
}

/// # Safety
/// `ds` must be NULL or a dataset not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wn_dataset_free(ds: *mut WnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Builds a feature dictionary. `variant` takes the command-line names
/// (`1d`, `l1-nobias`, `l2-nobias`, `l2-bias`, `2d-l1-bias`, `2d-l2-bias`,
/// `3layer-l1-nobias`, `3layer-l1-bias`, `vector`); `p` is 1 or 2 and only
/// matters for `vector` (0 picks the variant's default).
///
/// # Safety
/// `ds` must be a live dataset, `variant` a nul-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn wn_dictionary_build(
    ds: *const WnDataset,
    variant: *const c_char,
    p: u8,
    max_features: usize,
    seed: u64,
    out: *mut *mut WnDictionary,
) -> WnStatus {
    guard(|| {
        let data = &reference(ds, "dataset")?.0;
        let v: VariantArg = string(variant, "variant")?.parse()?;
        let p = v.resolve_p((p != 0).then_some(p))?;
        let cfg = BuildConfig { max_features, seed };
        let (dict, data) = build_for_variant(v, p, data, &cfg)?;
        put(out, WnDictionary { dict, data })?;
        Ok(WnStatus::Ok)
    })
}

/// Writes the row count and the number of features (columns).
///
/// # Safety
/// `dict` must be a live dictionary; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn wn_dictionary_shape(dict: *const WnDictionary, n: *mut usize, features: *mut usize) -> WnStatus {
    guard(|| {
        let d = &reference(dict, "dictionary")?.dict;
        if let Some(n) = n.as_mut() {
            *n = d.k.nrows();
        }
        if let Some(f) = features.as_mut() {
            *f = d.k.ncols();
        }
        Ok(WnStatus::Ok)
    })
}

/// # Safety
/// `dict` must be NULL or a dictionary not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wn_dictionary_free(dict: *mut WnDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// Solves the penalized program for the dictionary against the dataset's
/// labels. On `NonConverged` the best iterate is still stored in `out`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wn_solve(
    dict: *const WnDictionary,
    ds: *const WnDataset,
    lambda: f64,
    loss: WnLoss,
    max_iter: usize,
    out: *mut *mut WnSolution,
) -> WnStatus {
    guard(|| {
        let d = &reference(dict, "dictionary")?.dict;
        let data = &reference(ds, "dataset")?.0;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let problem = LassoProblem::for_dictionary(d, data.y(), lambda).with_loss(loss.into());
        let mut cfg = SolverConfig::default();
        if max_iter > 0 {
            cfg.max_iter = max_iter;
        }
        match lasso::solve(&problem, &cfg) {
            Ok(s) => {
                put(out, WnSolution(s))?;
                Ok(WnStatus::Ok)
            }
            Err(Error::NonConverged { iterations, best }) => {
                put(out, WnSolution(*best))?;
                set_error(format!("solver stopped after {iterations} iterations"));
                Ok(WnStatus::NonConverged)
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// # Safety
/// `sol` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wn_solution_objective(sol: *const WnSolution, out: *mut f64) -> WnStatus {
    guard(|| {
        let s = &reference(sol, "solution")?.0;
        *out_slice(out, 1, "out")?.first_mut().expect("len 1") = s.objective;
        Ok(WnStatus::Ok)
    })
}

/// Solution as JSON; release with [`wn_string_free`].
///
/// # Safety
/// `sol` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wn_solution_to_json(sol: *const WnSolution, out: *mut *mut c_char) -> WnStatus {
    guard(|| {
        let s = &reference(sol, "solution")?.0;
        put_string(out, s.to_json().to_string())?;
        Ok(WnStatus::Ok)
    })
}

/// # Safety
/// `sol` must be NULL or a solution not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wn_solution_free(sol: *mut WnSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Network realizing the solution, with balanced per-neuron scaling.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wn_network_reconstruct(
    dict: *const WnDictionary,
    sol: *const WnSolution,
    out: *mut *mut WnNetwork,
) -> WnStatus {
    guard(|| {
        let d = reference(dict, "dictionary")?;
        let s = &reference(sol, "solution")?.0;
        let net = net::reconstruct(&d.dict, s, &d.data)?;
        put(out, WnNetwork(net::balance_scaling(&net).net))?;
        Ok(WnStatus::Ok)
    })
}

/// Parses a network from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wn_network_from_json(json: *const c_char, out: *mut *mut WnNetwork) -> WnStatus {
    guard(|| {
        let v: serde_json::Value = serde_json::from_str(string(json, "json")?).map_err(Error::from)?;
        put(out, WnNetwork(ReluNetwork::from_json(&v)?))?;
        Ok(WnStatus::Ok)
    })
}

/// Network as JSON; release with [`wn_string_free`].
///
/// # Safety
/// `net` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wn_network_to_json(net: *const WnNetwork, out: *mut *mut c_char) -> WnStatus {
    guard(|| {
        let n = &reference(net, "network")?.0;
        put_string(out, n.to_json().to_string())?;
        Ok(WnStatus::Ok)
    })
}

/// Writes the input and output dimensions.
///
/// # Safety
/// `net` must be live; the out pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn wn_network_dims(net: *const WnNetwork, inputs: *mut usize, outputs: *mut usize) -> WnStatus {
    guard(|| {
        let n = &reference(net, "network")?.0;
        if let Some(i) = inputs.as_mut() {
            *i = n.input_dim();
        }
        if let Some(o) = outputs.as_mut() {
            *o = n.output_dim();
        }
        Ok(WnStatus::Ok)
    })
}

/// Evaluates the network on `n` row-major inputs of dimension `d`, writing
/// `n × outputs` row-major values to `out`.
///
/// # Safety
/// `x` must hold `n * d` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wn_network_forward(
    net: *const WnNetwork,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
    out_len: usize,
) -> WnStatus {
    guard(|| {
        let nn = &reference(net, "network")?.0;
        let xs = slice(x, check_len(n, d)?, "x")?;
        let need = check_len(n, nn.output_dim())?;
        if out_len < need {
            return Err(Fail::Arg(format!("output buffer holds {out_len} values, need {need}")));
        }
        let f = net::forward(nn, &matrix(xs, n, d))?;
        let o = out_slice(out, need, "out")?;
        for i in 0..n {
            for j in 0..f.ncols() {
                o[i * f.ncols() + j] = f[(i, j)];
            }
        }
        Ok(WnStatus::Ok)
    })
}

/// Training objective `loss + λ·reg` of the network on the dataset.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wn_network_cost(
    net: *const WnNetwork,
    ds: *const WnDataset,
    lambda: f64,
    p: u8,
    loss: WnLoss,
    out: *mut f64,
) -> WnStatus {
    guard(|| {
        let nn = &reference(net, "network")?.0;
        let data = &reference(ds, "dataset")?.0;
        let c = net::nonconvex_cost(nn, data, lambda, p, loss.into())?;
        *out_slice(out, 1, "out")?.first_mut().expect("len 1") = c.total;
        Ok(WnStatus::Ok)
    })
}

/// # Safety
/// `net` must be NULL or a network not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wn_network_free(net: *mut WnNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Polishes every hidden layer against the dataset (biases included, ridge
/// refit of the following layer at `lambda`). `report` receives the JSON
/// report when non-NULL; release it with [`wn_string_free`].
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wn_polish(
    net: *const WnNetwork,
    ds: *const WnDataset,
    lambda: f64,
    p: u8,
    out: *mut *mut WnNetwork,
    report: *mut *mut c_char,
) -> WnStatus {
    guard(|| {
        let nn = &reference(net, "network")?.0;
        let data = &reference(ds, "dataset")?.0;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let cfg = PolishConfig {
            lambda,
            p,
            ..PolishConfig::default()
        };
        let (polished, rep) = polish::polish_network(nn, data, &cfg)?;
        if !report.is_null() {
            let s = serde_json::to_string(&rep).map_err(Error::from)?;
            put_string(report, s)?;
        }
        put(out, WnNetwork(polished))?;
        Ok(WnStatus::Ok)
    })
}
