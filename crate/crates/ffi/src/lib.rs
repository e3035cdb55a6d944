//! C ABI over `sampleinfo`.
//!
//! Objects cross the boundary as opaque handles (`SiStore`, `SiScores`)
//! that the caller releases with the matching `*_free`. Every fallible call
//! returns an `SiStatus`; on failure `si_last_error()` holds a message for the
//! calling thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sampleinfo::dynamics::{SmoothingMode, TrainConfig};
use sampleinfo::info::{MeasureTag, ScoreReport};
use sampleinfo::ingest::{read_jacobians, write_jacobians, JacobianStore, LayerSketch, Provenance};
use sampleinfo::nalgebra::DMatrix;
use sampleinfo::ntk::sketch;
use sampleinfo::pipeline::Problem;
use sampleinfo::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    Format = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiMeasure {
    Fsi = 0,
    Si = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiSmoothing {
    Identity = 0,
    IsotropicSgd = 1,
    Lyapunov = 2,
    Fisher = 3,
}

/// Training and scoring settings. `time` may be `INFINITY`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SiConfig {
    pub eta: f64,
    pub time: f64,
    pub lambda: f64,
    pub batch: usize,
    pub sigma: f64,
    pub smoothing: SiSmoothing,
}

/// Opaque Jacobian store.
pub struct SiStore(JacobianStore);

/// Opaque per-sample score report.
pub struct SiScores(ScoreReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> SiStatus {
    match err {
        Error::Dimension(_) => SiStatus::Dimension,
        Error::InvalidArgument(_) | Error::LabelOutOfRange { .. } | Error::Parse { .. } => SiStatus::InvalidArgument,
        Error::Format(_) | Error::Serde(_) => SiStatus::Format,
        Error::Io { .. } => SiStatus::Io,
        _ => SiStatus::Numerical,
    }
}

struct Fail(SiStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SiStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SiStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: callers pass either null or a pointer obtained from this library
    // (handles) or a valid pointer to a live `T`.
    unsafe { p.as_ref() }.ok_or_else(|| Fail(SiStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: as above, for a writable location.
    unsafe { p.as_mut() }.ok_or_else(|| Fail(SiStatus::NullPointer, format!("{what} is null")))
}

fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(SiStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(Fail(SiStatus::NullPointer, "path is null".into()));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(SiStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

fn train_config(c: &SiConfig) -> TrainConfig {
    TrainConfig {
        eta: c.eta,
        time: c.time,
        lambda: c.lambda,
        batch: c.batch,
        sigma: c.sigma,
        smoothing: match c.smoothing {
            SiSmoothing::Identity => SmoothingMode::Identity,
            SiSmoothing::IsotropicSgd => SmoothingMode::IsotropicSgd,
            SiSmoothing::Lyapunov => SmoothingMode::Lyapunov,
            SiSmoothing::Fisher => SmoothingMode::Fisher,
        },
    }
}

/// Message of the last failed call on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn si_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Default settings: eta 1e-3, time 2000, lambda 0, batch 1, sigma 1, identity smoothing.
#[no_mangle]
pub extern "C" fn si_config_default() -> SiConfig {
    let d = TrainConfig::default();
    SiConfig {
        eta: d.eta,
        time: d.time,
        lambda: d.lambda,
        batch: d.batch,
        sigma: d.sigma,
        smoothing: SiSmoothing::Identity,
    }
}

/// Builds an unsketched store from row-major arrays: `jacobian` is
/// `(n·k) × d` with row `i·k + o`, `f0` is `n × k`.
#[no_mangle]
pub extern "C" fn si_store_from_dense(
    n: usize,
    k: usize,
    d: usize,
    jacobian: *const f64,
    f0: *const f64,
    out: *mut *mut SiStore,
) -> SiStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if d == 0 {
            return Err(Fail(SiStatus::InvalidArgument, "parameter dimension must be positive".into()));
        }
        let rows = n.checked_mul(k).ok_or_else(|| Fail(SiStatus::InvalidArgument, "n·k overflows".into()))?;
        let len = rows.checked_mul(d).ok_or_else(|| Fail(SiStatus::InvalidArgument, "n·k·d overflows".into()))?;
        let jac = DMatrix::from_row_slice(rows, d, slice(jacobian, len, "jacobian")?);
        let f0 = DMatrix::from_row_slice(n, k, slice(f0, rows, "f0")?);
        let store = JacobianStore::new(k, vec![LayerSketch::full("params", d)], jac, f0, Provenance::default())?;
        *out = Box::into_raw(Box::new(SiStore(store)));
        Ok(())
    })
}

/// Reads a JLF Jacobian file.
#[no_mangle]
pub extern "C" fn si_store_read(path: *const c_char, out: *mut *mut SiStore) -> SiStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let store = read_jacobians(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(SiStore(store)));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn si_store_write(store: *const SiStore, path: *const c_char) -> SiStatus {
    guard(|| {
        let store = non_null(store, "store")?;
        write_jacobians(&store.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Keeps `d0_per_layer` random coordinates of every layer.
#[no_mangle]
pub extern "C" fn si_store_sketch(store: *const SiStore, d0_per_layer: usize, seed: u64, out: *mut *mut SiStore) -> SiStatus {
    guard(|| {
        let store = non_null(store, "store")?;
        let out = out_ptr(out, "out")?;
        let sketched = sketch(&store.0, d0_per_layer, seed)?;
        *out = Box::into_raw(Box::new(SiStore(sketched)));
        Ok(())
    })
}

/// Number of samples; 0 for a null handle.
#[no_mangle]
pub extern "C" fn si_store_n(store: *const SiStore) -> usize {
    // SAFETY: null or a live handle.
    unsafe { store.as_ref() }.map_or(0, |s| s.0.n())
}

/// Outputs per sample; 0 for a null handle.
#[no_mangle]
pub extern "C" fn si_store_k(store: *const SiStore) -> usize {
    // SAFETY: null or a live handle.
    unsafe { store.as_ref() }.map_or(0, |s| s.0.k())
}

/// Kept coordinates over all layers; 0 for a null handle.
#[no_mangle]
pub extern "C" fn si_store_d0(store: *const SiStore) -> usize {
    // SAFETY: null or a live handle.
    unsafe { store.as_ref() }.map_or(0, |s| s.0.d0())
}

#[no_mangle]
pub extern "C" fn si_store_free(store: *mut SiStore) {
    if !store.is_null() {
        // SAFETY: the handle came from `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(store) });
    }
}

/// Leave-one-out scores of every training sample. `targets` is row-major
/// `n × k`. `val` may be null, in which case F-SI is measured on the
/// training inputs.
#[no_mangle]
pub extern "C" fn si_score(
    train: *const SiStore,
    targets: *const f64,
    val: *const SiStore,
    config: *const SiConfig,
    measure: SiMeasure,
    out: *mut *mut SiScores,
) -> SiStatus {
    guard(|| {
        let train = &non_null(train, "train")?.0;
        let config = train_config(non_null(config, "config")?);
        let out = out_ptr(out, "out")?;
        let targets = DMatrix::from_row_slice(train.n(), train.k(), slice(targets, train.n() * train.k(), "targets")?);
        // SAFETY: null or a live handle.
        let val = unsafe { val.as_ref() }.map_or_else(|| train.clone(), |v| v.0.clone());
        let labels = vec![0; val.n()];
        let problem = Problem::new(train.clone(), targets, val, labels, config)?;
        let tag = match measure {
            SiMeasure::Fsi => MeasureTag::Fsi,
            SiMeasure::Si => MeasureTag::Si,
        };
        let report = problem.scores(&problem.all(), tag)?;
        *out = Box::into_raw(Box::new(SiScores(report)));
        Ok(())
    })
}

/// Number of scores; 0 for a null handle.
#[no_mangle]
pub extern "C" fn si_scores_len(scores: *const SiScores) -> usize {
    // SAFETY: null or a live handle.
    unsafe { scores.as_ref() }.map_or(0, |s| s.0.len())
}

/// Copies the scores into `buf`, which must hold `len` doubles; `len` must
/// equal `si_scores_len`.
#[no_mangle]
pub extern "C" fn si_scores_values(scores: *const SiScores, buf: *mut f64, len: usize) -> SiStatus {
    guard(|| {
        let s = &non_null(scores, "scores")?.0;
        copy_out(&s.scores, buf, len)
    })
}

/// Copies the ascending ranks (0 = least informative, ties by index).
#[no_mangle]
pub extern "C" fn si_scores_ranks(scores: *const SiScores, buf: *mut usize, len: usize) -> SiStatus {
    guard(|| {
        let s = &non_null(scores, "scores")?.0;
        copy_out(&s.ranks, buf, len)
    })
}

fn copy_out<T: Copy>(src: &[T], buf: *mut T, len: usize) -> Result<(), Fail> {
    if len != src.len() {
        return Err(Fail(SiStatus::Dimension, format!("buffer holds {len} entries, need {}", src.len())));
    }
    if len == 0 {
        return Ok(());
    }
    if buf.is_null() {
        return Err(Fail(SiStatus::NullPointer, "buffer is null".into()));
    }
    // SAFETY: `buf` has room for `len` values per the caller contract.
    unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), buf, len) };
    Ok(())
}

/// Writes the report as CSV (config hash header, then index,score,rank,group,flag).
#[no_mangle]
pub extern "C" fn si_scores_write_csv(scores: *const SiScores, path: *const c_char) -> SiStatus {
    guard(|| {
        let s = &non_null(scores, "scores")?.0;
        s.write_csv(path_arg(path)?)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn si_scores_free(scores: *mut SiScores) {
    if !scores.is_null() {
        // SAFETY: the handle came from `Box::into_raw` in this library.
        drop(unsafe { Box::from_raw(scores) });
    }
}
