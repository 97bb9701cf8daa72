//! C ABI over the fgba library.
//!
//! Grids and generators are opaque handles created by `fgba_*_new`/`build`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`FgbaStatus`]; on failure [`fgba_last_error`] describes the
//! cause for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fgba::experiment::MutantModel;
use fgba::grid::default_experiment_grid;
use fgba::solver::{solve_raw, SolveOptions};
use fgba::{BinRepresentative, FgbaError, FluorescenceGrid, RateSet, ReplicationScheme, SparseGenerator};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgbaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotAGenerator = 4,
    Degenerate = 5,
    Unsupported = 6,
    Config = 7,
    Io = 8,
    Panic = 9,
}

/// Rates per generation; fluorescence rates in a.u. per generation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgbaRates {
    pub k_m: f64,
    pub k_h: f64,
    pub k_o: f64,
    pub k_neg_o: f64,
    pub k_r: f64,
    pub k_neg_r: f64,
    pub gamma: f64,
    pub beta_f_on: f64,
    pub beta_f_partial: f64,
    pub beta_f_off: f64,
    pub replication_rate: f64,
}

impl From<RateSet> for FgbaRates {
    fn from(r: RateSet) -> Self {
        FgbaRates {
            k_m: r.k_m,
            k_h: r.k_h,
            k_o: r.k_o,
            k_neg_o: r.k_neg_o,
            k_r: r.k_r,
            k_neg_r: r.k_neg_r,
            gamma: r.gamma,
            beta_f_on: r.beta_f_on,
            beta_f_partial: r.beta_f_partial,
            beta_f_off: r.beta_f_off,
            replication_rate: r.replication_rate,
        }
    }
}

impl From<FgbaRates> for RateSet {
    fn from(r: FgbaRates) -> Self {
        RateSet {
            k_m: r.k_m,
            k_h: r.k_h,
            k_o: r.k_o,
            k_neg_o: r.k_neg_o,
            k_r: r.k_r,
            k_neg_r: r.k_neg_r,
            gamma: r.gamma,
            beta_f_on: r.beta_f_on,
            beta_f_partial: r.beta_f_partial,
            beta_f_off: r.beta_f_off,
            replication_rate: r.replication_rate,
        }
    }
}

/// Opaque fluorescence grid.
pub struct FgbaGrid(FluorescenceGrid);

/// Opaque sparse generator.
pub struct FgbaGenerator(SparseGenerator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &FgbaError) -> FgbaStatus {
    match e {
        FgbaError::Domain(_) => FgbaStatus::InvalidArgument,
        FgbaError::DimensionMismatch { .. } => FgbaStatus::DimensionMismatch,
        FgbaError::NotAGenerator { .. } => FgbaStatus::NotAGenerator,
        FgbaError::Degenerate(_) => FgbaStatus::Degenerate,
        FgbaError::Unsupported(_) => FgbaStatus::Unsupported,
        FgbaError::Config(_) | FgbaError::Parse { .. } => FgbaStatus::Config,
        FgbaError::Io(_) => FgbaStatus::Io,
    }
}

fn guard<F: FnOnce() -> Result<(), FgbaStatus>>(f: F) -> FgbaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FgbaStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside fgba".into());
            FgbaStatus::Panic
        }
    }
}

fn fail(e: FgbaError) -> FgbaStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> FgbaStatus {
    set_error(format!("{what} is NULL"));
    FgbaStatus::NullPointer
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next fgba call on the same thread.
#[no_mangle]
pub extern "C" fn fgba_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Published rates.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `FgbaRates`.
#[no_mangle]
pub unsafe extern "C" fn fgba_rates_default(out: *mut FgbaRates) -> FgbaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = RateSet::default().into();
        Ok(())
    })
}

/// Same rates with k_-R = k_R / ratio_r.
///
/// # Safety
/// `rates` and `out` must be NULL or valid; they may alias.
#[no_mangle]
pub unsafe extern "C" fn fgba_rates_with_ratio_r(rates: *const FgbaRates, ratio_r: f64, out: *mut FgbaRates) -> FgbaStatus {
    guard(|| {
        if rates.is_null() || out.is_null() {
            return Err(null("rates or out"));
        }
        let r = RateSet::from(*rates).with_ratio_r(ratio_r).map_err(fail)?;
        *out = r.into();
        Ok(())
    })
}

/// Grid with edges 0, 1 and then `bins_per_decade` log-spaced bins per
/// decade up to 10^decades.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fgba_grid_new_log(decades: f64, bins_per_decade: usize, out: *mut *mut FgbaGrid) -> FgbaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let g = default_experiment_grid(decades, bins_per_decade).map_err(fail)?;
        *out = Box::into_raw(Box::new(FgbaGrid(g)));
        Ok(())
    })
}

/// Grid from `n_edges` increasing edges.
///
/// # Safety
/// `edges` must point to `n_edges` readable doubles; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn fgba_grid_new_edges(edges: *const f64, n_edges: usize, out: *mut *mut FgbaGrid) -> FgbaStatus {
    guard(|| {
        if edges.is_null() || out.is_null() {
            return Err(null("edges or out"));
        }
        let e = std::slice::from_raw_parts(edges, n_edges).to_vec();
        let g = FluorescenceGrid::from_edges(e).map_err(fail)?;
        *out = Box::into_raw(Box::new(FgbaGrid(g)));
        Ok(())
    })
}

/// Number of bins; 0 for NULL.
///
/// # Safety
/// `grid` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fgba_grid_len(grid: *const FgbaGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// Copies the `len + 1` edges into `out`, which holds `cap` doubles.
///
/// # Safety
/// `grid` must be a live handle and `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn fgba_grid_edges(grid: *const FgbaGrid, out: *mut f64, cap: usize) -> FgbaStatus {
    guard(|| {
        let g = grid.as_ref().ok_or_else(|| null("grid"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let edges = g.0.edges();
        if cap < edges.len() {
            return Err(fail(FgbaError::dims(edges.len(), cap, "edge buffer")));
        }
        ptr::copy_nonoverlapping(edges.as_ptr(), out, edges.len());
        Ok(())
    })
}

/// # Safety
/// `grid` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fgba_grid_free(grid: *mut FgbaGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Grid generator of one mutant with continuous halving replication:
/// A_f + rate·(D⁺_f − I), dimension 5·bins, state index 5·bin + phase.
///
/// # Safety
/// `rates` and `grid` must be valid; `out` must hold one pointer.
#[no_mangle]
pub unsafe extern "C" fn fgba_generator_build_mutant(
    rates: *const FgbaRates,
    grid: *const FgbaGrid,
    out: *mut *mut FgbaGenerator,
) -> FgbaStatus {
    guard(|| {
        if rates.is_null() || out.is_null() {
            return Err(null("rates or out"));
        }
        let g = grid.as_ref().ok_or_else(|| null("grid"))?;
        let model = MutantModel::from_rates(
            RateSet::from(*rates),
            &g.0,
            ReplicationScheme::Continuous,
            1.0,
            BinRepresentative::LowerEdge,
        )
        .map_err(fail)?;
        let m = model.continuous_generator().map_err(fail)?;
        *out = Box::into_raw(Box::new(FgbaGenerator(m)));
        Ok(())
    })
}

/// # Safety
/// `gen` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fgba_generator_dim(gen: *const FgbaGenerator) -> usize {
    gen.as_ref().map_or(0, |g| g.0.dim())
}

/// # Safety
/// `gen` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fgba_generator_nnz(gen: *const FgbaGenerator) -> usize {
    gen.as_ref().map_or(0, |g| g.0.nnz())
}

/// Largest |column sum|; NaN for NULL.
///
/// # Safety
/// `gen` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fgba_generator_max_column_sum_error(gen: *const FgbaGenerator) -> f64 {
    gen.as_ref().map_or(f64::NAN, |g| g.0.max_column_sum_error())
}

/// Writes the `dim nnz` header and one `row col value` line per entry.
///
/// # Safety
/// `gen` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn fgba_generator_write_triplets(gen: *const FgbaGenerator, path: *const c_char) -> FgbaStatus {
    guard(|| {
        let g = gen.as_ref().ok_or_else(|| null("generator"))?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(FgbaError::domain("path is not UTF-8")))?;
        let file = std::fs::File::create(path).map_err(|e| fail(e.into()))?;
        let mut w = std::io::BufWriter::new(file);
        g.0.write_triplets(&mut w).map_err(fail)?;
        std::io::Write::flush(&mut w).map_err(|e| fail(e.into()))?;
        Ok(())
    })
}

/// # Safety
/// `gen` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fgba_generator_free(gen: *mut FgbaGenerator) {
    if !gen.is_null() {
        drop(Box::from_raw(gen));
    }
}

/// P(t_end) = exp(M·t_end)·P0 by uniformization with truncation tolerance
/// `tol`. `p0` and `out` both hold `n` = dim doubles and may alias.
///
/// # Safety
/// `gen` must be a live handle; `p0` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn fgba_solve(
    gen: *const FgbaGenerator,
    p0: *const f64,
    n: usize,
    t_end: f64,
    tol: f64,
    out: *mut f64,
) -> FgbaStatus {
    guard(|| {
        let g = gen.as_ref().ok_or_else(|| null("generator"))?;
        if p0.is_null() || out.is_null() {
            return Err(null("p0 or out"));
        }
        if n != g.0.dim() {
            return Err(fail(FgbaError::dims(g.0.dim(), n, "probability vector")));
        }
        let start = std::slice::from_raw_parts(p0, n).to_vec();
        let opts = SolveOptions {
            tol,
            ..SolveOptions::until(t_end)
        };
        let (_, p) = solve_raw(&g.0, &start, &opts).map_err(fail)?.pop().expect("t_end is a checkpoint");
        ptr::copy_nonoverlapping(p.as_ptr(), out, n);
        Ok(())
    })
}
