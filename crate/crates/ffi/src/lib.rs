//! C ABI for `gridfm-core`.
//!
//! Handles are opaque pointers created by `*_new`/`*_load` style functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`GridfmStatus`]; on failure [`gridfm_last_error`] describes what went
//! wrong. State arrays are row-major `n_buses x 4` in `(p, q, v, delta)`
//! order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gridfm_core::case_io::load_grid;
use gridfm_core::grid::{mismatch_inf_norm, Grid, NodeState};
use gridfm_core::masker::entry_masked;
use gridfm_core::nn::{load_checkpoint, Model};
use gridfm_core::pf::{solve_ac, solve_dc, PfError, PfOptions};
use gridfm_core::scenario::binomial;
use gridfm_core::train_eval::{knowns_from_grid, neural_pf};

/// Result codes. `Validation` and `Numeric` match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridfmStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Numeric = 3,
    Io = 4,
    Internal = 5,
}

/// Reduced bus/branch grid.
pub struct GridfmGrid {
    grid: Grid,
}

/// Trained reconstruction model.
pub struct GridfmModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: GridfmStatus, msg: impl Into<String>) -> GridfmStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> GridfmStatus) -> GridfmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(GridfmStatus::Internal, "panic inside gridfm"),
    }
}

fn pf_status(e: &PfError) -> GridfmStatus {
    match e {
        PfError::SingularJacobian { .. } | PfError::SingularSystem => GridfmStatus::Numeric,
        _ => GridfmStatus::Validation,
    }
}

unsafe fn c_str<'a>(s: *const c_char) -> Option<&'a str> {
    if s.is_null() {
        return None;
    }
    CStr::from_ptr(s).to_str().ok()
}

unsafe fn write_state(state: &[NodeState], out: *mut f64) {
    let out = std::slice::from_raw_parts_mut(out, 4 * state.len());
    for (row, s) in out.chunks_exact_mut(4).zip(state) {
        row.copy_from_slice(&s.to_array());
    }
}

/// Message of the last failure on this thread. Valid until the next call
/// into the library from the same thread.
#[no_mangle]
pub extern "C" fn gridfm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse MATPOWER-style case text and reduce it to a grid.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridfm_grid_from_case_text(text: *const c_char, out: *mut *mut GridfmGrid) -> GridfmStatus {
    guard(|| {
        if out.is_null() {
            return fail(GridfmStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(text) = c_str(text) else {
            return fail(GridfmStatus::NullPointer, "case text is null or not UTF-8");
        };
        match load_grid(text) {
            Ok((_, grid)) => {
                *out = Box::into_raw(Box::new(GridfmGrid { grid }));
                GridfmStatus::Ok
            }
            Err(e) => fail(GridfmStatus::Validation, e.to_string()),
        }
    })
}

/// # Safety
/// `grid` must come from [`gridfm_grid_from_case_text`] and not be used
/// afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gridfm_grid_free(grid: *mut GridfmGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Bus count, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridfm_grid_n_buses(grid: *const GridfmGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.n_buses())
}

/// Branch count, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gridfm_grid_n_branches(grid: *const GridfmGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.grid.n_branches())
}

/// Newton-Raphson AC power flow from a flat start. The final iterate is
/// written to `out_state` even when the solve does not converge, in which
/// case `Numeric` is returned.
///
/// # Safety
/// `out_state` must hold `4 * n_buses` doubles; `out_iterations` and
/// `out_residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn gridfm_solve_ac(
    grid: *const GridfmGrid,
    tol: f64,
    max_iter: usize,
    out_state: *mut f64,
    out_iterations: *mut usize,
    out_residual: *mut f64,
) -> GridfmStatus {
    guard(|| {
        let Some(g) = grid.as_ref() else {
            return fail(GridfmStatus::NullPointer, "grid is null");
        };
        if out_state.is_null() {
            return fail(GridfmStatus::NullPointer, "out_state is null");
        }
        let opts = PfOptions {
            tol,
            max_iter,
            ..Default::default()
        };
        match solve_ac(&g.grid, &opts) {
            Ok(sol) => {
                write_state(&sol.state, out_state);
                if let Some(it) = out_iterations.as_mut() {
                    *it = sol.iterations;
                }
                if let Some(r) = out_residual.as_mut() {
                    *r = sol.residual_inf_norm;
                }
                if sol.converged {
                    GridfmStatus::Ok
                } else {
                    fail(GridfmStatus::Numeric, "power flow did not converge")
                }
            }
            Err(e) => fail(pf_status(&e), e.to_string()),
        }
    })
}

/// Linear DC power flow.
///
/// # Safety
/// `out_state` must hold `4 * n_buses` doubles.
#[no_mangle]
pub unsafe extern "C" fn gridfm_solve_dc(grid: *const GridfmGrid, out_state: *mut f64) -> GridfmStatus {
    guard(|| {
        let Some(g) = grid.as_ref() else {
            return fail(GridfmStatus::NullPointer, "grid is null");
        };
        if out_state.is_null() {
            return fail(GridfmStatus::NullPointer, "out_state is null");
        }
        match solve_dc(&g.grid) {
            Ok(state) => {
                write_state(&state, out_state);
                GridfmStatus::Ok
            }
            Err(e) => fail(pf_status(&e), e.to_string()),
        }
    })
}

/// Infinity norm of the nodal balance mismatch of `state` on `grid`.
///
/// # Safety
/// `state` must hold `4 * n_buses` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gridfm_mismatch_inf_norm(
    grid: *const GridfmGrid,
    state: *const f64,
    out: *mut f64,
) -> GridfmStatus {
    guard(|| {
        let Some(g) = grid.as_ref() else {
            return fail(GridfmStatus::NullPointer, "grid is null");
        };
        if state.is_null() || out.is_null() {
            return fail(GridfmStatus::NullPointer, "state or out is null");
        }
        let flat = std::slice::from_raw_parts(state, 4 * g.grid.n_buses());
        let st: Vec<NodeState> = flat
            .chunks_exact(4)
            .map(|r| NodeState::new(r[0], r[1], r[2], r[3]))
            .collect();
        match mismatch_inf_norm(&g.grid, &st) {
            Ok(v) => {
                *out = v;
                GridfmStatus::Ok
            }
            Err(e) => fail(GridfmStatus::Validation, e.to_string()),
        }
    })
}

/// Load a JSON checkpoint. The content hash is verified.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridfm_model_load(path: *const c_char, out: *mut *mut GridfmModel) -> GridfmStatus {
    guard(|| {
        if out.is_null() {
            return fail(GridfmStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(path) = c_str(path) else {
            return fail(GridfmStatus::NullPointer, "path is null or not UTF-8");
        };
        match load_checkpoint(Path::new(path)) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(GridfmModel { model }));
                GridfmStatus::Ok
            }
            Err(gridfm_core::nn::NnError::Io(e)) => fail(GridfmStatus::Io, e.to_string()),
            Err(e) => fail(GridfmStatus::Validation, e.to_string()),
        }
    })
}

/// # Safety
/// `model` must come from [`gridfm_model_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn gridfm_model_free(model: *mut GridfmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Neural power flow: the grid's setpoints are the knowns, the model fills
/// in the rest.
///
/// # Safety
/// `out_state` must hold `4 * n_buses` doubles; `out_residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn gridfm_neural_pf(
    model: *const GridfmModel,
    grid: *const GridfmGrid,
    out_state: *mut f64,
    out_residual: *mut f64,
) -> GridfmStatus {
    guard(|| {
        let (Some(m), Some(g)) = (model.as_ref(), grid.as_ref()) else {
            return fail(GridfmStatus::NullPointer, "model or grid is null");
        };
        if out_state.is_null() {
            return fail(GridfmStatus::NullPointer, "out_state is null");
        }
        match neural_pf(&m.model, &g.grid, &knowns_from_grid(&g.grid, vec![])) {
            Ok((state, residual)) => {
                write_state(&state, out_state);
                if let Some(r) = out_residual.as_mut() {
                    *r = residual;
                }
                GridfmStatus::Ok
            }
            Err(e) => fail(GridfmStatus::Validation, e.to_string()),
        }
    })
}

/// Number of `k`-element contingencies among `n` candidates.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gridfm_contingency_count(n: u64, k: u64, out: *mut u64) -> GridfmStatus {
    guard(|| {
        if out.is_null() {
            return fail(GridfmStatus::NullPointer, "out is null");
        }
        match u64::try_from(binomial(n, k)) {
            Ok(c) => {
                *out = c;
                GridfmStatus::Ok
            }
            Err(_) => fail(GridfmStatus::Numeric, "count does not fit in 64 bits"),
        }
    })
}

/// Random feature mask: `out_bits[4 * bus + feature]` is 1 when hidden.
///
/// # Safety
/// `out_bits` must hold `4 * n_buses` bytes.
#[no_mangle]
pub unsafe extern "C" fn gridfm_mask_random(n_buses: usize, alpha: f64, seed: u64, out_bits: *mut u8) -> GridfmStatus {
    guard(|| {
        if out_bits.is_null() {
            return fail(GridfmStatus::NullPointer, "out_bits is null");
        }
        if !(0.0..=1.0).contains(&alpha) {
            return fail(GridfmStatus::Validation, format!("alpha must lie in [0, 1], got {alpha}"));
        }
        let out = std::slice::from_raw_parts_mut(out_bits, 4 * n_buses);
        for (i, b) in out.iter_mut().enumerate() {
            *b = entry_masked(seed, i as u64, alpha) as u8;
        }
        GridfmStatus::Ok
    })
}
