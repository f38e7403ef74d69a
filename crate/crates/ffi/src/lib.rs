//! C ABI over the symspace toolkit.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `_free` function. Every fallible call returns a status code:
//! `SYMSPACE_OK` on success, a toolkit error code otherwise. The message of the
//! last failure on the calling thread is available from `symspace_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use nalgebra::DVector;
use symspace::cartan::{adapted_structure, good_frame, iwasawa, GoodFrame, IwasawaStructure, StructureSummary};
use symspace::geometry::SChart;
use symspace::lie::{build_algebra, FamilySpec, MatrixLieAlgebra};
use symspace::quadrature::jacobian_check;
use symspace::suite::{run_suite, ExperimentSpec};
use symspace::verify::sphere_average_check;
use symspace::Error;

pub const SYMSPACE_OK: i32 = 0;
pub const SYMSPACE_ERR_NULL_POINTER: i32 = -1;
pub const SYMSPACE_ERR_INVALID_UTF8: i32 = -2;
pub const SYMSPACE_ERR_PANIC: i32 = -3;
pub const SYMSPACE_ERR_LENGTH: i32 = -4;
pub const SYMSPACE_ERR_NOT_CLOSED: i32 = 1;
pub const SYMSPACE_ERR_DEPENDENT_BASIS: i32 = 2;
pub const SYMSPACE_ERR_DEGENERATE: i32 = 3;
pub const SYMSPACE_ERR_COMPACT_TYPE: i32 = 4;
pub const SYMSPACE_ERR_MIXED_ALGEBRAS: i32 = 5;
pub const SYMSPACE_ERR_INVALID_FAMILY: i32 = 6;
pub const SYMSPACE_ERR_THETA_NOT_AUTOMORPHISM: i32 = 10;
pub const SYMSPACE_ERR_BTHETA_NOT_POSITIVE: i32 = 11;
pub const SYMSPACE_ERR_SEED_NOT_IN_P: i32 = 12;
pub const SYMSPACE_ERR_SEED_NOT_UNIT: i32 = 13;
pub const SYMSPACE_ERR_SEED_NOT_EXTENDABLE: i32 = 14;
pub const SYMSPACE_ERR_GENERICITY_FAILURE: i32 = 15;
pub const SYMSPACE_ERR_NOT_DECOMPOSABLE: i32 = 16;
pub const SYMSPACE_ERR_H1_NOT_UNIT: i32 = 17;
pub const SYMSPACE_ERR_H1_NOT_IN_A: i32 = 18;
pub const SYMSPACE_ERR_NOT_IN_S: i32 = 20;
pub const SYMSPACE_ERR_NILPOTENCY_OVERFLOW: i32 = 21;
pub const SYMSPACE_ERR_NON_DIFFERENTIABLE: i32 = 22;
pub const SYMSPACE_ERR_FLOW_ESCAPE: i32 = 23;
pub const SYMSPACE_ERR_INDEX_OUT_OF_RANGE: i32 = 24;
pub const SYMSPACE_ERR_BOUNDARY_MASS: i32 = 30;
pub const SYMSPACE_ERR_INVALID_GRID: i32 = 31;
pub const SYMSPACE_ERR_BAD_EXPONENT: i32 = 40;
pub const SYMSPACE_ERR_SUPPORT_LEAK: i32 = 41;
pub const SYMSPACE_ERR_NO_DECAY: i32 = 50;
pub const SYMSPACE_ERR_ZERO_DENOMINATOR: i32 = 51;
pub const SYMSPACE_ERR_NOT_DIV_FREE: i32 = 52;
pub const SYMSPACE_ERR_NO_POSITIVE_RHO: i32 = 53;
pub const SYMSPACE_ERR_CONFIG: i32 = 60;
pub const SYMSPACE_ERR_IO: i32 = 61;

/// A real semisimple matrix Lie algebra.
pub struct SymspaceAlgebra {
    alg: MatrixLieAlgebra,
}

/// An Iwasawa structure with its good frame and exponential chart on S = NA.
pub struct SymspaceStructure {
    alg: MatrixLieAlgebra,
    iw: IwasawaStructure,
    frame: GoodFrame,
    chart: Arc<SChart>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, recording failures and converting panics into a status.
fn guard<F>(f: F) -> i32
where
    F: FnOnce() -> Result<(), (i32, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SYMSPACE_OK,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside symspace".into());
            SYMSPACE_ERR_PANIC
        }
    }
}

fn lib(e: Error) -> (i32, String) {
    (e.code(), e.to_string())
}

fn null() -> (i32, String) {
    (SYMSPACE_ERR_NULL_POINTER, "null pointer argument".into())
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, (i32, String)> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| (SYMSPACE_ERR_INVALID_UTF8, e.to_string()))
}

unsafe fn read_vec(p: *const f64, len: usize) -> Result<DVector<f64>, (i32, String)> {
    if p.is_null() {
        return Err(null());
    }
    Ok(DVector::from_column_slice(std::slice::from_raw_parts(p, len)))
}

fn to_c_string(s: String) -> Result<*mut c_char, (i32, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| (SYMSPACE_ERR_INVALID_UTF8, e.to_string()))
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn symspace_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Build an algebra from JSON such as `{"family": "sl", "n": 3}`.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn symspace_algebra_new(spec_json: *const c_char, out: *mut *mut SymspaceAlgebra) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let spec = FamilySpec::from_json(read_str(spec_json)?).map_err(lib)?;
        let alg = build_algebra(&spec).map_err(lib)?;
        *out = Box::into_raw(Box::new(SymspaceAlgebra { alg }));
        Ok(())
    })
}

/// # Safety
/// `alg` must come from `symspace_algebra_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn symspace_algebra_free(alg: *mut SymspaceAlgebra) {
    if !alg.is_null() {
        drop(Box::from_raw(alg));
    }
}

/// Dimension of the algebra, 0 for NULL.
///
/// # Safety
/// `alg` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn symspace_algebra_dim(alg: *const SymspaceAlgebra) -> usize {
    alg.as_ref().map_or(0, |a| a.alg.dim())
}

/// Killing form of two elements given by basis coordinates of length `len`.
///
/// # Safety
/// `x` and `y` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn symspace_killing_form(
    alg: *const SymspaceAlgebra,
    x: *const f64,
    y: *const f64,
    len: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let a = &alg.as_ref().ok_or_else(null)?.alg;
        if out.is_null() {
            return Err(null());
        }
        if len != a.dim() {
            return Err((
                SYMSPACE_ERR_LENGTH,
                format!("expected {} coordinates, got {len}", a.dim()),
            ));
        }
        *out = a.killing_coords(&read_vec(x, len)?, &read_vec(y, len)?);
        Ok(())
    })
}

fn make_structure(
    alg: &MatrixLieAlgebra,
    iw: IwasawaStructure,
    frame: GoodFrame,
) -> Result<SymspaceStructure, (i32, String)> {
    let chart = Arc::new(SChart::new(alg, &iw, &frame).map_err(lib)?);
    Ok(SymspaceStructure {
        alg: alg.clone(),
        iw,
        frame,
        chart,
    })
}

/// Iwasawa structure, good frame and chart; `seed` drives genericity retries.
///
/// # Safety
/// `alg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn symspace_structure_new(
    alg: *const SymspaceAlgebra,
    seed: u64,
    out: *mut *mut SymspaceStructure,
) -> i32 {
    guard(|| {
        let a = &alg.as_ref().ok_or_else(null)?.alg;
        if out.is_null() {
            return Err(null());
        }
        let iw = iwasawa(a, None, seed).map_err(lib)?;
        let frame = good_frame(&iw, None).map_err(lib)?;
        *out = Box::into_raw(Box::new(make_structure(a, iw, frame)?));
        Ok(())
    })
}

/// Structure adapted to a unit vector `v0` of p (algebra coordinates).
///
/// # Safety
/// `v0` must point to `len` doubles; `alg` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn symspace_structure_adapted(
    alg: *const SymspaceAlgebra,
    v0: *const f64,
    len: usize,
    seed: u64,
    out: *mut *mut SymspaceStructure,
) -> i32 {
    guard(|| {
        let a = &alg.as_ref().ok_or_else(null)?.alg;
        if out.is_null() {
            return Err(null());
        }
        if len != a.dim() {
            return Err((
                SYMSPACE_ERR_LENGTH,
                format!("expected {} coordinates, got {len}", a.dim()),
            ));
        }
        let (iw, frame) = adapted_structure(a, &read_vec(v0, len)?, seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(make_structure(a, iw, frame)?));
        Ok(())
    })
}

/// # Safety
/// `s` must come from a `symspace_structure_*` constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn symspace_structure_free(s: *mut SymspaceStructure) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Real rank r, 0 for NULL.
///
/// # Safety
/// `s` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn symspace_structure_rank(s: *const SymspaceStructure) -> usize {
    s.as_ref().map_or(0, |s| s.iw.rank())
}

/// m = dim S, 0 for NULL.
///
/// # Safety
/// `s` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn symspace_structure_m(s: *const SymspaceStructure) -> usize {
    s.as_ref().map_or(0, |s| s.chart.m())
}

/// ρ(H_i) on the frame vectors H_1..H_r; `len` must be at least r.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn symspace_structure_rho(s: *const SymspaceStructure, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let s = s.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let r = s.frame.rho.len();
        if len < r {
            return Err((SYMSPACE_ERR_LENGTH, format!("need room for {r} values, got {len}")));
        }
        std::slice::from_raw_parts_mut(out, r).copy_from_slice(s.frame.rho.as_slice());
        Ok(())
    })
}

/// (e^{2ρ(log a)}, det Ad(a)|_n) with log a = Σ t_i H_i in frame coordinates.
///
/// # Safety
/// `t` must point to `len` = r doubles; `lhs` and `rhs` must be valid.
#[no_mangle]
pub unsafe extern "C" fn symspace_jacobian_check(
    s: *const SymspaceStructure,
    t: *const f64,
    len: usize,
    lhs: *mut f64,
    rhs: *mut f64,
) -> i32 {
    guard(|| {
        let s = s.as_ref().ok_or_else(null)?;
        if lhs.is_null() || rhs.is_null() {
            return Err(null());
        }
        if len != s.frame.h.len() {
            return Err((
                SYMSPACE_ERR_LENGTH,
                format!("expected {} coordinates, got {len}", s.frame.h.len()),
            ));
        }
        let t = read_vec(t, len)?;
        let mut h = DVector::zeros(s.alg.dim());
        for (hi, ti) in s.frame.h.iter().zip(t.iter()) {
            h += hi * *ti;
        }
        let (l, r) = jacobian_check(&s.alg, &s.iw, &h);
        *lhs = l;
        *rhs = r;
        Ok(())
    })
}

/// Iwasawa structure and frame as JSON; free the string with `symspace_string_free`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn symspace_structure_json(s: *const SymspaceStructure, out: *mut *mut c_char) -> i32 {
    guard(|| {
        let s = s.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let summary = StructureSummary::new(&s.alg, &s.iw, &s.frame);
        let text = serde_json::to_string(&summary).map_err(|e| (SYMSPACE_ERR_IO, e.to_string()))?;
        *out = to_c_string(text)?;
        Ok(())
    })
}

/// Monte Carlo average of ⟨u,v⟩⟨u',v⟩ over the unit sphere against ⟨u,u'⟩/m.
///
/// # Safety
/// `u`, `up` must point to `m` doubles; the three outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn symspace_sphere_average(
    u: *const f64,
    up: *const f64,
    m: usize,
    samples: usize,
    seed: u64,
    monte_carlo: *mut f64,
    closed_form: *mut f64,
    std_error: *mut f64,
) -> i32 {
    guard(|| {
        if monte_carlo.is_null() || closed_form.is_null() || std_error.is_null() {
            return Err(null());
        }
        let o = sphere_average_check(&read_vec(u, m)?, &read_vec(up, m)?, samples, seed).map_err(lib)?;
        *monte_carlo = o.monte_carlo;
        *closed_form = o.closed_form;
        *std_error = o.std_error;
        Ok(())
    })
}

/// Run the verification suite on a JSON experiment configuration. Returns
/// `SYMSPACE_OK` when the run completed; `passed` tells whether every
/// asserted row passed and `report_json` receives the report.
///
/// # Safety
/// `config_json` must be NUL-terminated; `passed` and `report_json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn symspace_run_suite(
    config_json: *const c_char,
    passed: *mut bool,
    report_json: *mut *mut c_char,
) -> i32 {
    guard(|| {
        if passed.is_null() || report_json.is_null() {
            return Err(null());
        }
        let spec = ExperimentSpec::from_json(read_str(config_json)?).map_err(lib)?;
        let report = run_suite(&spec).map_err(lib)?;
        *passed = report.passed;
        *report_json = to_c_string(report.to_json())?;
        Ok(())
    })
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn symspace_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
