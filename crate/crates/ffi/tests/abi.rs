use std::ffi::{CStr, CString};
use std::ptr;

use symspace::Error;
use symspace_ffi::*;

const SL2_HEF: &str = r#"{"family": "custom", "basis": [[[1,0],[0,-1]], [[0,1],[0,0]], [[0,0],[1,0]]]}"#;

fn algebra(json: &str) -> *mut SymspaceAlgebra {
    let c = CString::new(json).unwrap();
    let mut out = ptr::null_mut();
    let code = unsafe { symspace_algebra_new(c.as_ptr(), &mut out) };
    assert_eq!(code, SYMSPACE_OK);
    assert!(!out.is_null());
    out
}

fn structure(alg: *const SymspaceAlgebra) -> *mut SymspaceStructure {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { symspace_structure_new(alg, 7, &mut out) }, SYMSPACE_OK);
    out
}

fn last_error() -> String {
    let p = symspace_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn error_constants_match_library_codes() {
    let pairs = [
        (Error::NotClosed { residual: 0.0 }, SYMSPACE_ERR_NOT_CLOSED),
        (Error::DependentBasis, SYMSPACE_ERR_DEPENDENT_BASIS),
        (Error::Degenerate { ratio: 0.0 }, SYMSPACE_ERR_DEGENERATE),
        (Error::CompactType, SYMSPACE_ERR_COMPACT_TYPE),
        (Error::MixedAlgebras, SYMSPACE_ERR_MIXED_ALGEBRAS),
        (Error::InvalidFamily(String::new()), SYMSPACE_ERR_INVALID_FAMILY),
        (
            Error::ThetaNotAutomorphism { residual: 0.0 },
            SYMSPACE_ERR_THETA_NOT_AUTOMORPHISM,
        ),
        (
            Error::BThetaNotPositive { min_eig: 0.0 },
            SYMSPACE_ERR_BTHETA_NOT_POSITIVE,
        ),
        (Error::SeedNotInP { residual: 0.0 }, SYMSPACE_ERR_SEED_NOT_IN_P),
        (Error::SeedNotUnit { norm: 0.0 }, SYMSPACE_ERR_SEED_NOT_UNIT),
        (Error::SeedNotExtendable, SYMSPACE_ERR_SEED_NOT_EXTENDABLE),
        (
            Error::GenericityFailure { attempts: 0 },
            SYMSPACE_ERR_GENERICITY_FAILURE,
        ),
        (Error::NotDecomposable { index: 0 }, SYMSPACE_ERR_NOT_DECOMPOSABLE),
        (Error::H1NotUnit { norm: 0.0 }, SYMSPACE_ERR_H1_NOT_UNIT),
        (Error::H1NotInA { residual: 0.0 }, SYMSPACE_ERR_H1_NOT_IN_A),
        (Error::NotInS { residual: 0.0 }, SYMSPACE_ERR_NOT_IN_S),
        (
            Error::NilpotencyOverflow { step: 0, cap: 0 },
            SYMSPACE_ERR_NILPOTENCY_OVERFLOW,
        ),
        (Error::NonDifferentiable, SYMSPACE_ERR_NON_DIFFERENTIABLE),
        (Error::FlowEscape, SYMSPACE_ERR_FLOW_ESCAPE),
        (
            Error::IndexOutOfRange { index: 0, len: 0 },
            SYMSPACE_ERR_INDEX_OUT_OF_RANGE,
        ),
        (Error::BoundaryMass { boundary: 0.0 }, SYMSPACE_ERR_BOUNDARY_MASS),
        (Error::InvalidGrid(String::new()), SYMSPACE_ERR_INVALID_GRID),
        (Error::BadExponent { p: 0.0, dim: 0 }, SYMSPACE_ERR_BAD_EXPONENT),
        (Error::SupportLeak, SYMSPACE_ERR_SUPPORT_LEAK),
        (Error::NoDecay { value: 0.0 }, SYMSPACE_ERR_NO_DECAY),
        (Error::ZeroDenominator, SYMSPACE_ERR_ZERO_DENOMINATOR),
        (Error::NotDivFree { residual: 0.0 }, SYMSPACE_ERR_NOT_DIV_FREE),
        (Error::NoPositiveRho, SYMSPACE_ERR_NO_POSITIVE_RHO),
        (Error::Config(String::new()), SYMSPACE_ERR_CONFIG),
        (Error::Io(String::new()), SYMSPACE_ERR_IO),
    ];
    for (e, c) in pairs {
        assert_eq!(e.code(), c, "{e}");
        assert!(c > 0);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/symspace.h")).unwrap();
    for name in [
        "symspace_last_error",
        "symspace_algebra_new",
        "symspace_algebra_free",
        "symspace_algebra_dim",
        "symspace_killing_form",
        "symspace_structure_new",
        "symspace_structure_adapted",
        "symspace_structure_free",
        "symspace_structure_rank",
        "symspace_structure_m",
        "symspace_structure_rho",
        "symspace_structure_json",
        "symspace_jacobian_check",
        "symspace_sphere_average",
        "symspace_run_suite",
        "symspace_string_free",
        "SYMSPACE_ERR_NOT_DIV_FREE",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn killing_form_on_sl2() {
    let alg = algebra(SL2_HEF);
    assert_eq!(unsafe { symspace_algebra_dim(alg) }, 3);
    let h = [1.0, 0.0, 0.0];
    let e = [0.0, 1.0, 0.0];
    let f = [0.0, 0.0, 1.0];
    let mut out = f64::NAN;
    unsafe {
        assert_eq!(
            symspace_killing_form(alg, h.as_ptr(), h.as_ptr(), 3, &mut out),
            SYMSPACE_OK
        );
        assert!((out - 8.0).abs() < 1e-12);
        assert_eq!(
            symspace_killing_form(alg, e.as_ptr(), f.as_ptr(), 3, &mut out),
            SYMSPACE_OK
        );
        assert!((out - 4.0).abs() < 1e-12);
        assert_eq!(
            symspace_killing_form(alg, e.as_ptr(), e.as_ptr(), 3, &mut out),
            SYMSPACE_OK
        );
        assert!(out.abs() < 1e-12);
        assert_eq!(
            symspace_killing_form(alg, e.as_ptr(), e.as_ptr(), 2, &mut out),
            SYMSPACE_ERR_LENGTH
        );
        symspace_algebra_free(alg);
    }
}

#[test]
fn structure_of_sl3() {
    let alg = algebra(r#"{"family": "sl", "n": 3}"#);
    let s = structure(alg);
    unsafe {
        assert_eq!(symspace_structure_rank(s), 2);
        assert_eq!(symspace_structure_m(s), 5);
        let mut rho = [0.0; 2];
        assert_eq!(symspace_structure_rho(s, rho.as_mut_ptr(), 2), SYMSPACE_OK);
        assert!(rho.iter().any(|&r| r > 0.0));
        assert_eq!(symspace_structure_rho(s, rho.as_mut_ptr(), 1), SYMSPACE_ERR_LENGTH);

        let t = [0.3, -0.7];
        let (mut lhs, mut rhs) = (0.0, 0.0);
        assert_eq!(
            symspace_jacobian_check(s, t.as_ptr(), 2, &mut lhs, &mut rhs),
            SYMSPACE_OK
        );
        assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs());

        let mut json = ptr::null_mut();
        assert_eq!(symspace_structure_json(s, &mut json), SYMSPACE_OK);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        symspace_string_free(json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["rho"].as_array().unwrap().len(), 2);

        symspace_structure_free(s);
        symspace_algebra_free(alg);
    }
}

#[test]
fn adapted_structure_rejects_non_unit_seed() {
    let alg = algebra(SL2_HEF);
    let v0 = [1.0, 0.0, 0.0];
    let mut out = ptr::null_mut();
    let code = unsafe { symspace_structure_adapted(alg, v0.as_ptr(), 3, 1, &mut out) };
    assert_eq!(code, SYMSPACE_ERR_SEED_NOT_UNIT);
    assert!(out.is_null());
    assert!(last_error().contains("unit"));

    // Killing norm of H is sqrt(8).
    let v0 = [1.0 / 8f64.sqrt(), 0.0, 0.0];
    assert_eq!(
        unsafe { symspace_structure_adapted(alg, v0.as_ptr(), 3, 1, &mut out) },
        SYMSPACE_OK
    );
    unsafe {
        assert_eq!(symspace_structure_m(out), 2);
        symspace_structure_free(out);
        symspace_algebra_free(alg);
    }
}

#[test]
fn bad_inputs_report_codes() {
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(symspace_algebra_new(ptr::null(), &mut out), SYMSPACE_ERR_NULL_POINTER);
        let bad = CString::new("{\"family\": \"sl\",\n \"n\": }").unwrap();
        assert_eq!(symspace_algebra_new(bad.as_ptr(), &mut out), SYMSPACE_ERR_CONFIG);
        assert!(last_error().contains("line 2"));
        let compact = CString::new(r#"{"family": "so", "n": 1}"#).unwrap();
        assert_ne!(symspace_algebra_new(compact.as_ptr(), &mut out), SYMSPACE_OK);
        assert_eq!(symspace_algebra_dim(ptr::null()), 0);
        assert_eq!(symspace_structure_rank(ptr::null()), 0);
        let mut x = 0.0;
        assert_eq!(
            symspace_killing_form(ptr::null(), ptr::null(), ptr::null(), 0, &mut x),
            SYMSPACE_ERR_NULL_POINTER
        );
        symspace_algebra_free(ptr::null_mut());
        symspace_string_free(ptr::null_mut());
    }
}

#[test]
fn sphere_average_matches_closed_form() {
    let u = [1.0, 0.0];
    let up = [0.6, 0.8];
    let (mut mc, mut cf, mut se) = (0.0, 0.0, 0.0);
    let code = unsafe { symspace_sphere_average(u.as_ptr(), up.as_ptr(), 2, 100_000, 3, &mut mc, &mut cf, &mut se) };
    assert_eq!(code, SYMSPACE_OK);
    assert!((cf - 0.3).abs() < 1e-15);
    assert!((mc - cf).abs() <= 3.0 * se);
}

#[test]
fn suite_runs_through_the_abi() {
    let cfg =
        CString::new(r#"{"algebra": {"family": "sl", "n": 2}, "groups": ["lie", "cartan", "sphere"], "seed": 5}"#)
            .unwrap();
    let mut passed = false;
    let mut report = ptr::null_mut();
    unsafe {
        assert_eq!(symspace_run_suite(cfg.as_ptr(), &mut passed, &mut report), SYMSPACE_OK);
        let text = CStr::from_ptr(report).to_str().unwrap().to_owned();
        symspace_string_free(report);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema"], 1);
        assert!(passed, "{text}");
        assert!(v["rows"].as_array().unwrap().len() > 10);

        let bad = CString::new(r#"{"algebra": {"family": "sl", "n": 2}, "bogus": 1}"#).unwrap();
        assert_eq!(
            symspace_run_suite(bad.as_ptr(), &mut passed, &mut report),
            SYMSPACE_ERR_CONFIG
        );
    }
}
