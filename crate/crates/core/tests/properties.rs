use std::sync::{Arc, OnceLock};

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symspace::bump::Bump;
use symspace::cartan::{good_frame, iwasawa, IwasawaStructure};
use symspace::geometry::{divergence, FieldOnS, SChart};
use symspace::lie::{build_algebra, FamilySpec, MatrixLieAlgebra};
use symspace::splitting::{lambda_grid, loglog_slope, mollify_split_rd, Mollifier, Scalar, SplitOptions};
use symspace::suite::ExperimentSpec;
use symspace::verify::{hardy_check, sphere_average_check};

struct Fixture {
    alg: MatrixLieAlgebra,
    iw: IwasawaStructure,
    chart: Arc<SChart>,
}

fn fixture(k: usize) -> &'static Fixture {
    static CELLS: [OnceLock<Fixture>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    CELLS[k].get_or_init(|| {
        let spec = [
            FamilySpec::Sl { n: 2 },
            FamilySpec::Sl { n: 3 },
            FamilySpec::So { n: 3 },
        ][k]
            .clone();
        let alg = build_algebra(&spec).unwrap();
        let iw = iwasawa(&alg, None, 0).unwrap();
        let frame = good_frame(&iw, None).unwrap();
        let chart = Arc::new(SChart::new(&alg, &iw, &frame).unwrap());
        Fixture { alg, iw, chart }
    })
}

fn coords(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, n).prop_map(DVector::from_vec)
}

fn point(m: usize, half: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-half..half, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn killing_form_is_symmetric_and_bilinear(k in 0usize..3, seed in any::<u64>(), a in -3.0..3.0f64) {
        let alg = &fixture(k).alg;
        let n = alg.dim();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut v = || DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
        let (x, y, z) = (v(), v(), v());
        let b = |p: &DVector<f64>, q: &DVector<f64>| alg.killing_coords(p, q);
        prop_assert!((b(&x, &y) - b(&y, &x)).abs() < 1e-10);
        let lhs = b(&(&x * a + &z), &y);
        prop_assert!((lhs - (a * b(&x, &y) + b(&z, &y))).abs() < 1e-9);
    }

    #[test]
    fn killing_form_is_ad_invariant(k in 0usize..3, x in coords(6), y in coords(6), z in coords(6)) {
        let alg = &fixture(k).alg;
        let n = alg.dim();
        let cut = |v: &DVector<f64>| DVector::from_fn(n, |i, _| v[i % 6] * (1.0 + i as f64 / 7.0));
        let (x, y, z) = (cut(&x), cut(&y), cut(&z));
        let lhs = alg.killing_coords(&alg.bracket_coords(&x, &y), &z);
        let rhs = -alg.killing_coords(&y, &alg.bracket_coords(&x, &z));
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn killing_form_is_theta_invariant(k in 0usize..3, x in coords(6), y in coords(6)) {
        let f = fixture(k);
        let n = f.alg.dim();
        let cut = |v: &DVector<f64>| DVector::from_fn(n, |i, _| v[i % 6] - 0.3 * i as f64);
        let (x, y) = (cut(&x), cut(&y));
        let th = &f.iw.cartan.theta;
        let b = |p: &DVector<f64>, q: &DVector<f64>| f.alg.killing_coords(p, q);
        prop_assert!((b(&(th * &x), &(th * &y)) - b(&x, &y)).abs() < 1e-9 * (1.0 + b(&x, &y).abs()));
    }

    #[test]
    fn sl_killing_form_is_2n_trace(n in 2usize..5, seed in any::<u64>()) {
        let alg = build_algebra(&FamilySpec::Sl { n }).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut traceless = || {
            let mut m = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
            let t = m.trace() / n as f64;
            for i in 0..n {
                m[(i, i)] -= t;
            }
            m
        };
        let (x, y) = (traceless(), traceless());
        let b = alg.killing_coords(&alg.coords_of_matrix(&x).0, &alg.coords_of_matrix(&y).0);
        let want = 2.0 * n as f64 * (&x * &y).trace();
        prop_assert!((b - want).abs() < 1e-9 * (1.0 + want.abs()));
    }

    #[test]
    fn group_law_is_associative_with_inverses(k in 0usize..3, x in point(5, 0.8), y in point(5, 0.8), z in point(5, 0.8)) {
        let chart = &fixture(k).chart;
        let m = chart.m();
        let (x, y, z) = (&x[..m], &y[..m], &z[..m]);
        let left = chart.mul(&chart.mul(x, y), z);
        let right = chart.mul(x, &chart.mul(y, z));
        for (a, b) in left.iter().zip(&right) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
        let e = chart.mul(x, &chart.inv(x));
        prop_assert!(e.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn divergence_is_linear(k in 0usize..3, c in -5.0..5.0f64, x in point(5, 0.4), w in point(5, 2.0)) {
        let chart = &fixture(k).chart;
        let m = chart.m();
        let x = &x[..m];
        let w = DVector::from_column_slice(&w[..m]);
        let w2 = w.clone();
        let f = FieldOnS::new(m, Arc::new(move |z: &[f64]| w2.map(|a| (a * z[0]).sin() + z[m - 1] * a)), 1.0);
        let d1 = divergence(&f, chart, x).unwrap();
        let d2 = divergence(&f.scaled(c), chart, x).unwrap();
        prop_assert!((d2 - c * d1).abs() < 1e-6 * (1.0 + d1.abs() * c.abs()));
    }

    #[test]
    fn euclidean_split_is_exact(lambda in 0.01..1.0f64, s in 0.5..3.0f64, p in 1.5..6.0f64, x in -1.0..1.0f64) {
        let w = s * lambda;
        let b = Bump::new(vec![0.0], w, 1.0);
        let sr = mollify_split_rd(&Scalar::from_bump(b.clone()), (&[-w], &[w]), lambda, p, &SplitOptions::for_dim(1)).unwrap();
        let x = [x * 2.0 * w];
        prop_assert!((sr.phi1.eval(&x) + sr.phi2.eval(&x) - b.value(&x)).abs() < 1e-10);
    }

    #[test]
    fn hardy_holds_on_random_bumps(c in -2.0..2.0f64, w in 0.1..2.0f64, lam in 0.2..3.0f64, p in 1.0..6.0f64) {
        let h = Scalar::from_bump(Bump::new(vec![c], w, 1.0));
        let o = hardy_check(&h, lam, p, (c - w - 0.1, c + w + 0.1), 8).unwrap();
        prop_assert!(o.holds, "ratio {}", o.ratio);
    }

    #[test]
    fn loglog_slope_recovers_power_laws(e in -3.0..3.0f64, c in 0.01..100.0f64, count in 3usize..12) {
        let xs = lambda_grid(1.0, 2.0, count);
        for w in xs.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
        let ys: Vec<f64> = xs.iter().map(|x| c * x.powf(e)).collect();
        prop_assert!((loglog_slope(&xs, &ys) - e).abs() < 1e-10);
    }

    #[test]
    fn bumps_vanish_outside_their_box(c in point(3, 1.0), w in 0.05..1.0f64, x in point(3, 3.0)) {
        let b = Bump::new(c, w, 1.0);
        let (lo, hi) = b.support_box();
        let outside = (0..3).any(|i| x[i] <= lo[i] || x[i] >= hi[i]);
        if outside {
            prop_assert_eq!(b.value(&x), 0.0);
        }
    }

    #[test]
    fn malformed_configs_report_position(prefix in "[ \n]{0,5}", junk in "[a-z:,]{1,6}") {
        let text = format!("{prefix}{{\"algebra\": {junk}}}");
        match ExperimentSpec::from_json(&text) {
            Err(e) => prop_assert!(e.to_string().contains("line "), "{e}"),
            Ok(_) => prop_assert!(false, "accepted {text}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sphere_closed_form_is_bilinear(u in coords(5), v in coords(5), seed in any::<u64>()) {
        let o = sphere_average_check(&u, &v, 10_000, seed).unwrap();
        let swapped = sphere_average_check(&v, &u, 10_000, seed).unwrap();
        assert_relative_eq!(o.closed_form, u.dot(&v) / 5.0, epsilon = 1e-14);
        assert_relative_eq!(o.monte_carlo, swapped.monte_carlo, epsilon = 1e-14);
    }
}

#[test]
fn mollifier_mass_is_one() {
    for d in 1..=4 {
        let opts = SplitOptions::for_dim(d);
        let mo = Mollifier::new(d, opts.rule_order);
        assert!((mo.mass() - 1.0).abs() < 1e-10, "d = {d}: mass {}", mo.mass());
        assert!(mo.weights.iter().all(|w| *w >= 0.0));
    }
}
