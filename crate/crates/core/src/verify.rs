//! Divergence-free test fields on S and the pairings and inequalities
//! evaluated on them.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bump::Bump;
use crate::cartan::{CartanData, IwasawaStructure};
use crate::error::{Error, Result};
use crate::geometry::{divergence, gradient_norm, CoeffFn, Connection, FieldOnS, JacFn, SChart, FD_STEP};
use crate::quadrature::{integrate, integrate_box, DensityMode, GridSpec, QuadratureGrid};
use crate::splitting::Scalar;

/// Largest RK4 step used when solving for the first frame component.
pub const ODE_STEP: f64 = 1e-3;
/// |f¹| tolerated on the outflow face of the box.
pub const DECAY_TOL: f64 = 1e-10;
/// Normalized divergence residual accepted by the pairings.
pub const DIVFREE_TOL: f64 = 1e-6;
/// Slack on the one-dimensional weighted Hardy inequality.
pub const HARDY_SLACK: f64 = 1e-8;
/// Slack on the Hardy inequality on S.
pub const MANIFOLD_HARDY_SLACK: f64 = 1e-6;
/// Grid points inspected by the divergence residual check.
const RESIDUAL_POINTS: usize = 512;

/// ψ(x) contributes ∂_b ψ to coordinate a and -∂_a ψ to coordinate b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamTerm {
    pub plane: [usize; 2],
    pub bump: Bump,
}

/// A bump placed in one frame component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentBump {
    pub component: usize,
    pub bump: Bump,
}

/// How a divergence-free field is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DivFreeSpec {
    /// F = e^{2ρ(t)} G with G a Euclidean stream-function field in NA
    /// coordinates; f = M⁻¹F. Exactly divergence free and compactly supported.
    Stream { terms: Vec<StreamTerm> },
    /// Free components f^2..f^m from bumps; f^1 solves
    /// X_1 f^1 - 2ρ(H_1) f^1 = -(Σ_{ℓ≥2} X_ℓ f^ℓ - 2 Σ_{i≥2} ρ(H_i) f^i)
    /// along t^1 with zero data on the upper face of the box.
    Ode { components: Vec<ComponentBump> },
}

fn bump_dim_ok(b: &Bump, m: usize) -> Result<()> {
    if b.dim() != m {
        return Err(Error::Config(format!("bump has dimension {}, expected {m}", b.dim())));
    }
    if !(b.width > 0.0) || !b.width.is_finite() || !b.amplitude.is_finite() {
        return Err(Error::Config(format!("bump width must be positive, got {}", b.width)));
    }
    Ok(())
}

fn bump_inside(b: &Bump, grid: &GridSpec) -> Result<()> {
    let (lo, hi) = b.support_box();
    let inside = (0..lo.len()).all(|i| lo[i] >= grid.lo[i] && hi[i] <= grid.hi[i]);
    if inside {
        Ok(())
    } else {
        Err(Error::SupportLeak)
    }
}

/// Build a divergence-free field on S from bump data.
pub fn make_divfree_field(spec: &DivFreeSpec, chart: &Arc<SChart>, grid: &GridSpec) -> Result<FieldOnS> {
    let m = chart.m();
    if grid.dim() != m {
        return Err(Error::InvalidGrid(format!(
            "grid has dimension {}, expected {m}",
            grid.dim()
        )));
    }
    match spec {
        DivFreeSpec::Stream { terms } => {
            for t in terms {
                bump_dim_ok(&t.bump, m)?;
                let [a, b] = t.plane;
                if a >= m || b >= m || a == b {
                    return Err(Error::Config(format!("invalid stream plane [{a}, {b}]")));
                }
                bump_inside(&t.bump, grid)?;
            }
            Ok(stream_field(chart.clone(), terms.clone()))
        }
        DivFreeSpec::Ode { components } => {
            for c in components {
                bump_dim_ok(&c.bump, m)?;
                if c.component == 0 || c.component >= m {
                    return Err(Error::Config(format!(
                        "free component {} must be in 1..{m}",
                        c.component
                    )));
                }
                bump_inside(&c.bump, grid)?;
            }
            ode_field(chart.clone(), components.clone(), grid)
        }
    }
}

fn min_width(ws: impl Iterator<Item = f64>) -> f64 {
    let w = ws.fold(f64::INFINITY, f64::min);
    if w.is_finite() {
        w
    } else {
        1.0
    }
}

/// G and ∂G for the stream terms at x.
fn stream_g(terms: &[StreamTerm], x: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let m = x.len();
    let mut g = DVector::zeros(m);
    let mut dg = DMatrix::zeros(m, m);
    for t in terms {
        let [a, b] = t.plane;
        let grad = t.bump.gradient(x);
        if grad.iter().all(|v| *v == 0.0) {
            continue;
        }
        let hess = t.bump.hessian(x);
        g[a] += grad[b];
        g[b] -= grad[a];
        for c in 0..m {
            dg[(a, c)] += hess[(b, c)];
            dg[(b, c)] -= hess[(a, c)];
        }
    }
    (g, dg)
}

fn stream_field(chart: Arc<SChart>, terms: Vec<StreamTerm>) -> FieldOnS {
    let m = chart.m();
    let r = chart.rank();
    let scale = min_width(terms.iter().map(|t| t.bump.width));
    let terms = Arc::new(terms);
    let (c1, t1) = (chart.clone(), terms.clone());
    let value: CoeffFn = Arc::new(move |x| {
        let (g, _) = stream_g(&t1, x);
        if g.iter().all(|v| *v == 0.0) {
            return g;
        }
        let w = c1.two_rho(&x[..r]).exp();
        c1.frame_matrix(x)
            .lu()
            .solve(&(g * w))
            .unwrap_or_else(|| DVector::from_element(m, f64::NAN))
    });
    let jac: JacFn = Arc::new(move |x| {
        let (g, dg) = stream_g(&terms, x);
        if g.iter().all(|v| *v == 0.0) && dg.iter().all(|v| *v == 0.0) {
            return DMatrix::zeros(m, m);
        }
        let w = chart.two_rho(&x[..r]).exp();
        let lu = chart.frame_matrix(x).lu();
        let f = lu
            .solve(&(&g * w))
            .unwrap_or_else(|| DVector::from_element(m, f64::NAN));
        let parts = chart.frame_matrix_partials(x);
        let mut out = DMatrix::zeros(m, m);
        for c in 0..m {
            let mut df = dg.column(c) * w;
            if c < r {
                df += &g * (2.0 * chart.rho[c] * w);
            }
            let rhs = df - &parts[c] * &f;
            let col = lu.solve(&rhs).unwrap_or_else(|| DVector::from_element(m, f64::NAN));
            out.set_column(c, &col);
        }
        out
    });
    FieldOnS::with_jacobian(m, value, jac, scale)
}

/// Frame field with f^ℓ = Σ of the bumps placed in component ℓ (any ℓ).
pub fn bump_field(m: usize, comps: Vec<ComponentBump>) -> Result<FieldOnS> {
    for c in &comps {
        bump_dim_ok(&c.bump, m)?;
        if c.component >= m {
            return Err(Error::IndexOutOfRange {
                index: c.component,
                len: m,
            });
        }
    }
    let scale = min_width(comps.iter().map(|c| c.bump.width));
    let comps = Arc::new(comps);
    let c1 = comps.clone();
    let value: CoeffFn = Arc::new(move |x| {
        let mut f = DVector::zeros(m);
        for c in c1.iter() {
            f[c.component] += c.bump.value(x);
        }
        f
    });
    let jac: JacFn = Arc::new(move |x| {
        let mut j = DMatrix::zeros(m, m);
        for c in comps.iter() {
            let g = c.bump.gradient(x);
            for k in 0..m {
                j[(c.component, k)] += g[k];
            }
        }
        j
    });
    Ok(FieldOnS::with_jacobian(m, value, jac, scale))
}

/// Solver for the first frame component of the ODE construction.
struct OdeSolver {
    chart: Arc<SChart>,
    free: FieldOnS,
    t_hi: f64,
}

impl OdeSolver {
    /// Σ_{ℓ≥2} X_ℓ f^ℓ - 2 Σ_{i≥2} ρ(H_i) f^i at x.
    fn source(&self, x: &[f64]) -> f64 {
        let f = self.free.eval(x);
        let d = self
            .free
            .frame_derivatives(&self.chart, x)
            .unwrap_or_else(|_| DMatrix::from_element(f.len(), f.len(), f64::NAN));
        let mut s = 0.0;
        for l in 1..f.len() {
            s += d[(l, l)];
        }
        for i in 1..self.chart.rank() {
            s -= 2.0 * self.chart.rho[i] * f[i];
        }
        s
    }

    /// f^1 at x by RK4 from t^1 = t_hi down to x[0] with `n` steps.
    fn integrate(&self, x: &[f64], n: usize) -> f64 {
        let k = 2.0 * self.chart.rho[0];
        let h = (x[0] - self.t_hi) / n as f64;
        let mut p = x.to_vec();
        let mut y = 0.0;
        let rhs = |p: &mut Vec<f64>, s: f64, y: f64| -> f64 {
            p[0] = s;
            k * y - self.source(p)
        };
        let mut s = self.t_hi;
        for _ in 0..n {
            let k1 = rhs(&mut p, s, y);
            let k2 = rhs(&mut p, s + 0.5 * h, y + 0.5 * h * k1);
            let k3 = rhs(&mut p, s + 0.5 * h, y + 0.5 * h * k2);
            let k4 = rhs(&mut p, s + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            s += h;
        }
        y
    }

    fn steps(&self, x: &[f64]) -> usize {
        (((self.t_hi - x[0]).abs() / ODE_STEP).ceil() as usize).max(2)
    }

    /// Richardson-extrapolated f^1 and the error estimate |f_h - f_{2h}| / 15.
    fn solve(&self, x: &[f64]) -> (f64, f64) {
        if x[0] >= self.t_hi {
            return (0.0, 0.0);
        }
        let n = self.steps(x);
        let fine = self.integrate(x, 2 * n);
        let coarse = self.integrate(x, n);
        let err = (fine - coarse) / 15.0;
        (fine + err, err.abs())
    }
}

fn ode_field(chart: Arc<SChart>, comps: Vec<ComponentBump>, grid: &GridSpec) -> Result<FieldOnS> {
    let m = chart.m();
    let free = bump_field(m, comps)?;
    let scale = free.length_scale;
    let solver = Arc::new(OdeSolver {
        chart: chart.clone(),
        free: free.clone(),
        t_hi: grid.hi[0],
    });
    // Decay and accuracy on the outflow face t^1 = lo.
    let mut face = grid.clone();
    face.lo[0] = grid.lo[0];
    face.hi[0] = grid.lo[0];
    let k = 4usize;
    let count = k.pow((m - 1) as u32);
    for flat in 0..count {
        let mut rem = flat;
        let mut x = vec![grid.lo[0]; m];
        for j in 1..m {
            let i = rem % k;
            rem /= k;
            x[j] = grid.lo[j] + (grid.hi[j] - grid.lo[j]) * (i as f64 + 0.37) / k as f64;
        }
        let (v, err) = solver.solve(&x);
        if v.abs() > DECAY_TOL {
            return Err(Error::NoDecay { value: v.abs() });
        }
        if err > DECAY_TOL {
            return Err(Error::NotDivFree { residual: err });
        }
    }
    let (s1, f1) = (solver.clone(), free.clone());
    let value: CoeffFn = Arc::new(move |x| {
        let mut f = f1.eval(x);
        f[0] = s1.solve(x).0;
        f
    });
    let (s2, f2) = (solver, free);
    let jac: JacFn = Arc::new(move |x| {
        let mut j = f2
            .coord_jacobian(x)
            .unwrap_or_else(|_| DMatrix::from_element(m, m, f64::NAN));
        let f1v = s2.solve(x).0;
        // ∂_{t^1} f^1 = X_1 f^1 is fixed by the divergence-free condition; the rest by differences.
        j[(0, 0)] = 2.0 * s2.chart.rho[0] * f1v - s2.source(x);
        let h = FD_STEP * scale;
        let mut xp = x.to_vec();
        for c in 1..m {
            xp[c] = x[c] + h;
            let a = s2.solve(&xp).0;
            xp[c] = x[c] - h;
            let b = s2.solve(&xp).0;
            xp[c] = x[c];
            j[(0, c)] = (a - b) / (2.0 * h);
        }
        j
    });
    Ok(FieldOnS::with_jacobian(m, value, jac, scale))
}

/// max |div f| / (1 + max |∇f|) over (a subsample of) the grid nodes in supp f.
pub fn divergence_residual(field: &FieldOnS, chart: &SChart, grid: &GridSpec) -> Result<f64> {
    let q = QuadratureGrid::new(grid)?;
    let pts: Vec<Vec<f64>> = q
        .points()
        .into_iter()
        .map(|(x, _)| x)
        .filter(|x| field.eval(x).amax() > 0.0)
        .collect();
    // a prime multiplier scatters the subset across every axis; a plain
    // stride can alias with the nodes per axis
    const SCATTER: usize = 1_000_003;
    let n = pts.len();
    let picks: Vec<usize> = if n <= RESIDUAL_POINTS {
        (0..n).collect()
    } else {
        (0..RESIDUAL_POINTS).map(|k| (k * SCATTER + 17) % n).collect()
    };
    let mut worst_div = 0.0f64;
    let mut worst_grad = 0.0f64;
    for x in picks.iter().map(|&k| &pts[k]) {
        worst_div = worst_div.max(divergence(field, chart, x)?.abs());
        worst_grad = worst_grad.max(field.frame_derivatives(chart, x)?.amax());
    }
    Ok(worst_div / (1.0 + worst_grad))
}

/// |∫⟨f, φ⟩ dV| / (‖f‖_{L¹(dV)} ‖∇φ‖_{L^m(dV)}) with its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbRatio {
    pub ratio: f64,
    pub pairing: f64,
    pub f_l1: f64,
    pub grad_phi_lm: f64,
    /// Normalized divergence residual of f.
    pub residual: f64,
    /// Quadrature error estimates of the three integrals.
    pub errors: [f64; 3],
}

/// Evaluate the main pairing ratio by quadrature against the Riemannian volume.
pub fn bb_ratio(f: &FieldOnS, phi: &FieldOnS, chart: &SChart, grid: &GridSpec) -> Result<BbRatio> {
    let m = chart.m();
    let spec = grid.clone().with_density(DensityMode::DvViaNa);
    let residual = divergence_residual(f, chart, &spec)?;
    if residual > DIVFREE_TOL {
        return Err(Error::NotDivFree { residual });
    }
    let conn = Connection::killing(chart);
    let (pairing, e1) = integrate(chart, |x| f.eval(x).dot(&phi.eval(x)), &spec)?;
    let (f_l1, e2) = integrate(chart, |x| f.eval(x).norm(), &spec)?;
    let (g, e3) = integrate(
        chart,
        |x| gradient_norm(phi, chart, &conn, x).unwrap_or(f64::NAN).powi(m as i32),
        &spec,
    )?;
    let grad_phi_lm = g.max(0.0).powf(1.0 / m as f64);
    let den = f_l1 * grad_phi_lm;
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator);
    }
    Ok(BbRatio {
        ratio: pairing.abs() / den,
        pairing,
        f_l1,
        grad_phi_lm,
        residual,
        errors: [e1, e2, e3],
    })
}

/// Bounding box of g·box, from the images of boundary samples, with a margin.
pub fn translated_grid(chart: &SChart, grid: &GridSpec, g: &[f64]) -> GridSpec {
    let d = grid.dim();
    let k = 5usize;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut exact = true;
    for flat in 0..k.pow(d as u32) {
        let mut rem = flat;
        let mut x = vec![0.0; d];
        let mut on_face = false;
        for j in 0..d {
            let i = rem % k;
            rem /= k;
            on_face |= i == 0 || i == k - 1;
            x[j] = grid.lo[j] + (grid.hi[j] - grid.lo[j]) * i as f64 / (k - 1) as f64;
        }
        if !on_face {
            continue;
        }
        let y = chart.mul(g, &x);
        for j in 0..d {
            lo[j] = lo[j].min(y[j]);
            hi[j] = hi[j].max(y[j]);
        }
    }
    // Left translation is affine in these coordinates when n is abelian.
    if chart.step > 1 {
        exact = false;
    }
    if !exact {
        for j in 0..d {
            let pad = 0.05 * (hi[j] - lo[j]);
            lo[j] -= pad;
            hi[j] += pad;
        }
    }
    GridSpec { lo, hi, ..grid.clone() }
}

/// Ingredients of the codimension-one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codim1 {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// ‖f(na')‖_{L¹(dn da')}.
    pub l1_slice: f64,
    /// ‖f(na)‖_{L¹(dn da)}.
    pub l1_full: f64,
    /// ‖φ(a'n)‖_{W^{1,m}(dn da')}.
    pub w1m: f64,
}

fn leak(e: Error) -> Error {
    match e {
        Error::BoundaryMass { .. } => Error::SupportLeak,
        other => other,
    }
}

/// The codimension-one estimate for a chart adapted to v0 (X_1 = H_1 = v0).
/// `grid` is a box in NA coordinates of S containing the supports.
pub fn codim1_pairing(f: &FieldOnS, phi: &FieldOnS, chart: &SChart, grid: &GridSpec) -> Result<Codim1> {
    let m = chart.m();
    let r = chart.rank();
    let mf = m as f64;
    let full = GridSpec {
        density: DensityMode::DnDa,
        ..grid.clone()
    };
    let residual = divergence_residual(f, chart, &full)?;
    if residual > DIVFREE_TOL {
        return Err(Error::NotDivFree { residual });
    }
    let slice = GridSpec {
        lo: grid.lo[1..].to_vec(),
        hi: grid.hi[1..].to_vec(),
        density: DensityMode::DnDa,
        ..grid.clone()
    };
    let embed = |xp: &[f64]| chart.embed_sprime(xp);
    let (lhs, _) = integrate_box(
        |xp| {
            let x = embed(xp);
            f.eval(&x)[0] * phi.eval(&x)[0]
        },
        &slice,
    )
    .map_err(leak)?;
    let (l1_slice, _) = integrate_box(|xp| f.eval(&embed(xp)).norm(), &slice).map_err(leak)?;
    let (l1_full, _) = integrate_box(|x| f.eval(x).norm(), &full).map_err(leak)?;
    // a'n = exp(T') exp(Y(y')) has NA coordinates y = e^{α(t')} y'.
    let alpha_t = |tp: &[f64]| {
        let mut t = vec![0.0];
        t.extend_from_slice(tp);
        chart.alpha_t(&t)
    };
    let mut an = slice.clone();
    let corners = 1usize << (r - 1);
    for j in 0..chart.n_dim() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in 0..corners {
            let tp: Vec<f64> = (0..r - 1)
                .map(|i| if c >> i & 1 == 1 { slice.hi[i] } else { slice.lo[i] })
                .collect();
            let s = (-alpha_t(&tp)[j]).exp();
            lo = lo.min(slice.lo[r - 1 + j] * s);
            hi = hi.max(slice.hi[r - 1 + j] * s);
        }
        an.lo[r - 1 + j] = lo;
        an.hi[r - 1 + j] = hi;
    }
    let to_na = |xp: &[f64]| {
        let at = alpha_t(&xp[..r - 1]);
        let mut x = embed(xp);
        for j in 0..chart.n_dim() {
            x[r + j] *= at[j].exp();
        }
        x
    };
    let conn = Connection::killing(chart);
    let (pm, _) = integrate_box(|xp| phi.eval(&to_na(xp)).norm().powf(mf), &an).map_err(leak)?;
    let (gm, _) = integrate_box(
        |xp| {
            gradient_norm(phi, chart, &conn, &to_na(xp))
                .unwrap_or(f64::NAN)
                .powf(mf)
        },
        &an,
    )
    .map_err(leak)?;
    let w1m = pm.max(0.0).powf(1.0 / mf) + gm.max(0.0).powf(1.0 / mf);
    let lhs = lhs.abs();
    let rhs = l1_slice.powf(1.0 - 1.0 / mf) * l1_full.powf(1.0 / mf) * w1m;
    let ratio = if lhs == 0.0 {
        0.0
    } else if rhs > 0.0 {
        lhs / rhs
    } else {
        return Err(Error::ZeroDenominator);
    };
    Ok(Codim1 {
        lhs,
        rhs,
        ratio,
        l1_slice,
        l1_full,
        w1m,
    })
}

/// Both sides of the weighted one-dimensional Hardy inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardyOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub holds: bool,
}

fn outcome(lhs: f64, rhs: f64, slack: f64) -> HardyOutcome {
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    HardyOutcome {
        lhs,
        rhs,
        ratio,
        holds: lhs <= rhs * (1.0 + slack),
    }
}

/// ∫|h|^p e^{-λτ} ≤ (p/λ)^p ∫|h'|^p e^{-λτ} on an interval containing supp h.
pub fn hardy_check(h: &Scalar, lambda: f64, p: f64, interval: (f64, f64), panels: usize) -> Result<HardyOutcome> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Config(format!("p must be at least 1, got {p}")));
    }
    let (a, b) = interval;
    if h.eval(&[a]) != 0.0 || h.eval(&[b]) != 0.0 {
        return Err(Error::SupportLeak);
    }
    let spec = GridSpec::new(vec![a], vec![b], 24)
        .with_panels(panels.max(1))
        .truncated();
    let (l, _) = integrate_box(|t| h.eval(t).abs().powf(p) * (-lambda * t[0]).exp(), &spec)?;
    let (r, _) = integrate_box(|t| h.gradient(t)[0].abs().powf(p) * (-lambda * t[0]).exp(), &spec)?;
    Ok(outcome(l, (p / lambda).powf(p) * r, HARDY_SLACK))
}

/// ‖φ‖_{L^p(dV)} against (p / 2ρ(H)) ‖∇φ‖_{L^p(dV)}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldHardy {
    pub lhs: f64,
    pub grad_lp: f64,
    /// p / (2ρ(H)) with H the unit maximizer of ρ on a.
    pub constant: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub holds: bool,
}

/// Hardy inequality on S with the constant p / (2 max_{|H|=1} ρ(H)).
pub fn manifold_hardy_check(phi: &FieldOnS, p: f64, chart: &SChart, grid: &GridSpec) -> Result<ManifoldHardy> {
    let rho = chart.rho.norm();
    if !(rho > 0.0) {
        return Err(Error::NoPositiveRho);
    }
    let constant = p / (2.0 * rho);
    let spec = grid.clone().with_density(DensityMode::DvViaNa);
    let conn = Connection::killing(chart);
    let (a, _) = integrate(chart, |x| phi.eval(x).norm().powf(p), &spec)?;
    let (g, _) = integrate(
        chart,
        |x| gradient_norm(phi, chart, &conn, x).unwrap_or(f64::NAN).powf(p),
        &spec,
    )?;
    let lhs = a.max(0.0).powf(1.0 / p);
    let grad_lp = g.max(0.0).powf(1.0 / p);
    let o = outcome(lhs, constant * grad_lp, MANIFOLD_HARDY_SLACK);
    Ok(ManifoldHardy {
        lhs,
        grad_lp,
        constant,
        rhs: o.rhs,
        ratio: o.ratio,
        holds: o.holds,
    })
}

/// Monte Carlo average of ⟨u, v⟩⟨u', v⟩ over the unit sphere of p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereAverage {
    pub monte_carlo: f64,
    pub closed_form: f64,
    pub std_error: f64,
    /// |monte_carlo - closed_form| / std_error.
    pub z: f64,
    pub within_3sigma: bool,
}

/// Minimum sample count for the sphere average.
pub const SPHERE_MIN_SAMPLES: usize = 10_000;

/// u, u' are coordinates in an orthonormal basis of p; v is uniform on the sphere.
pub fn sphere_average_check(u: &DVector<f64>, up: &DVector<f64>, samples: usize, seed: u64) -> Result<SphereAverage> {
    if samples < SPHERE_MIN_SAMPLES {
        return Err(Error::Config(format!(
            "need at least {SPHERE_MIN_SAMPLES} samples, got {samples}"
        )));
    }
    if u.len() != up.len() || u.is_empty() {
        return Err(Error::IndexOutOfRange {
            index: up.len(),
            len: u.len(),
        });
    }
    let m = u.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let v = DVector::from_iterator(m, (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let v = &v / v.norm();
        let x = u.dot(&v) * up.dot(&v);
        s += x;
        s2 += x * x;
    }
    let n = samples as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    let std_error = (var / n).sqrt();
    let closed_form = u.dot(up) / m as f64;
    let diff = (mean - closed_form).abs();
    let z = if std_error > 0.0 {
        diff / std_error
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(SphereAverage {
        monte_carlo: mean,
        closed_form,
        std_error,
        z,
        within_3sigma: z <= 3.0,
    })
}

const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    inv = r;
    inv
}

/// A sampled direction v0 ∈ p with unit Killing norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V0Sample {
    /// Algebra coordinates.
    pub vector: Vec<f64>,
    /// Distance-to-wall stress case rather than a low-discrepancy point.
    pub wall_adjacent: bool,
}

/// Halton points on [0,1]^k pushed to the unit sphere of p through Box–Muller.
pub fn halton_sphere(dim: usize, count: usize, offset: u64) -> Vec<DVector<f64>> {
    let pairs = dim.div_ceil(2);
    assert!(
        2 * pairs <= PRIMES.len(),
        "dimension of p too large for the Halton table"
    );
    let mut out = Vec::with_capacity(count);
    let mut i = offset + 1;
    while out.len() < count {
        let mut g = Vec::with_capacity(2 * pairs);
        for k in 0..pairs {
            let u1 = radical_inverse(i, PRIMES[2 * k]).max(1e-300);
            let u2 = radical_inverse(i, PRIMES[2 * k + 1]);
            let rad = (-2.0 * u1.ln()).sqrt();
            let th = 2.0 * std::f64::consts::PI * u2;
            g.push(rad * th.cos());
            g.push(rad * th.sin());
        }
        i += 1;
        let v = DVector::from_iterator(dim, g.into_iter().take(dim));
        let n = v.norm();
        if n > 1e-8 {
            out.push(v / n);
        }
    }
    out
}

/// `count` low-discrepancy directions in p plus, for every positive root α,
/// two unit H ∈ a at distance 5e-4 from the wall α = 0 (one on each side).
pub fn sample_v0(cartan: &CartanData, iw: &IwasawaStructure, count: usize, seed: u64) -> Vec<V0Sample> {
    let dim = cartan.p_basis.first().map_or(0, |v| v.len());
    let mut out = Vec::new();
    for c in halton_sphere(cartan.p_basis.len(), count, seed % 4096) {
        let mut v = DVector::zeros(dim);
        for (k, p) in cartan.p_basis.iter().enumerate() {
            v += p * c[k];
        }
        out.push(V0Sample {
            vector: v.as_slice().to_vec(),
            wall_adjacent: false,
        });
    }
    let r = iw.rank();
    if r < 2 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &k in &iw.positive.positive {
        let a = iw.roots.roots[k].values_vec();
        let an = a.norm();
        if an == 0.0 {
            continue;
        }
        let ahat = &a / an;
        let mut w = DVector::from_iterator(r, (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)));
        w -= &ahat * ahat.dot(&w);
        let w = &w / w.norm().max(1e-300);
        for s in [1.0, -1.0] {
            let h = (&w + &ahat * (5e-4 * s)).normalize();
            let v = iw.a_element(&h);
            out.push(V0Sample {
                vector: v.as_slice().to_vec(),
                wall_adjacent: true,
            });
        }
    }
    out
}

/// Random stream-function field data: `terms` bumps around `center`.
pub fn random_stream_spec(
    rng: &mut impl Rng,
    m: usize,
    center: &[f64],
    spread: f64,
    width: f64,
    amplitude: f64,
    terms: usize,
) -> DivFreeSpec {
    let terms = (0..terms)
        .map(|_| {
            let a = rng.random_range(0..m);
            let mut b = rng.random_range(0..m - 1);
            if b >= a {
                b += 1;
            }
            let c: Vec<f64> = center
                .iter()
                .map(|c| c + spread * rng.random_range(-1.0..1.0))
                .collect();
            let w = width * rng.random_range(0.6..1.0);
            let amp = amplitude * rng.random_range(-1.0..1.0);
            StreamTerm {
                plane: [a, b],
                bump: Bump::new(c, w, amp),
            }
        })
        .collect();
    DivFreeSpec::Stream { terms }
}

/// Make sure some stream term acts on frame component `component`, so that
/// the field has a nonzero `component` coefficient.
pub fn stream_through(spec: DivFreeSpec, component: usize) -> DivFreeSpec {
    match spec {
        DivFreeSpec::Stream { mut terms } => {
            if !terms.iter().any(|t| t.plane.contains(&component)) {
                if let Some(t) = terms.first_mut() {
                    t.plane[0] = component;
                }
            }
            DivFreeSpec::Stream { terms }
        }
        other => other,
    }
}

/// Random bump data in random frame components.
pub fn random_component_bumps(
    rng: &mut impl Rng,
    m: usize,
    center: &[f64],
    spread: f64,
    width: f64,
    amplitude: f64,
    count: usize,
) -> Vec<ComponentBump> {
    (0..count)
        .map(|_| {
            let c: Vec<f64> = center
                .iter()
                .map(|c| c + spread * rng.random_range(-1.0..1.0))
                .collect();
            ComponentBump {
                component: rng.random_range(0..m),
                bump: Bump::new(
                    c,
                    width * rng.random_range(0.6..1.0),
                    amplitude * rng.random_range(-1.0..1.0),
                ),
            }
        })
        .collect()
}

/// Box covering center ± (spread + width) in every coordinate.
pub fn covering_grid(center: &[f64], spread: f64, width: f64, order: usize) -> GridSpec {
    let h = spread + width;
    GridSpec::new(
        center.iter().map(|c| c - h).collect(),
        center.iter().map(|c| c + h).collect(),
        order,
    )
}

/// Smooth field with coefficients f^ℓ = a_ℓ + b_ℓ·x + c_ℓ sin(w_ℓ·x) and an
/// exact coordinate Jacobian; not compactly supported, for pointwise checks.
pub fn random_smooth_field(rng: &mut impl Rng, m: usize) -> FieldOnS {
    let mut draw = |n: usize, s: f64| DVector::from_iterator(n, (0..n).map(|_| s * rng.random_range(-1.0..1.0)));
    let a = draw(m, 1.0);
    let c = draw(m, 1.0);
    let b: Vec<DVector<f64>> = (0..m).map(|_| draw(m, 1.0)).collect();
    let w: Vec<DVector<f64>> = (0..m).map(|_| draw(m, 2.0)).collect();
    let (b2, w2, c2) = (b.clone(), w.clone(), c.clone());
    let value: CoeffFn = Arc::new(move |x: &[f64]| {
        let x = DVector::from_column_slice(x);
        DVector::from_fn(m, |l, _| a[l] + b[l].dot(&x) + c[l] * w[l].dot(&x).sin())
    });
    let jac: JacFn = Arc::new(move |x: &[f64]| {
        let x = DVector::from_column_slice(x);
        DMatrix::from_fn(m, m, |l, k| b2[l][k] + c2[l] * w2[l].dot(&x).cos() * w2[l][k])
    });
    FieldOnS::with_jacobian(m, value, jac, 1.0)
}
