//! The λ-mollification splitting Φ = Φ₁ + Φ₂ on ℝ^d and on the codimension
//! one subgroup S' = A'N, with sup / L^p measurements of both pieces.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bump::Bump;
use crate::error::{Error, Result};
use crate::geometry::SChart;
use crate::quadrature::{gauss_legendre, GridSpec, QuadratureGrid};

/// Case 2 of the S' splitting applies when λ < ε₀ / C1.
pub const C1: f64 = 4.0;
/// Upper cap for the comparability radius ε₀.
pub const EPS0_CAP: f64 = 10.0;
/// Singular values of the S' frame matrix must stay in [1/K, K] on the ε₀ ball.
const COMPARABILITY: f64 = 2.0;
/// Random directions probed (besides ±e_i) when bisecting for ε₀.
const EPS0_DIRECTIONS: usize = 32;
/// Every this many sup samples Φ₁ is evaluated on its own as a consistency check.
const EXACTNESS_STRIDE: usize = 7;

pub type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;

/// A scalar function with its gradient. On ℝ^d the gradient is Euclidean;
/// on S' it is the frame gradient (X_2 Φ, ..., X_m Φ).
#[derive(Clone)]
pub struct Scalar {
    pub dim: usize,
    pub value: ValueFn,
    pub grad: GradFn,
}

impl std::fmt::Debug for Scalar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scalar").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl Scalar {
    pub fn new(dim: usize, value: ValueFn, grad: GradFn) -> Self {
        Self { dim, value, grad }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, Arc::new(|_| 0.0), Arc::new(move |_| DVector::zeros(dim)))
    }

    /// A Euclidean bump on ℝ^d.
    pub fn from_bump(b: Bump) -> Self {
        let b = Arc::new(b);
        let b2 = b.clone();
        Self::new(
            b.dim(),
            Arc::new(move |x| b.value(x)),
            Arc::new(move |x| b2.gradient(x)),
        )
    }

    /// The bump b, written in NA' coordinates of S', left translated by g:
    /// Φ(x) = b(g⁻¹x), with the exact frame gradient M'(z)ᵀ ∇b(z), z = g⁻¹x.
    pub fn sprime_bump(chart: Arc<SChart>, b: Bump, g: Vec<f64>) -> Self {
        let dim = g.len();
        let ginv = chart.sprime_inv(&g);
        let b = Arc::new(b);
        let (c1, b1, gi1) = (chart.clone(), b.clone(), ginv.clone());
        let value: ValueFn = Arc::new(move |x| b1.value(&c1.sprime_mul(&gi1, x)));
        let grad: GradFn = Arc::new(move |x| {
            let z = chart.sprime_mul(&ginv, x);
            let gb = b.gradient(&z);
            if gb.iter().all(|v| *v == 0.0) {
                return gb;
            }
            chart.sprime_frame_matrix(&z).transpose() * gb
        });
        Self::new(dim, value, grad)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        (self.grad)(x)
    }
}

/// Discrete mollifier: tensor Gauss–Legendre nodes in the unit ball weighted
/// by the Friedrichs bump, normalized to unit mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// ∫ bump over the unit ball as seen by the rule (normalizing constant).
    pub raw_mass: f64,
}

impl Mollifier {
    pub fn new(dim: usize, order: usize) -> Self {
        let (x, w) = gauss_legendre(order.max(1));
        let bump = Bump::new(vec![0.0; dim], 1.0, 1.0);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let total = order.pow(dim as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut z = vec![0.0; dim];
            let mut wt = 1.0;
            for k in (0..dim).rev() {
                let i = rem % order;
                rem /= order;
                z[k] = x[i];
                wt *= w[i];
            }
            let v = bump.value(&z) * wt;
            if v > 0.0 {
                nodes.push(z);
                weights.push(v);
            }
        }
        let raw_mass: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= raw_mass;
        }
        Self {
            nodes,
            weights,
            raw_mass,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ weights (equal to one up to rounding).
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The continuous mollifier density η_1(z) = b(z) / raw_mass.
    pub fn density(&self, z: &[f64]) -> f64 {
        Bump::new(vec![0.0; z.len()], 1.0, 1.0).value(z) / self.raw_mass
    }
}

/// Resolution of the splitting computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Gauss–Legendre order per axis of the mollifier rule.
    pub rule_order: usize,
    /// Uniform sample points per axis for sup estimates.
    pub samples_per_axis: usize,
    /// Gauss–Legendre order per axis for L^p norms.
    pub norm_order: usize,
}

impl SplitOptions {
    pub fn for_dim(d: usize) -> Self {
        match d {
            0 | 1 => Self {
                rule_order: 16,
                samples_per_axis: 401,
                norm_order: 48,
            },
            2 => Self {
                rule_order: 8,
                samples_per_axis: 41,
                norm_order: 24,
            },
            3 => Self {
                rule_order: 5,
                samples_per_axis: 11,
                norm_order: 12,
            },
            _ => Self {
                rule_order: 4,
                samples_per_axis: 6,
                norm_order: 8,
            },
        }
    }
}

/// Which branch of the construction produced the split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCase {
    /// Plain convolution on ℝ^d.
    Euclidean,
    /// λ ≥ ε₀/C1 on S': Φ₁ = Φ, Φ₂ = 0.
    Large,
    /// λ < ε₀/C1 on S': partition of unity and local mollification.
    Cover,
}

/// Sup norms, L^p norms and the normalized ratios of one split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMeasures {
    pub sup_phi: f64,
    pub sup_phi1: f64,
    pub sup_phi2: f64,
    pub sup_grad_phi2: f64,
    pub norm_lp: f64,
    pub norm_grad_lp: f64,
    /// ‖Φ‖_p + ‖∇Φ‖_p.
    pub norm_w1p: f64,
    /// sup|Φ₁| / (λ^{1-d/p} W), W = ‖∂Φ‖_p on ℝ^d and ‖Φ‖_{W^{1,p}} on S'.
    pub ratio_phi1: f64,
    /// sup|Φ₂| / (λ^{-d/p} ‖Φ‖_p).
    pub ratio_phi2: f64,
    /// sup|∇Φ₂| / (λ^{-d/p} W).
    pub ratio_grad_phi2: f64,
    /// max |Φ₁ + Φ₂ - Φ| over the samples.
    pub exactness: f64,
    /// Sample points used for the sup estimates.
    pub samples: usize,
}

/// Output of a split: the two pieces and their measurements.
#[derive(Clone)]
pub struct SplitResult {
    pub phi1: Scalar,
    pub phi2: Scalar,
    pub lambda: f64,
    pub p: f64,
    pub dim: usize,
    pub case: SplitCase,
    pub eps0: Option<f64>,
    pub measured: SplitMeasures,
}

impl std::fmt::Debug for SplitResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SplitResult")
            .field("lambda", &self.lambda)
            .field("p", &self.p)
            .field("dim", &self.dim)
            .field("case", &self.case)
            .field("eps0", &self.eps0)
            .field("measured", &self.measured)
            .finish()
    }
}

fn check_exponent(p: f64, d: usize) -> Result<()> {
    if !(p > d as f64) || !p.is_finite() {
        return Err(Error::BadExponent { p, dim: d });
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidGrid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Uniform grid with `k` points per axis over [lo, hi].
fn uniform_points(lo: &[f64], hi: &[f64], k: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let k = k.max(2);
    let total = k.pow(d as u32);
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut x = vec![0.0; d];
            for j in (0..d).rev() {
                let i = rem % k;
                rem /= k;
                x[j] = lo[j] + (hi[j] - lo[j]) * i as f64 / (k - 1) as f64;
            }
            x
        })
        .collect()
}

/// (‖Φ‖_p, ‖∇Φ‖_p) over a box with the given point map and density.
fn lp_norms<M, W>(phi: &Scalar, lo: &[f64], hi: &[f64], order: usize, p: f64, map: M, weight: W) -> Result<(f64, f64)>
where
    M: Fn(&[f64]) -> Vec<f64> + Sync,
    W: Fn(&[f64]) -> f64 + Sync,
{
    let grid = QuadratureGrid::new(&GridSpec::new(lo.to_vec(), hi.to_vec(), order))?;
    let pts = grid.points();
    let (a, b) = pts
        .par_iter()
        .map(|(z, w)| {
            let x = map(z);
            let v = phi.eval(&x);
            if v == 0.0 {
                let g = phi.gradient(&x).norm();
                if g == 0.0 {
                    return (0.0, 0.0);
                }
                return (0.0, w * weight(z) * g.powf(p));
            }
            let g = phi.gradient(&x).norm();
            let dens = w * weight(z);
            (dens * v.abs().powf(p), dens * g.powf(p))
        })
        .reduce(|| (0.0, 0.0), |x, y| (x.0 + y.0, x.1 + y.1));
    Ok((a.powf(1.0 / p), b.powf(1.0 / p)))
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn validate_box(lo: &[f64], hi: &[f64], d: usize) -> Result<()> {
    if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
        return Err(Error::InvalidGrid("support box does not match the dimension".into()));
    }
    Ok(())
}

/// Split Φ on ℝ^d: Φ₂ = Φ * η_λ, Φ₁ = Φ - Φ₂. `support` bounds supp Φ.
pub fn mollify_split_rd(
    phi: &Scalar,
    support: (&[f64], &[f64]),
    lambda: f64,
    p: f64,
    opts: &SplitOptions,
) -> Result<SplitResult> {
    let d = phi.dim;
    check_exponent(p, d)?;
    check_lambda(lambda)?;
    let (lo, hi) = support;
    validate_box(lo, hi, d)?;
    let probe = GridSpec::new(lo.to_vec(), hi.to_vec(), 2);
    let edge = crate::quadrature::boundary_max(&probe, &|x: &[f64]| phi.eval(x));
    if edge > 0.0 {
        return Err(Error::SupportLeak);
    }
    let moll = Arc::new(Mollifier::new(d, opts.rule_order));
    let phi2 = {
        let (f, g, mv, mg) = (phi.clone(), phi.clone(), moll.clone(), moll.clone());
        let value: ValueFn = Arc::new(move |x| {
            let mut s = 0.0;
            let mut y = vec![0.0; x.len()];
            for (z, w) in mv.nodes.iter().zip(&mv.weights) {
                for i in 0..x.len() {
                    y[i] = x[i] - lambda * z[i];
                }
                s += w * f.eval(&y);
            }
            s
        });
        let grad: GradFn = Arc::new(move |x| {
            let mut s = DVector::zeros(x.len());
            let mut y = vec![0.0; x.len()];
            for (z, w) in mg.nodes.iter().zip(&mg.weights) {
                for i in 0..x.len() {
                    y[i] = x[i] - lambda * z[i];
                }
                s += g.gradient(&y) * *w;
            }
            s
        });
        Scalar::new(d, value, grad)
    };
    let phi1 = difference(phi, &phi2);
    let (norm_lp, norm_grad_lp) = lp_norms(phi, lo, hi, opts.norm_order, p, |z| z.to_vec(), |_| 1.0)?;
    let wlo: Vec<f64> = lo.iter().map(|v| v - lambda).collect();
    let whi: Vec<f64> = hi.iter().map(|v| v + lambda).collect();
    let pts = uniform_points(&wlo, &whi, opts.samples_per_axis);
    let mut measured = sup_measures(phi, &phi1, &phi2, &pts, |x| x.to_vec());
    // Φ₂ must vanish on the faces of the λ-enlarged box.
    let wspec = GridSpec::new(wlo, whi, 2);
    if crate::quadrature::boundary_max(&wspec, &|x: &[f64]| phi2.eval(x))
        > 1e-14 * measured.sup_phi.max(f64::MIN_POSITIVE)
    {
        return Err(Error::SupportLeak);
    }
    let dp = d as f64 / p;
    measured.norm_lp = norm_lp;
    measured.norm_grad_lp = norm_grad_lp;
    measured.norm_w1p = norm_lp + norm_grad_lp;
    measured.ratio_phi1 = ratio(measured.sup_phi1, lambda.powf(1.0 - dp) * norm_grad_lp);
    measured.ratio_phi2 = ratio(measured.sup_phi2, lambda.powf(-dp) * norm_lp);
    measured.ratio_grad_phi2 = ratio(measured.sup_grad_phi2, lambda.powf(-dp) * norm_grad_lp);
    Ok(SplitResult {
        phi1,
        phi2,
        lambda,
        p,
        dim: d,
        case: SplitCase::Euclidean,
        eps0: None,
        measured,
    })
}

fn difference(phi: &Scalar, phi2: &Scalar) -> Scalar {
    let (a, b, c, e) = (phi.clone(), phi2.clone(), phi.clone(), phi2.clone());
    Scalar::new(
        phi.dim,
        Arc::new(move |x| a.eval(x) - b.eval(x)),
        Arc::new(move |x| c.gradient(x) - e.gradient(x)),
    )
}

/// Sup estimates over sample points given in base coordinates, mapped by `map`.
fn sup_measures<M>(phi: &Scalar, phi1: &Scalar, phi2: &Scalar, pts: &[Vec<f64>], map: M) -> SplitMeasures
where
    M: Fn(&[f64]) -> Vec<f64> + Sync,
{
    // Φ₁ is Φ - Φ₂ by construction; evaluate it independently on every
    // EXACTNESS_STRIDE-th sample to confirm the identity.
    let rows: Vec<[f64; 5]> = pts
        .par_iter()
        .enumerate()
        .map(|(i, z)| {
            let x = map(z);
            let v = phi.eval(&x);
            let v2 = phi2.eval(&x);
            let g2 = phi2.gradient(&x).norm();
            let exact = if i % EXACTNESS_STRIDE == 0 {
                (phi1.eval(&x) + v2 - v).abs()
            } else {
                0.0
            };
            [v.abs(), (v - v2).abs(), v2.abs(), g2, exact]
        })
        .collect();
    let mut m = SplitMeasures {
        samples: pts.len(),
        ..Default::default()
    };
    for r in rows {
        m.sup_phi = m.sup_phi.max(r[0]);
        m.sup_phi1 = m.sup_phi1.max(r[1]);
        m.sup_phi2 = m.sup_phi2.max(r[2]);
        m.sup_grad_phi2 = m.sup_grad_phi2.max(r[3]);
        m.exactness = m.exactness.max(r[4]);
    }
    m
}

/// Singular values of the S' frame matrix at xp all lie in [1/K, K].
fn comparable(chart: &SChart, xp: &[f64]) -> bool {
    let sv = chart.sprime_frame_matrix(xp).singular_values();
    sv.iter()
        .all(|s| s.is_finite() && *s >= 1.0 / COMPARABILITY && *s <= COMPARABILITY)
}

/// Largest radius R ≤ 10 such that coordinates and frame stay comparable on
/// the coordinate ball of radius R in S', found by bisection on sampled
/// directions (±e_i and seeded random unit vectors) at radii R/2 and R.
pub fn epsilon0(chart: &SChart) -> f64 {
    let d = chart.m() - 1;
    if d == 0 {
        return EPS0_CAP;
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            dirs.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_e0);
    for _ in 0..EPS0_DIRECTIONS {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 {
            dirs.push(v.iter().map(|a| a / n).collect());
        }
    }
    let ok = |r: f64| {
        dirs.iter().all(|e| {
            [0.5 * r, r]
                .iter()
                .all(|rad| comparable(chart, &e.iter().map(|a| a * rad).collect::<Vec<_>>()))
        })
    };
    if ok(EPS0_CAP) {
        return EPS0_CAP;
    }
    let (mut lo, mut hi) = (0.0, EPS0_CAP);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Where Φ lives on S': supp(Φ ∘ L_g) ⊂ [lo, hi] in NA' coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SPrimeSupport {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub translation: Vec<f64>,
}

/// cos² partition of unity on the lattice hℤ^d in anchored coordinates u.
#[derive(Debug, Clone)]
struct Partition {
    h: f64,
}

impl Partition {
    /// χ_k(u) and ∇χ_k(u).
    fn chi(&self, k: &[i64], u: &[f64]) -> (f64, DVector<f64>) {
        let d = u.len();
        let h = self.h;
        let mut c = vec![0.0; d];
        let mut s = vec![0.0; d];
        for i in 0..d {
            let off = u[i] - k[i] as f64 * h;
            if off.abs() >= h {
                return (0.0, DVector::zeros(d));
            }
            let th = std::f64::consts::PI * off / (2.0 * h);
            c[i] = th.cos().powi(2);
            s[i] = -(2.0 * th).sin() * std::f64::consts::PI / (2.0 * h);
        }
        let val: f64 = c.iter().product();
        let grad = DVector::from_fn(d, |i, _| {
            let mut g = s[i];
            for (j, cj) in c.iter().enumerate() {
                if j != i {
                    g *= cj;
                }
            }
            g
        });
        (val, grad)
    }

    fn chi_value(&self, k: &[i64], u: &[f64]) -> f64 {
        let h = self.h;
        let mut v = 1.0;
        for i in 0..u.len() {
            let off = u[i] - k[i] as f64 * h;
            if off.abs() >= h {
                return 0.0;
            }
            v *= (std::f64::consts::PI * off / (2.0 * h)).cos().powi(2);
        }
        v
    }

    /// Lattice points k whose cell support meets the box [lo, hi] in u.
    fn cells_meeting(&self, lo: &[f64], hi: &[f64]) -> Vec<Vec<i64>> {
        let d = lo.len();
        let ranges: Vec<(i64, i64)> = (0..d)
            .map(|i| {
                (
                    ((lo[i] / self.h) - 1.0).floor() as i64,
                    ((hi[i] / self.h) + 1.0).ceil() as i64,
                )
            })
            .collect();
        let mut out = vec![Vec::new()];
        for (a, b) in ranges {
            let mut next = Vec::new();
            for prefix in &out {
                for k in a..=b {
                    let mut p: Vec<i64> = prefix.clone();
                    p.push(k);
                    next.push(p);
                }
            }
            out = next;
        }
        let h = self.h;
        out.retain(|k| (0..d).all(|i| (k[i] as f64 * h - lo[i]) > -h && (k[i] as f64 * h - hi[i]) < h));
        out
    }
}

/// The Case 2 construction: Φ₂(x) = Σ_k Σ_q w_q F_k(g_k⁻¹x - λ z_q) with
/// F_k(v) = χ_k(s₀⁻¹ g_k v) Φ(g_k v) and g_k = s₀ c_k.
struct CoverSplit {
    chart: Arc<SChart>,
    phi: Scalar,
    moll: Mollifier,
    part: Partition,
    anchor: Vec<f64>,
    anchor_inv: Vec<f64>,
    lambda: f64,
}

impl CoverSplit {
    fn lattice_point(&self, k: &[i64]) -> Vec<f64> {
        k.iter().map(|&ki| ki as f64 * self.part.h).collect()
    }

    /// Candidate cells for x: those meeting twice the footprint of the
    /// mollifier around u = s₀⁻¹x, measured in the chart of the nearest cell.
    fn candidates(&self, x: &[f64], u: &[f64]) -> Vec<Vec<i64>> {
        let c = &self.chart;
        let k0: Vec<i64> = u.iter().map(|v| (v / self.part.h).round() as i64).collect();
        let ck = self.lattice_point(&k0);
        let gk = c.sprime_mul(&self.anchor, &ck);
        let v = c.sprime_mul(&c.sprime_inv(&gk), x);
        let d = u.len();
        let mut lo = u.to_vec();
        let mut hi = u.to_vec();
        let mut shifted = vec![0.0; d];
        for z in &self.moll.nodes {
            for i in 0..d {
                shifted[i] = v[i] - self.lambda * z[i];
            }
            let up = c.sprime_mul(&ck, &shifted);
            for i in 0..d {
                lo[i] = lo[i].min(up[i]);
                hi[i] = hi[i].max(up[i]);
            }
        }
        for i in 0..d {
            let half = hi[i] - lo[i];
            lo[i] -= half;
            hi[i] += half;
        }
        self.part.cells_meeting(&lo, &hi)
    }

    fn value(&self, x: &[f64]) -> f64 {
        let c = &self.chart;
        let u = c.sprime_mul(&self.anchor_inv, x);
        let d = u.len();
        let mut total = 0.0;
        let mut shifted = vec![0.0; d];
        for k in self.candidates(x, &u) {
            let ck = self.lattice_point(&k);
            let gk = c.sprime_mul(&self.anchor, &ck);
            let v = c.sprime_mul(&c.sprime_inv(&gk), x);
            for (z, w) in self.moll.nodes.iter().zip(&self.moll.weights) {
                for i in 0..d {
                    shifted[i] = v[i] - self.lambda * z[i];
                }
                let up = c.sprime_mul(&ck, &shifted);
                let chi = self.part.chi_value(&k, &up);
                if chi == 0.0 {
                    continue;
                }
                let xp = c.sprime_mul(&gk, &shifted);
                total += w * chi * self.phi.eval(&xp);
            }
        }
        total
    }

    /// Exact frame gradient of Φ₂ by the chain rule through the local charts.
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let c = &self.chart;
        let u = c.sprime_mul(&self.anchor_inv, x);
        let d = u.len();
        let mut total = DVector::zeros(d);
        let mut shifted = vec![0.0; d];
        for k in self.candidates(x, &u) {
            let ck = self.lattice_point(&k);
            let gk = c.sprime_mul(&self.anchor, &ck);
            let v = c.sprime_mul(&c.sprime_inv(&gk), x);
            let mut coord = DVector::zeros(d);
            for (z, w) in self.moll.nodes.iter().zip(&self.moll.weights) {
                for i in 0..d {
                    shifted[i] = v[i] - self.lambda * z[i];
                }
                let up = c.sprime_mul(&ck, &shifted);
                let (chi, dchi) = self.part.chi(&k, &up);
                if chi == 0.0 && dchi.iter().all(|a| *a == 0.0) {
                    continue;
                }
                let xp = c.sprime_mul(&gk, &shifted);
                let val = self.phi.eval(&xp);
                let fgrad = self.phi.gradient(&xp);
                if val == 0.0 && fgrad.iter().all(|a| *a == 0.0) {
                    continue;
                }
                // X(χ_k ∘ u) = M'(u)ᵀ ∇χ_k(u); XΦ_k = Φ Xχ_k + χ_k XΦ.
                let xchi = c.sprime_frame_matrix(&up).transpose() * dchi;
                let xf = xchi * val + fgrad * chi;
                // Coordinate gradient of F_k at the shifted point.
                let mt = c.sprime_frame_matrix(&shifted).transpose();
                let dcoord = mt.lu().solve(&xf).unwrap_or_else(|| DVector::zeros(d));
                coord += dcoord * *w;
            }
            total += c.sprime_frame_matrix(&v).transpose() * coord;
        }
        total
    }
}

/// Split Φ on S' = A'N. The partition of unity is anchored at `anchor`, so
/// translating Φ by g and the anchor by g translates both pieces by g.
pub fn split_on_sprime(
    chart: Arc<SChart>,
    phi: &Scalar,
    support: &SPrimeSupport,
    lambda: f64,
    p: f64,
    anchor: &[f64],
    opts: &SplitOptions,
) -> Result<SplitResult> {
    let d = chart.m() - 1;
    if phi.dim != d || anchor.len() != d || support.translation.len() != d {
        return Err(Error::IndexOutOfRange { index: phi.dim, len: d });
    }
    check_exponent(p, d)?;
    check_lambda(lambda)?;
    validate_box(&support.lo, &support.hi, d)?;
    let g = support.translation.clone();
    let to_x = {
        let c = chart.clone();
        let g = g.clone();
        move |z: &[f64]| c.sprime_mul(&g, z)
    };
    let probe = GridSpec::new(support.lo.clone(), support.hi.clone(), 2);
    if crate::quadrature::boundary_max(&probe, &|z: &[f64]| phi.eval(&to_x(z))) > 0.0 {
        return Err(Error::SupportLeak);
    }
    let eps0 = epsilon0(&chart);
    let (norm_lp, norm_grad_lp) = {
        let c = chart.clone();
        lp_norms(phi, &support.lo, &support.hi, opts.norm_order, p, &to_x, move |z| {
            c.sprime_density(z)
        })?
    };
    let w1p = norm_lp + norm_grad_lp;
    let (phi1, phi2, case) = if lambda >= eps0 / C1 {
        (phi.clone(), Scalar::zero(d), SplitCase::Large)
    } else {
        let cover = Arc::new(CoverSplit {
            chart: chart.clone(),
            phi: phi.clone(),
            moll: Mollifier::new(d, opts.rule_order),
            part: Partition { h: eps0 / 2.0 },
            anchor: anchor.to_vec(),
            anchor_inv: chart.sprime_inv(anchor),
            lambda,
        });
        let c2 = cover.clone();
        let phi2 = Scalar::new(d, Arc::new(move |x| cover.value(x)), Arc::new(move |x| c2.gradient(x)));
        (difference(phi, &phi2), phi2, SplitCase::Cover)
    };
    // Samples on g·(support enlarged by λ), where both pieces concentrate.
    let margin = lambda;
    let lo: Vec<f64> = support.lo.iter().map(|v| v - margin).collect();
    let hi: Vec<f64> = support.hi.iter().map(|v| v + margin).collect();
    let pts = uniform_points(&lo, &hi, opts.samples_per_axis);
    let mut measured = sup_measures(phi, &phi1, &phi2, &pts, &to_x);
    let dp = d as f64 / p;
    measured.norm_lp = norm_lp;
    measured.norm_grad_lp = norm_grad_lp;
    measured.norm_w1p = w1p;
    measured.ratio_phi1 = ratio(measured.sup_phi1, lambda.powf(1.0 - dp) * w1p);
    measured.ratio_phi2 = ratio(measured.sup_phi2, lambda.powf(-dp) * norm_lp);
    measured.ratio_grad_phi2 = ratio(measured.sup_grad_phi2, lambda.powf(-dp) * w1p);
    Ok(SplitResult {
        phi1,
        phi2,
        lambda,
        p,
        dim: d,
        case,
        eps0: Some(eps0),
        measured,
    })
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// One λ of a sweep: the envelope over widths of the normalized quantities
/// sup|Φ₁|/W, sup|Φ₂|/‖Φ‖_p and sup|∇Φ₂|/W.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub values: [f64; 3],
    pub exactness: f64,
    pub case: SplitCase,
}

/// Log-log fit of a λ-sweep against the predicted exponents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub dim: usize,
    pub p: f64,
    pub points: Vec<SweepPoint>,
    pub slopes: [f64; 3],
    /// 1 - d/p, -d/p, -d/p.
    pub expected: [f64; 3],
    /// max_i y_i / fit(λ_i) - 1 for each quantity (one-sided excess over the fitted line).
    pub excess: [f64; 3],
    pub exactness: f64,
    pub eps0: Option<f64>,
}

impl SweepOutcome {
    fn new(dim: usize, p: f64, points: Vec<SweepPoint>, eps0: Option<f64>) -> Self {
        let dp = dim as f64 / p;
        let expected = [1.0 - dp, -dp, -dp];
        let xs: Vec<f64> = points.iter().map(|q| q.lambda).collect();
        let mut slopes = [0.0; 3];
        let mut excess = [0.0; 3];
        for k in 0..3 {
            let ys: Vec<f64> = points.iter().map(|q| q.values[k]).collect();
            let b = loglog_slope(&xs, &ys);
            let n = xs.len() as f64;
            let a = ys.iter().map(|y| y.ln()).sum::<f64>() / n - b * xs.iter().map(|x| x.ln()).sum::<f64>() / n;
            slopes[k] = b;
            excess[k] = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| y / (a + b * x.ln()).exp() - 1.0)
                .fold(f64::NEG_INFINITY, f64::max);
        }
        let exactness = points.iter().map(|q| q.exactness).fold(0.0, f64::max);
        Self {
            dim,
            p,
            points,
            slopes,
            expected,
            excess,
            exactness,
            eps0,
        }
    }

    /// Every slope within `tol` of its exponent and no point more than
    /// `one_sided` above the fitted line.
    pub fn passes(&self, tol: f64, one_sided: f64) -> bool {
        (0..3).all(|k| (self.slopes[k] - self.expected[k]).abs() <= tol && self.excess[k] <= one_sided)
    }
}

/// Geometric sequence of `count` values from `max` down over `decades`.
pub fn lambda_grid(max: f64, decades: f64, count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count)
        .map(|i| max * 10f64.powf(-decades * i as f64 / (count - 1) as f64))
        .collect()
}

/// W is ‖∂Φ‖_p on ℝ^d and ‖Φ‖_{W^{1,p}} on S'.
fn envelope(rows: &[SplitMeasures], lambda: f64, case: SplitCase) -> SweepPoint {
    let mut values = [0.0f64; 3];
    let mut exactness = 0.0f64;
    for m in rows {
        let w = if case == SplitCase::Euclidean {
            m.norm_grad_lp
        } else {
            m.norm_w1p
        };
        values[0] = values[0].max(m.sup_phi1 / w);
        values[1] = values[1].max(m.sup_phi2 / m.norm_lp);
        values[2] = values[2].max(m.sup_grad_phi2 / w);
        exactness = exactness.max(m.exactness);
    }
    SweepPoint {
        lambda,
        values,
        exactness,
        case,
    }
}

/// λ-sweep of the Euclidean split on unit-amplitude bumps of width s·λ
/// centred at the origin, s over `width_factors`.
pub fn sweep_rd(d: usize, p: f64, lambdas: &[f64], width_factors: &[f64], opts: &SplitOptions) -> Result<SweepOutcome> {
    let mut points = Vec::new();
    for &lambda in lambdas {
        let mut rows = Vec::new();
        for &s in width_factors {
            let w = s * lambda;
            let phi = Scalar::from_bump(Bump::new(vec![0.0; d], w, 1.0));
            let lo = vec![-w; d];
            let hi = vec![w; d];
            rows.push(mollify_split_rd(&phi, (&lo, &hi), lambda, p, opts)?.measured);
        }
        points.push(envelope(&rows, lambda, SplitCase::Euclidean));
    }
    Ok(SweepOutcome::new(d, p, points, None))
}

/// λ-sweep on S' with bumps of width s·λ in NA' coordinates, left translated
/// by `translation`; the partition of unity is anchored at the translation.
pub fn sweep_sprime(
    chart: Arc<SChart>,
    p: f64,
    lambdas: &[f64],
    width_factors: &[f64],
    translation: &[f64],
    opts: &SplitOptions,
) -> Result<SweepOutcome> {
    let d = chart.m() - 1;
    let eps0 = epsilon0(&chart);
    let mut points = Vec::new();
    for &lambda in lambdas {
        let mut rows = Vec::new();
        let mut case = SplitCase::Cover;
        for &s in width_factors {
            let w = s * lambda;
            let phi = Scalar::sprime_bump(chart.clone(), Bump::new(vec![0.0; d], w, 1.0), translation.to_vec());
            let support = SPrimeSupport {
                lo: vec![-w; d],
                hi: vec![w; d],
                translation: translation.to_vec(),
            };
            let r = split_on_sprime(chart.clone(), &phi, &support, lambda, p, translation, opts)?;
            case = r.case;
            rows.push(r.measured);
        }
        points.push(envelope(&rows, lambda, case));
    }
    Ok(SweepOutcome::new(d, p, points, Some(eps0)))
}

/// Coordinate-gradient of a scalar on S' (used by tests as an oracle).
pub fn coordinate_gradient(chart: &SChart, phi: &Scalar, x: &[f64]) -> DVector<f64> {
    let mt: DMatrix<f64> = chart.sprime_frame_matrix(x).transpose();
    mt.lu()
        .solve(&phi.gradient(x))
        .unwrap_or_else(|| DVector::zeros(x.len()))
}
