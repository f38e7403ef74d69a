//! Tensor Gauss–Legendre quadrature on coordinate boxes and the Haar
//! measure bookkeeping on S.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cartan::IwasawaStructure;
use crate::error::{Error, Result};
use crate::geometry::SChart;
use crate::lie::MatrixLieAlgebra;
use crate::linalg::sorted_sym_eigen;

/// Relative size of boundary values tolerated without `truncation_ok`.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Points per axis used to sample each face of the box.
const FACE_SAMPLES: usize = 6;

/// Which measure the integral is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// dn da: Lebesgue measure in NA coordinates (t, y).
    DnDa,
    /// dV in NA coordinates: weight e^{-2ρ(t)}.
    DvViaNa,
    /// dV in AN coordinates (t, y'), point exp(T) exp(Y(y')): weight 1.
    DvViaAn,
}

fn default_order() -> usize {
    24
}
fn default_panels() -> usize {
    1
}
fn default_density() -> DensityMode {
    DensityMode::DnDa
}

/// Box, order and density of a quadrature rule; JSON-configurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default = "default_order")]
    pub order: usize,
    /// Composite panels per axis.
    #[serde(default = "default_panels")]
    pub panels: usize,
    #[serde(default = "default_density")]
    pub density: DensityMode,
    #[serde(default)]
    pub truncation_ok: bool,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, order: usize) -> Self {
        Self {
            lo,
            hi,
            order,
            panels: 1,
            density: DensityMode::DnDa,
            truncation_ok: false,
        }
    }
    pub fn cube(dim: usize, half: f64, order: usize) -> Self {
        Self::new(vec![-half; dim], vec![half; dim], order)
    }
    pub fn with_density(mut self, d: DensityMode) -> Self {
        self.density = d;
        self
    }
    pub fn with_panels(mut self, p: usize) -> Self {
        self.panels = p;
        self
    }
    pub fn truncated(mut self) -> Self {
        self.truncation_ok = true;
        self
    }
    pub fn dim(&self) -> usize {
        self.lo.len()
    }
    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }
    fn validate(&self) -> Result<()> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::InvalidGrid(
                "lo and hi must be non-empty and of equal length".into(),
            ));
        }
        if self
            .lo
            .iter()
            .zip(&self.hi)
            .any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite())
        {
            return Err(Error::InvalidGrid("every interval must satisfy lo < hi".into()));
        }
        if self.order == 0 || self.panels == 0 {
            return Err(Error::InvalidGrid("order and panels must be positive".into()));
        }
        Ok(())
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1] (Golub–Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut j = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let (vals, vecs) = sorted_sym_eigen(&j);
    let mut nodes: Vec<f64> = vals.iter().copied().collect();
    let mut weights: Vec<f64> = (0..n).map(|i| 2.0 * vecs[(0, i)] * vecs[(0, i)]).collect();
    // symmetrise to remove eigensolver noise
    for i in 0..n / 2 {
        let k = n - 1 - i;
        let x = 0.5 * (nodes[k] - nodes[i]);
        nodes[i] = -x;
        nodes[k] = x;
        let w = 0.5 * (weights[i] + weights[k]);
        weights[i] = w;
        weights[k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// A tensor-product rule on a box.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub spec: GridSpec,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

impl QuadratureGrid {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        Self::with_order(spec, spec.order)
    }

    fn with_order(spec: &GridSpec, order: usize) -> Result<Self> {
        spec.validate()?;
        let (x, w) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(spec.dim());
        let mut weights = Vec::with_capacity(spec.dim());
        for (a, b) in spec.lo.iter().zip(&spec.hi) {
            let p = spec.panels;
            let hw = (b - a) / p as f64 / 2.0;
            let mut nd = Vec::with_capacity(order * p);
            let mut wt = Vec::with_capacity(order * p);
            for k in 0..p {
                let c = a + (2 * k + 1) as f64 * hw;
                for (xi, wi) in x.iter().zip(&w) {
                    nd.push(c + hw * xi);
                    wt.push(hw * wi);
                }
            }
            nodes.push(nd);
            weights.push(wt);
        }
        Ok(Self {
            spec: spec.clone(),
            nodes,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of all weights (box volume for unit density).
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().map(|w| w.iter().sum::<f64>()).product()
    }

    /// Σ w_i g(x_i) with deterministic parallel reduction over the first axis.
    pub fn sum<G>(&self, g: G) -> f64
    where
        G: Fn(&[f64]) -> f64 + Sync,
    {
        let d = self.nodes.len();
        let inner: usize = self.nodes[1..].iter().map(Vec::len).product();
        let slabs: Vec<f64> = (0..self.nodes[0].len())
            .into_par_iter()
            .map(|i0| {
                let mut idx = vec![0usize; d];
                idx[0] = i0;
                let mut x = vec![0.0; d];
                let mut s = 0.0;
                for flat in 0..inner {
                    let mut rem = flat;
                    for k in (1..d).rev() {
                        let n = self.nodes[k].len();
                        idx[k] = rem % n;
                        rem /= n;
                    }
                    let mut w = 1.0;
                    for k in 0..d {
                        x[k] = self.nodes[k][idx[k]];
                        w *= self.weights[k][idx[k]];
                    }
                    s += w * g(&x);
                }
                s
            })
            .collect();
        slabs.iter().sum()
    }

    /// All nodes of the rule (row-major), for callers that tabulate values.
    pub fn points(&self) -> Vec<(Vec<f64>, f64)> {
        let d = self.nodes.len();
        let total = self.len();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut x = vec![0.0; d];
            let mut w = 1.0;
            for k in (0..d).rev() {
                let n = self.nodes[k].len();
                let i = rem % n;
                rem /= n;
                x[k] = self.nodes[k][i];
                w *= self.weights[k][i];
            }
            out.push((x, w));
        }
        out
    }
}

/// Max |g| over sampled points of the box faces.
pub fn boundary_max<G>(spec: &GridSpec, g: &G) -> f64
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let d = spec.dim();
    let mut worst = 0.0f64;
    let k = FACE_SAMPLES;
    for axis in 0..d {
        for side in [spec.lo[axis], spec.hi[axis]] {
            let count = k.pow((d - 1) as u32);
            for flat in 0..count {
                let mut rem = flat;
                let mut x = vec![0.0; d];
                for j in 0..d {
                    if j == axis {
                        x[j] = side;
                        continue;
                    }
                    let i = rem % k;
                    rem /= k;
                    x[j] = spec.lo[j] + (spec.hi[j] - spec.lo[j]) * i as f64 / (k - 1) as f64;
                }
                worst = worst.max(g(&x).abs());
            }
        }
    }
    worst
}

/// ∫ g dx over the box (Lebesgue), with the dual-order error estimate.
pub fn integrate_box<G>(g: G, spec: &GridSpec) -> Result<(f64, f64)>
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let grid = QuadratureGrid::new(spec)?;
    let hi = grid.sum(&g);
    if !spec.truncation_ok {
        let boundary = boundary_max(spec, &g);
        let scale = grid.sum(|x| g(x).abs()) / spec.volume();
        if boundary > BOUNDARY_TOL * scale.max(f64::MIN_POSITIVE) && boundary > 0.0 {
            return Err(Error::BoundaryMass { boundary });
        }
    }
    let low_order = (2 * spec.order / 3).max(1);
    let lo = QuadratureGrid::with_order(spec, low_order)?.sum(&g);
    if !hi.is_finite() {
        return Err(Error::InvalidGrid("integrand is not finite on the grid".into()));
    }
    Ok((hi, (hi - lo).abs()))
}

/// Map a grid point to NA coordinates and the weight of the chosen density.
pub fn density_transform(chart: &SChart, mode: DensityMode, x: &[f64]) -> (Vec<f64>, f64) {
    match mode {
        DensityMode::DnDa => (x.to_vec(), 1.0),
        DensityMode::DvViaNa => (x.to_vec(), chart.density(x)),
        DensityMode::DvViaAn => {
            let r = chart.rank();
            let at = chart.alpha_t(&x[..r]);
            let mut p = x.to_vec();
            for j in 0..chart.n_dim() {
                p[r + j] = x[r + j] * at[j].exp();
            }
            (p, 1.0)
        }
    }
}

/// ∫ F against the grid's density; F takes NA coordinates.
pub fn integrate<F>(chart: &SChart, f: F, spec: &GridSpec) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mode = spec.density;
    integrate_box(
        |x| {
            let (p, w) = density_transform(chart, mode, x);
            w * f(&p)
        },
        spec,
    )
}

/// Matrix of ad(h) restricted to n in the n basis.
pub fn ad_on_n(alg: &MatrixLieAlgebra, iw: &IwasawaStructure, h: &DVector<f64>) -> DMatrix<f64> {
    let k = iw.n_basis.len();
    let bt = &iw.cartan.btheta;
    DMatrix::from_fn(k, k, |i, j| {
        let z = alg.bracket_coords(h, &iw.n_basis[j]);
        (iw.n_basis[i].transpose() * bt * z)[(0, 0)]
    })
}

/// (e^{2ρ(log a)}, det(Ad a |_n)) with log a = h ∈ a in algebra coordinates.
pub fn jacobian_check(alg: &MatrixLieAlgebra, iw: &IwasawaStructure, h: &DVector<f64>) -> (f64, f64) {
    let (c, _) = iw.a_coords(h);
    let lhs = (2.0 * iw.positive.rho.dot(&c)).exp();
    let rhs = ad_on_n(alg, iw, h).exp().determinant();
    (lhs, rhs)
}

/// |∫_N Y_j φ dn| for φ on N given with its gradient in y; returns
/// (residual, quadrature error estimate).
pub fn ibp_residual_n<G>(chart: &SChart, phi_grad: G, j: usize, spec: &GridSpec) -> Result<(f64, f64)>
where
    G: Fn(&[f64]) -> DVector<f64> + Sync,
{
    let nn = chart.n_dim();
    if j >= nn {
        return Err(Error::IndexOutOfRange { index: j, len: nn });
    }
    let (v, e) = integrate_box(
        |y| {
            let g = phi_grad(y);
            (0..nn).map(|l| chart.polys[j][l].eval(y) * g[l]).sum()
        },
        spec,
    )?;
    Ok((v.abs(), e))
}

/// |∫_{A'} H_i φ da'| with H_i = ∂/∂t^i on A' = {t^1 = 0}; `i` is the
/// 1-based frame index (2 ≤ i ≤ r) and φ takes (t^2..t^r).
pub fn ibp_residual_a<G>(rank: usize, dphi: G, i: usize, spec: &GridSpec) -> Result<(f64, f64)>
where
    G: Fn(&[f64], usize) -> f64 + Sync,
{
    if i < 2 || i > rank {
        return Err(Error::IndexOutOfRange { index: i, len: rank });
    }
    let (v, e) = integrate_box(|tp| dphi(tp, i - 2), spec)?;
    Ok((v.abs(), e))
}

/// (∫_N F dn, det(Ad a|_n) ∫_N F(a n a⁻¹) dn) with their error estimates;
/// `t` are the frame coordinates of log a.
pub fn conjugation_change_of_vars<F>(
    chart: &SChart,
    alg: &MatrixLieAlgebra,
    iw: &IwasawaStructure,
    frame_h: &[DVector<f64>],
    f: F,
    t: &[f64],
    spec: &GridSpec,
) -> Result<((f64, f64), (f64, f64))>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut h = DVector::zeros(alg.dim());
    for (hi, ti) in frame_h.iter().zip(t) {
        h += hi * *ti;
    }
    let det = ad_on_n(alg, iw, &h).exp().determinant();
    let scale = chart.alpha_t(t).map(f64::exp);
    let lhs = integrate_box(&f, spec)?;
    let (v, e) = integrate_box(
        |y| {
            let z: Vec<f64> = y.iter().zip(scale.iter()).map(|(a, b)| a * b).collect();
            f(&z)
        },
        spec,
    )?;
    Ok((lhs, (det * v, det * e)))
}

/// (∫ F dV, ∫ F(g⁻¹ ·) dV) over the same NA grid.
pub fn left_invariance_check<F>(chart: &SChart, f: F, g: &[f64], spec: &GridSpec) -> Result<((f64, f64), (f64, f64))>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let spec = spec.clone().with_density(DensityMode::DvViaNa);
    let ginv = chart.inv(g);
    let a = integrate(chart, &f, &spec)?;
    let b = integrate(chart, |x| f(&chart.mul(&ginv, x)), &spec)?;
    Ok((a, b))
}
