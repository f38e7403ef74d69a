//! The solvable group S = NA in exponential coordinates.
//!
//! A point x = (t^1..t^r, y^1..y^{m-r}) stands for exp(Σ y^j Y_j) exp(Σ t^i H_i).
//! In these coordinates H_i = ∂/∂t^i and
//! Y_j = e^{α_j(t)} Σ_ℓ p_{jℓ}(y) ∂/∂y^ℓ with polynomials p_{jℓ} obtained from
//! the Baker–Campbell–Hausdorff formula on the nilpotent algebra n.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use serde::Serialize;

use crate::cartan::{GoodFrame, IwasawaStructure};
use crate::error::{Error, Result};
use crate::lie::MatrixLieAlgebra;
use crate::linalg::{exp_nilpotent, log_unipotent, sorted_sym_eigen};
use crate::poly::Poly;

/// Largest nilpotency step accepted for n.
pub const NILPOTENCY_CAP: u32 = 10;
/// Fixed RK4 step used by flows.
pub const FLOW_STEP: f64 = 1e-3;
/// Default relative finite-difference step.
pub const FD_STEP: f64 = 1e-4;

/// Coefficients of ψ(x) = x / (1 - e^{-x}) = Σ c_k x^k, exact up to degree `n`.
pub fn psi_coefficients(n: usize) -> Vec<Ratio<i64>> {
    let mut b: Vec<Ratio<i64>> = vec![Ratio::from_integer(1)];
    let binom = |n: i64, k: i64| -> i64 { (0..k).fold(1i64, |acc, i| acc * (n - i) / (i + 1)) };
    for k in 1..=n as i64 {
        let mut s = Ratio::from_integer(0);
        for (j, bj) in b.iter().enumerate() {
            s += *bj * Ratio::from_integer(binom(k + 1, j as i64));
        }
        b.push(-s / Ratio::from_integer(k + 1));
    }
    // x/(1 - e^{-x}) = Σ (-1)^k B_k x^k / k!
    let mut fact = 1i64;
    b.iter()
        .enumerate()
        .map(|(k, bk)| {
            if k > 0 {
                fact *= k as i64;
            }
            let sign = if k % 2 == 1 { -1 } else { 1 };
            *bk * Ratio::from_integer(sign) / Ratio::from_integer(fact)
        })
        .collect()
}

/// Exponential coordinates on S together with the BCH frame polynomials.
#[derive(Debug, Clone)]
pub struct SChart {
    r: usize,
    m: usize,
    /// α_j(H_i): row j, column i.
    pub alpha: DMatrix<f64>,
    /// ρ(H_i).
    pub rho: DVector<f64>,
    /// d(α_j).
    pub grading: Vec<u32>,
    /// [Y_a, Y_b] = Σ_c nstruct[(a*nn + b)*nn + c] Y_c.
    nstruct: Vec<f64>,
    /// [X_a, X_b] = Σ_c sstruct[(a*m + b)*m + c] X_c.
    sstruct: Vec<f64>,
    /// p_{jℓ}: `polys[j][ℓ]`.
    pub polys: Vec<Vec<Poly>>,
    /// Nilpotency step of n (largest grading).
    pub step: u32,
    /// Frame vectors X_1..X_m as matrices.
    pub frame_mats: Vec<DMatrix<f64>>,
    /// Least-squares map from vec(M) to Y-coordinates.
    n_coord_map: DMatrix<f64>,
    /// Largest residual when expressing brackets of the frame in the frame.
    pub closure_residual: f64,
    /// Nonzero entries (a, b, c, value) of `nstruct`.
    nsparse: Vec<(usize, usize, usize, f64)>,
    /// Monomials of every p_{jℓ} as (j, ℓ, coefficient, [(variable, power)]).
    compiled: Vec<(usize, usize, f64, Vec<(usize, i32)>)>,
}

/// Stack buffer size for group products; the algebra dimension is capped at 64.
const BUF: usize = crate::lie::MAX_DIM;

fn ip(g: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (x.transpose() * g * y)[(0, 0)]
}

/// exp of a symmetric matrix.
pub fn exp_symmetric(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sorted_sym_eigen(x);
    let d = DMatrix::from_diagonal(&vals.map(f64::exp));
    &vecs * d * vecs.transpose()
}

impl SChart {
    pub fn new(alg: &MatrixLieAlgebra, iw: &IwasawaStructure, frame: &GoodFrame) -> Result<Self> {
        let r = frame.rank();
        let m = frame.m();
        let nn = m - r;
        let step = frame.grading.iter().copied().max().unwrap_or(0);
        if step > NILPOTENCY_CAP {
            return Err(Error::NilpotencyOverflow {
                step,
                cap: NILPOTENCY_CAP,
            });
        }
        let xs = frame.vectors();
        let mut closure = 0.0f64;
        let mut sstruct = vec![0.0; m * m * m];
        for a in 0..m {
            for b in 0..m {
                let z = alg.bracket_coords(&xs[a], &xs[b]);
                let mut back = DVector::zeros(z.len());
                for c in 0..m {
                    let v = ip(&iw.g0, &xs[c], &z);
                    sstruct[(a * m + b) * m + c] = v;
                    back += &xs[c] * v;
                }
                let d = &z - back;
                closure = closure.max(ip(&iw.cartan.btheta, &d, &d).max(0.0).sqrt());
            }
        }
        let mut nstruct = vec![0.0; nn * nn * nn];
        for a in 0..nn {
            for b in 0..nn {
                for c in 0..nn {
                    nstruct[(a * nn + b) * nn + c] = sstruct[((r + a) * m + (r + b)) * m + (r + c)];
                }
            }
        }
        let frame_mats: Vec<DMatrix<f64>> = xs.iter().map(|v| alg.matrix_of(v)).collect();
        let q = alg.matrix_size();
        let n_coord_map = if nn > 0 {
            let stacked = DMatrix::from_fn(q * q, nn, |i, j| frame_mats[r + j].as_slice()[i]);
            stacked.pseudo_inverse(1e-12).map_err(|_| Error::DependentBasis)?
        } else {
            DMatrix::zeros(0, q * q)
        };
        let mut chart = Self {
            r,
            m,
            alpha: frame.alpha.clone(),
            rho: frame.rho.clone(),
            grading: frame.grading.clone(),
            nstruct,
            sstruct,
            polys: Vec::new(),
            step,
            frame_mats,
            n_coord_map,
            closure_residual: closure,
            nsparse: Vec::new(),
            compiled: Vec::new(),
        };
        for a in 0..nn {
            for b in 0..nn {
                for c in 0..nn {
                    let v = chart.nstruct[(a * nn + b) * nn + c];
                    if v != 0.0 {
                        chart.nsparse.push((a, b, c, v));
                    }
                }
            }
        }
        chart.polys = chart.bch_polys()?;
        for (j, row) in chart.polys.iter().enumerate() {
            for (l, p) in row.iter().enumerate() {
                for (e, c) in p.terms() {
                    let vars = e
                        .iter()
                        .enumerate()
                        .filter(|(_, k)| **k > 0)
                        .map(|(i, k)| (i, *k as i32))
                        .collect();
                    chart.compiled.push((j, l, *c, vars));
                }
            }
        }
        Ok(chart)
    }

    pub fn rank(&self) -> usize {
        self.r
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn n_dim(&self) -> usize {
        self.m - self.r
    }
    pub fn n_struct(&self, a: usize, b: usize, c: usize) -> f64 {
        let nn = self.n_dim();
        self.nstruct[(a * nn + b) * nn + c]
    }
    /// Structure constants of the frame: [X_a, X_b] = Σ_c C_ab^c X_c.
    pub fn s_struct(&self, a: usize, b: usize, c: usize) -> f64 {
        self.sstruct[(a * self.m + b) * self.m + c]
    }

    fn ad_poly(&self, v: &[Poly]) -> Vec<Poly> {
        let nn = self.n_dim();
        let mut out = vec![Poly::zero(nn); nn];
        for a in 0..nn {
            for b in 0..nn {
                if v[b].is_zero() {
                    continue;
                }
                let ya_vb = v[b].times_var(a);
                for (c, slot) in out.iter_mut().enumerate() {
                    let s = self.n_struct(a, b, c);
                    if s != 0.0 {
                        slot.add_scaled(&ya_vb, s);
                    }
                }
            }
        }
        out
    }

    /// p_{jℓ}(y): ℓ-th coordinate of ψ(ad Y(y)) Y_j with Y(y) = Σ y^a Y_a.
    fn bch_polys(&self) -> Result<Vec<Vec<Poly>>> {
        let nn = self.n_dim();
        let coeffs: Vec<f64> = psi_coefficients(NILPOTENCY_CAP as usize + 1)
            .iter()
            .map(|c| *c.numer() as f64 / *c.denom() as f64)
            .collect();
        let mut all = Vec::with_capacity(nn);
        for j in 0..nn {
            let mut v: Vec<Poly> = (0..nn)
                .map(|l| Poly::constant(nn, if l == j { 1.0 } else { 0.0 }))
                .collect();
            let mut total = v.clone();
            let mut k = 0usize;
            loop {
                v = self.ad_poly(&v);
                if v.iter().all(Poly::is_zero) {
                    break;
                }
                k += 1;
                if k > NILPOTENCY_CAP as usize {
                    return Err(Error::NilpotencyOverflow {
                        step: k as u32,
                        cap: NILPOTENCY_CAP,
                    });
                }
                for (t, p) in total.iter_mut().zip(&v) {
                    t.add_scaled(p, coeffs[k]);
                }
            }
            all.push(total);
        }
        Ok(all)
    }

    /// max |p_{jℓ}(0) - δ_{jℓ}|.
    pub fn center_residual(&self) -> f64 {
        let mut w = 0.0f64;
        for (j, row) in self.polys.iter().enumerate() {
            for (l, p) in row.iter().enumerate() {
                let d = if j == l { 1.0 } else { 0.0 };
                w = w.max((p.constant_term() - d).abs());
            }
        }
        w
    }

    /// True when no p_{jℓ} has a monomial containing y^ℓ.
    pub fn self_independent(&self) -> bool {
        self.polys
            .iter()
            .all(|row| row.iter().enumerate().all(|(l, p)| !p.involves(l)))
    }

    /// True when every monomial of p_{jℓ} has weighted degree d(α_ℓ) - d(α_j)
    /// and p_{jℓ} vanishes when d(α_ℓ) < d(α_j).
    pub fn homogeneous(&self) -> bool {
        self.polys.iter().enumerate().all(|(j, row)| {
            row.iter().enumerate().all(|(l, p)| {
                let (dl, dj) = (self.grading[l], self.grading[j]);
                if dl < dj {
                    return p.is_zero();
                }
                p.weighted_degrees(&self.grading).iter().all(|&d| d == dl - dj)
            })
        })
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        x.split_at(self.r)
    }

    /// α_j(t) for every root vector.
    pub fn alpha_t(&self, t: &[f64]) -> DVector<f64> {
        &self.alpha * DVector::from_column_slice(t)
    }

    /// 2ρ(t).
    pub fn two_rho(&self, t: &[f64]) -> f64 {
        2.0 * self.rho.dot(&DVector::from_column_slice(t))
    }

    /// Density of the Riemannian volume (left Haar measure) in these coordinates.
    pub fn density(&self, x: &[f64]) -> f64 {
        (-self.two_rho(&x[..self.r])).exp()
    }

    /// M with M[(c, k)] = ∂_c-component of X_k at x.
    pub fn frame_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let (t, y) = self.split(x);
        let mut mm = DMatrix::zeros(self.m, self.m);
        for i in 0..self.r {
            mm[(i, i)] = 1.0;
        }
        let mut e = [0.0; BUF];
        for (j, ej) in e.iter_mut().enumerate().take(self.n_dim()) {
            let mut s = 0.0;
            for (i, ti) in t.iter().enumerate() {
                s += self.alpha[(j, i)] * ti;
            }
            *ej = s.exp();
        }
        for (j, l, c, vars) in &self.compiled {
            let mut v = *c;
            for (i, k) in vars {
                v *= y[*i].powi(*k);
            }
            mm[(self.r + l, self.r + j)] += e[*j] * v;
        }
        mm
    }

    /// ∂_c M for every coordinate c.
    pub fn frame_matrix_partials(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let (t, y) = self.split(x);
        let nn = self.n_dim();
        let mut out = vec![DMatrix::zeros(self.m, self.m); self.m];
        let at = self.alpha_t(t);
        for (j, l, c, vars) in &self.compiled {
            let e = at[*j].exp();
            let mut v = *c;
            for (i, k) in vars {
                v *= y[*i].powi(*k);
            }
            for (ci, slot) in out.iter_mut().enumerate().take(self.r) {
                slot[(self.r + l, self.r + j)] += self.alpha[(*j, ci)] * e * v;
            }
            for (i, k) in vars {
                let mut d = *c * *k as f64 * y[*i].powi(k - 1);
                for (i2, k2) in vars {
                    if i2 != i {
                        d *= y[*i2].powi(*k2);
                    }
                }
                out[self.r + i][(self.r + l, self.r + j)] += e * d;
            }
        }
        debug_assert_eq!(out.len(), self.r + nn);
        out
    }

    /// Coordinate components of the field Σ f^ℓ X_ℓ.
    pub fn coordinate_field(&self, x: &[f64], f: &DVector<f64>) -> DVector<f64> {
        self.frame_matrix(x) * f
    }

    fn bracket_n(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_dim());
        self.bracket_into(u.as_slice(), v.as_slice(), out.as_mut_slice());
        out
    }

    fn bracket_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(a, b, c, s) in &self.nsparse {
            out[c] += s * u[a] * v[b];
        }
    }

    /// Degree-four BCH into `out` without heap allocation (step ≤ 4).
    fn bch_small(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let nn = u.len();
        let mut uv = [0.0; BUF];
        let mut uuv = [0.0; BUF];
        let mut vuv = [0.0; BUF];
        let mut vuuv = [0.0; BUF];
        self.bracket_into(u, v, &mut uv[..nn]);
        self.bracket_into(u, &uv[..nn], &mut uuv[..nn]);
        self.bracket_into(v, &uv[..nn], &mut vuv[..nn]);
        self.bracket_into(v, &uuv[..nn], &mut vuuv[..nn]);
        for c in 0..nn {
            out[c] = u[c] + v[c] + 0.5 * uv[c] + (uuv[c] - vuv[c]) / 12.0 - vuuv[c] / 24.0;
        }
    }

    /// log(exp U exp V) in Y-coordinates: explicit through degree four,
    /// matrix logarithm for longer nilpotency steps.
    pub fn bch(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        if self.step <= 4 {
            let uv = self.bracket_n(u, v);
            let uuv = self.bracket_n(u, &uv);
            let vuv = self.bracket_n(v, &uv);
            let vuuv = self.bracket_n(v, &uuv);
            u + v + &uv * 0.5 + (uuv - vuv) / 12.0 - vuuv / 24.0
        } else {
            self.bch_matrix(u, v)
        }
    }

    /// BCH through matrix exponentials; used as fallback and as an oracle.
    pub fn bch_matrix(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mu = self.n_matrix(u);
        let mv = self.n_matrix(v);
        let w = log_unipotent(&(exp_nilpotent(&mu) * exp_nilpotent(&mv)));
        &self.n_coord_map * DVector::from_column_slice(w.as_slice())
    }

    fn n_matrix(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let q = self.frame_mats[0].nrows();
        let mut m = DMatrix::zeros(q, q);
        for j in 0..self.n_dim() {
            m += &self.frame_mats[self.r + j] * y[j];
        }
        m
    }

    fn a_matrix(&self, t: &[f64]) -> DMatrix<f64> {
        let q = self.frame_mats[0].nrows();
        let mut m = DMatrix::zeros(q, q);
        for i in 0..self.r {
            m += &self.frame_mats[i] * t[i];
        }
        m
    }

    /// The group element exp(Y(y)) exp(T(t)) as a matrix.
    pub fn point_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let (t, y) = self.split(x);
        exp_nilpotent(&self.n_matrix(&DVector::from_column_slice(y))) * exp_symmetric(&self.a_matrix(t))
    }

    /// Group product in coordinates.
    pub fn mul(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.mul_into(x1, x2, &mut out);
        out
    }

    /// Group product written into `out`.
    pub fn mul_into(&self, x1: &[f64], x2: &[f64], out: &mut [f64]) {
        let (t1, y1) = self.split(x1);
        let (t2, y2) = self.split(x2);
        let nn = self.n_dim();
        let mut y2c = [0.0; BUF];
        for j in 0..nn {
            let mut s = 0.0;
            for (i, ti) in t1.iter().enumerate() {
                s += self.alpha[(j, i)] * ti;
            }
            y2c[j] = y2[j] * s.exp();
        }
        for i in 0..self.r {
            out[i] = t1[i] + t2[i];
        }
        if self.step <= 4 {
            self.bch_small(y1, &y2c[..nn], &mut out[self.r..]);
        } else {
            let y = self.bch_matrix(&DVector::from_column_slice(y1), &DVector::from_column_slice(&y2c[..nn]));
            out[self.r..].copy_from_slice(y.as_slice());
        }
    }

    /// Group inverse in coordinates.
    pub fn inv(&self, x: &[f64]) -> Vec<f64> {
        let (t, y) = self.split(x);
        let e = self.alpha_t(t).map(|v| (-v).exp());
        let mut out: Vec<f64> = t.iter().map(|v| -v).collect();
        out.extend(y.iter().zip(e.iter()).map(|(y, e)| -y * e));
        out
    }

    /// Integrate the coordinate field of Σ f^ℓ X_ℓ for time `tau` with RK4.
    pub fn flow<F>(&self, x: &[f64], tau: f64, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<DVector<f64>>,
    {
        let n = ((tau.abs() / FLOW_STEP).ceil() as usize).max(1);
        let h = tau / n as f64;
        let mut p = DVector::from_column_slice(x);
        let vel = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let c = f(z.as_slice())?;
            Ok(self.coordinate_field(z.as_slice(), &c))
        };
        for _ in 0..n {
            let k1 = vel(&p)?;
            let k2 = vel(&(&p + &k1 * (h / 2.0)))?;
            let k3 = vel(&(&p + &k2 * (h / 2.0)))?;
            let k4 = vel(&(&p + &k3 * h))?;
            p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if p.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
                return Err(Error::FlowEscape);
            }
        }
        Ok(p.as_slice().to_vec())
    }

    /// Relative mismatch between the flow of Y_j from x for time s and right
    /// multiplication by exp(s Y_j) in the matrix group.
    pub fn flow_consistency(&self, x: &[f64], j: usize, s: f64) -> Result<f64> {
        let mut c = DVector::zeros(self.m);
        c[self.r + j] = 1.0;
        let end = self.flow(x, s, |_| Ok(c.clone()))?;
        let want = self.point_matrix(x) * exp_nilpotent(&(&self.frame_mats[self.r + j] * s));
        let got = self.point_matrix(&end);
        Ok((got - &want).norm() / want.norm())
    }

    /// Embed a point of S' = A'N (t^1 removed) into S.
    pub fn embed_sprime(&self, xp: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0];
        x.extend_from_slice(xp);
        x
    }

    /// Frame matrix of S' at a point of S' (rows and columns of t^1 / H_1 removed).
    pub fn sprime_frame_matrix(&self, xp: &[f64]) -> DMatrix<f64> {
        let full = self.frame_matrix(&self.embed_sprime(xp));
        full.view((1, 1), (self.m - 1, self.m - 1)).into_owned()
    }

    /// Coordinate density of the Haar measure of S' in NA' coordinates.
    pub fn sprime_density(&self, xp: &[f64]) -> f64 {
        self.density(&self.embed_sprime(xp))
    }

    /// Product and inverse restricted to S'.
    pub fn sprime_mul(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m - 1];
        self.sprime_mul_into(a, b, &mut out);
        out
    }
    pub fn sprime_mul_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (mut ea, mut eb, mut o) = ([0.0; BUF], [0.0; BUF], [0.0; BUF]);
        ea[1..self.m].copy_from_slice(a);
        eb[1..self.m].copy_from_slice(b);
        self.mul_into(&ea[..self.m], &eb[..self.m], &mut o[..self.m]);
        out.copy_from_slice(&o[1..self.m]);
    }
    pub fn sprime_inv(&self, a: &[f64]) -> Vec<f64> {
        self.inv(&self.embed_sprime(a))[1..].to_vec()
    }
}

/// JSON view of a chart, for debugging.
#[derive(Debug, Serialize)]
pub struct ChartSummary {
    pub rank: usize,
    pub m: usize,
    pub step: u32,
    pub rho: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub grading: Vec<u32>,
    /// Monomials of p_{jℓ}: (j, ℓ, exponents, coefficient).
    pub polys: Vec<(usize, usize, Vec<u32>, f64)>,
}

impl From<&SChart> for ChartSummary {
    fn from(c: &SChart) -> Self {
        let mut polys = Vec::new();
        for (j, row) in c.polys.iter().enumerate() {
            for (l, p) in row.iter().enumerate() {
                for (e, v) in p.terms() {
                    polys.push((j, l, e.clone(), *v));
                }
            }
        }
        Self {
            rank: c.r,
            m: c.m,
            step: c.step,
            rho: c.rho.as_slice().to_vec(),
            alpha: (0..c.alpha.nrows())
                .map(|j| c.alpha.row(j).iter().copied().collect())
                .collect(),
            grading: c.grading.clone(),
            polys,
        }
    }
}

/// g0(X, Y) = B((X - θX)/2, (Y - θY)/2) for X, Y in s.
pub fn killing_metric(iw: &IwasawaStructure, frame: &GoodFrame, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let xs = frame.vectors();
    for v in [x, y] {
        let mut back = DVector::zeros(v.len());
        for f in &xs {
            back += f * ip(&iw.g0, f, v);
        }
        let d = v - back;
        let nv = ip(&iw.cartan.btheta, v, v).max(f64::MIN_POSITIVE).sqrt();
        let residual = ip(&iw.cartan.btheta, &d, &d).max(0.0).sqrt() / nv;
        if residual > 1e-10 {
            return Err(Error::NotInS { residual });
        }
    }
    Ok(ip(&iw.g0, x, y))
}

/// Frame coefficient functions.
pub type CoeffFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
/// Matrix-valued derivative data; for coordinate Jacobians entry (ℓ, c) is ∂_c f^ℓ,
/// for frame Jacobians entry (ℓ, k) is X_k f^ℓ.
pub type JacFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// How derivatives of a field are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeMode {
    Analytic,
    /// Central differences with step `h` times the field's length scale.
    FiniteDifference {
        h: f64,
    },
}

/// A vector field Σ f^ℓ X_ℓ on S given by its frame coefficients.
#[derive(Clone)]
pub struct FieldOnS {
    m: usize,
    value: CoeffFn,
    coord_jac: Option<JacFn>,
    frame_jac: Option<JacFn>,
    pub mode: DerivativeMode,
    /// Typical length over which the coefficients vary.
    pub length_scale: f64,
}

impl std::fmt::Debug for FieldOnS {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldOnS")
            .field("m", &self.m)
            .field("mode", &self.mode)
            .field("length_scale", &self.length_scale)
            .finish()
    }
}

impl FieldOnS {
    /// Field with coefficients only; derivatives by central differences.
    pub fn new(m: usize, value: CoeffFn, length_scale: f64) -> Self {
        Self {
            m,
            value,
            coord_jac: None,
            frame_jac: None,
            mode: DerivativeMode::FiniteDifference { h: FD_STEP },
            length_scale,
        }
    }

    /// Field with an analytic coordinate Jacobian.
    pub fn with_jacobian(m: usize, value: CoeffFn, jac: JacFn, length_scale: f64) -> Self {
        Self {
            m,
            value,
            coord_jac: Some(jac),
            frame_jac: None,
            mode: DerivativeMode::Analytic,
            length_scale,
        }
    }

    pub fn zero(m: usize) -> Self {
        Self::constant(&DVector::zeros(m))
    }

    /// Constant frame coefficients (a left-invariant field).
    pub fn constant(c: &DVector<f64>) -> Self {
        let m = c.len();
        let c = c.clone();
        Self::with_jacobian(
            m,
            Arc::new(move |_| c.clone()),
            Arc::new(move |_| DMatrix::zeros(m, m)),
            1.0,
        )
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        (self.value)(x)
    }

    /// Same field with derivatives forced to finite differences.
    pub fn finite_difference(mut self, h: f64) -> Self {
        self.mode = DerivativeMode::FiniteDifference { h };
        self
    }

    /// c · f.
    pub fn scaled(&self, c: f64) -> Self {
        let v = self.value.clone();
        let cj = self.coord_jac.clone();
        let fj = self.frame_jac.clone();
        Self {
            m: self.m,
            value: Arc::new(move |x| v(x) * c),
            coord_jac: cj.map(|j| -> JacFn { Arc::new(move |x| j(x) * c) }),
            frame_jac: fj.map(|j| -> JacFn { Arc::new(move |x| j(x) * c) }),
            mode: self.mode,
            length_scale: self.length_scale,
        }
    }

    /// Coordinate Jacobian J with J[(ℓ, c)] = ∂_c f^ℓ.
    pub fn coord_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if let (DerivativeMode::Analytic, Some(j)) = (self.mode, &self.coord_jac) {
            return Ok(j(x));
        }
        let h = match self.mode {
            DerivativeMode::FiniteDifference { h } => h,
            DerivativeMode::Analytic => FD_STEP,
        } * self.length_scale;
        let mut jac = DMatrix::zeros(self.m, x.len());
        let mut xp = x.to_vec();
        for c in 0..x.len() {
            xp[c] = x[c] + h;
            let fp = self.eval(&xp);
            xp[c] = x[c] - h;
            let fm = self.eval(&xp);
            xp[c] = x[c];
            let col = (fp - fm) / (2.0 * h);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonDifferentiable);
            }
            jac.set_column(c, &col);
        }
        Ok(jac)
    }

    /// D with D[(ℓ, k)] = X_k f^ℓ at x.
    pub fn frame_derivatives(&self, chart: &SChart, x: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(j) = &self.frame_jac {
            return Ok(j(x));
        }
        Ok(self.coord_jacobian(x)? * chart.frame_matrix(x))
    }

    /// The left translate x ↦ f(g⁻¹x). Frame derivatives are transported
    /// exactly because the frame is left-invariant.
    pub fn left_translated(&self, chart: &SChart, g: &[f64]) -> Self {
        let ginv = chart.inv(g);
        let inner = self.clone();
        let c1 = chart.clone();
        let c2 = chart.clone();
        let g1 = ginv.clone();
        let inner2 = self.clone();
        let value: CoeffFn = Arc::new(move |x| inner.eval(&c1.mul(&g1, x)));
        let frame_jac: JacFn = Arc::new(move |x| {
            let z = c2.mul(&ginv, x);
            inner2
                .frame_derivatives(&c2, &z)
                .unwrap_or_else(|_| DMatrix::from_element(inner2.m, z.len(), f64::NAN))
        });
        Self {
            m: self.m,
            value,
            coord_jac: None,
            frame_jac: Some(frame_jac),
            mode: DerivativeMode::FiniteDifference { h: FD_STEP },
            length_scale: self.length_scale,
        }
    }
}

/// div f = -Σ_i 2ρ(H_i) f^i + Σ_ℓ X_ℓ f^ℓ.
pub fn divergence(field: &FieldOnS, chart: &SChart, x: &[f64]) -> Result<f64> {
    let f = field.eval(x);
    let d = field.frame_derivatives(chart, x)?;
    let r = chart.rank();
    let mut s = 0.0;
    for i in 0..r {
        s -= 2.0 * chart.rho[i] * f[i];
    }
    for l in 0..chart.m() {
        s += d[(l, l)];
    }
    if !s.is_finite() {
        return Err(Error::NonDifferentiable);
    }
    Ok(s)
}

/// Divergence as the Lie derivative of the Riemannian volume along the flow of f.
///
/// With w = 1/|det M| the volume density, J(τ) = w(φ_τ x) det Dφ_τ(x) / w(x)
/// and div f(x) = J'(0). The flow uses RK4 with step 1e-3, Dφ_τ central
/// differences and J'(0) a five-point stencil.
pub fn divergence_oracle(field: &FieldOnS, chart: &SChart, x: &[f64]) -> Result<f64> {
    let m = x.len();
    let w = |z: &[f64]| 1.0 / chart.frame_matrix(z).determinant().abs();
    let w0 = w(x);
    let eta = FD_STEP * field.length_scale;
    let f = |z: &[f64]| -> Result<DVector<f64>> {
        let v = field.eval(z);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::FlowEscape);
        }
        Ok(v)
    };
    let jac_at = |tau: f64| -> Result<f64> {
        let end = chart.flow(x, tau, f)?;
        let mut dphi = DMatrix::zeros(m, m);
        let mut xp = x.to_vec();
        for c in 0..m {
            xp[c] = x[c] + eta;
            let p = chart.flow(&xp, tau, f)?;
            xp[c] = x[c] - eta;
            let q = chart.flow(&xp, tau, f)?;
            xp[c] = x[c];
            for r in 0..m {
                dphi[(r, c)] = (p[r] - q[r]) / (2.0 * eta);
            }
        }
        Ok(w(&end) * dphi.determinant() / w0)
    };
    let h = FLOW_STEP;
    let (jm2, jm1, jp1, jp2) = (jac_at(-2.0 * h)?, jac_at(-h)?, jac_at(h)?, jac_at(2.0 * h)?);
    Ok((jm2 - 8.0 * jm1 + 8.0 * jp1 - jp2) / (12.0 * h))
}

/// Levi-Civita connection of a left-invariant metric in the frame:
/// `gamma[(k*m + l)*m + l2]` is the X_{l2}-coefficient of ∇_{X_k} X_l.
#[derive(Debug, Clone)]
pub struct Connection {
    m: usize,
    gamma: Vec<f64>,
}

impl Connection {
    /// Koszul formula for left-invariant fields with metric Gram matrix `gram`
    /// on the frame: g(∇_X Y, Z) = ½(g([X,Y],Z) - g([X,Z],Y) - g([Y,Z],X)).
    pub fn new(chart: &SChart, gram: &DMatrix<f64>) -> Self {
        let m = chart.m();
        let gb = |a: usize, b: usize, z: usize| -> f64 { (0..m).map(|c| chart.s_struct(a, b, c) * gram[(c, z)]).sum() };
        let lu = gram.clone().lu();
        let mut gamma = vec![0.0; m * m * m];
        for k in 0..m {
            for l in 0..m {
                let rhs = DVector::from_iterator(m, (0..m).map(|z| 0.5 * (gb(k, l, z) - gb(k, z, l) - gb(l, z, k))));
                let sol = lu.solve(&rhs).expect("metric Gram matrix must be invertible");
                for z in 0..m {
                    gamma[(k * m + l) * m + z] = sol[z];
                }
            }
        }
        Self { m, gamma }
    }

    /// Connection of the Killing metric g0 (identity Gram matrix on the frame).
    pub fn killing(chart: &SChart) -> Self {
        Self::new(chart, &DMatrix::identity(chart.m(), chart.m()))
    }

    pub fn gamma(&self, k: usize, l: usize, l2: usize) -> f64 {
        self.gamma[(k * self.m + l) * self.m + l2]
    }

    /// ∇_X X_l for X = Σ x^k X_k, as frame coefficients.
    pub fn covariant_derivative(&self, x: &DVector<f64>, l: usize) -> Result<DVector<f64>> {
        if l >= self.m {
            return Err(Error::IndexOutOfRange { index: l, len: self.m });
        }
        if x.len() != self.m {
            return Err(Error::IndexOutOfRange {
                index: x.len(),
                len: self.m,
            });
        }
        Ok(DVector::from_iterator(
            self.m,
            (0..self.m).map(|z| (0..self.m).map(|k| x[k] * self.gamma(k, l, z)).sum::<f64>()),
        ))
    }
}

/// |∇φ| with respect to g0 at x.
pub fn gradient_norm(phi: &FieldOnS, chart: &SChart, conn: &Connection, x: &[f64]) -> Result<f64> {
    let m = chart.m();
    let p = phi.eval(x);
    let d = phi.frame_derivatives(chart, x)?;
    let mut s = 0.0;
    for k in 0..m {
        for l2 in 0..m {
            let mut v = d[(l2, k)];
            for l in 0..m {
                v += p[l] * conn.gamma(k, l, l2);
            }
            s += v * v;
        }
    }
    if !s.is_finite() {
        return Err(Error::NonDifferentiable);
    }
    Ok(s.sqrt())
}
