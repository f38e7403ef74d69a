//! Cartan decomposition, maximal abelian subspaces of p, restricted roots,
//! positive systems, gradings of n and good frames of s = a + n.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::MatrixLieAlgebra;
use crate::linalg::{gram_schmidt, max_abs, null_space, sorted_sym_eigen, sqrt_and_inv_sqrt};

/// Relative tolerance used to group eigenvalues of ad H* into root clusters.
pub const CLUSTER_TOL: f64 = 1e-8;
/// Maximum number of generic elements tried before giving up.
pub const MAX_GENERICITY_ATTEMPTS: usize = 8;
/// Tolerance for unit-norm and membership preconditions.
pub const UNIT_TOL: f64 = 1e-10;

fn ip(g: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (x.transpose() * g * y)[(0, 0)]
}

/// The split g = k + p for the involution X -> -X^T.
#[derive(Debug, Clone)]
pub struct CartanData {
    /// Coordinate matrix of theta.
    pub theta: DMatrix<f64>,
    /// Gram matrix of B_theta(X, Y) = -B(X, theta Y).
    pub btheta: DMatrix<f64>,
    /// B_theta-orthonormal basis of k.
    pub k_basis: Vec<DVector<f64>>,
    /// B_theta-orthonormal (equivalently Killing-orthonormal) basis of p.
    pub p_basis: Vec<DVector<f64>>,
    pub theta_square_residual: f64,
    pub automorphism_residual: f64,
    pub btheta_min_eig: f64,
}

/// Compute theta, B_theta and the eigenspace split.
pub fn cartan_split(alg: &MatrixLieAlgebra) -> Result<CartanData> {
    let dim = alg.dim();
    let mut theta = DMatrix::zeros(dim, dim);
    let mut span_res = 0.0f64;
    for (i, b) in alg.basis().iter().enumerate() {
        let (c, r) = alg.coords_of_matrix(&(-b.transpose()));
        span_res = span_res.max(r / b.norm());
        theta.set_column(i, &c);
    }
    if span_res > 1e-10 {
        return Err(Error::ThetaNotAutomorphism { residual: span_res });
    }
    let theta_square_residual = max_abs(&(&theta * &theta - DMatrix::identity(dim, dim)));
    let mut auto_res = theta_square_residual;
    for i in 0..dim {
        // theta ∘ ad_{B_i} = ad_{theta B_i} ∘ theta
        let ei = alg.basis_element(i).coords;
        let lhs = &theta * alg.ad_coords(&ei);
        let rhs = alg.ad_coords(&(&theta * &ei)) * &theta;
        auto_res = auto_res.max(max_abs(&(lhs - rhs)));
    }
    if auto_res > 1e-10 {
        return Err(Error::ThetaNotAutomorphism { residual: auto_res });
    }
    let b = alg.killing_gram();
    let bt = -(b * &theta);
    let btheta = (&bt + bt.transpose()) * 0.5;
    let (eigs, _) = sorted_sym_eigen(&btheta);
    let min_eig = eigs[0];
    if min_eig <= 0.0 {
        return Err(Error::BThetaNotPositive { min_eig });
    }
    let id = DMatrix::<f64>::identity(dim, dim);
    let pk = (&id + &theta) * 0.5;
    let pp = (&id - &theta) * 0.5;
    let cols = |m: &DMatrix<f64>| (0..dim).map(|j| m.column(j).into_owned()).collect::<Vec<_>>();
    let k_basis = gram_schmidt(&cols(&pk), &btheta, 1e-8);
    let p_basis = gram_schmidt(&cols(&pp), &btheta, 1e-8);

    Ok(CartanData {
        theta,
        btheta,
        k_basis,
        p_basis,
        theta_square_residual,
        automorphism_residual: auto_res,
        btheta_min_eig: min_eig,
    })
}

impl CartanData {
    /// Norm of the k-component of `x` relative to |x| (zero for elements of p).
    pub fn p_residual(&self, x: &DVector<f64>) -> f64 {
        let k = (x + &self.theta * x) * 0.5;
        ip(&self.btheta, &k, &k).max(0.0).sqrt() / ip(&self.btheta, x, x).max(f64::MIN_POSITIVE).sqrt()
    }

    /// Gram matrix of the Killing metric g0 on s coordinates:
    /// g0(X, Y) = B((X - theta X)/2, (Y - theta Y)/2).
    pub fn g0_gram(&self, killing: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.theta.nrows();
        let q = (DMatrix::identity(n, n) - &self.theta) * 0.5;
        let g = q.transpose() * killing * q;
        (&g + g.transpose()) * 0.5
    }
}

/// Result of [`maximal_abelian`].
#[derive(Debug, Clone)]
pub struct AbelianSubspace {
    /// Killing-orthonormal basis of a (seed first when given).
    pub basis: Vec<DVector<f64>>,
    /// Dimension of the commutant of a inside p; equals the rank when maximal.
    pub commutant_dim: usize,
}

fn commutant_in_p(alg: &MatrixLieAlgebra, cd: &CartanData, a: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let dim = alg.dim();
    let dp = cd.p_basis.len();
    let pmat = DMatrix::from_fn(dim, dp, |i, j| cd.p_basis[j][i]);
    if a.is_empty() {
        return cd.p_basis.clone();
    }
    let mut stack = DMatrix::zeros(dim * a.len(), dp);
    for (s, h) in a.iter().enumerate() {
        let block = alg.ad_coords(h) * &pmat;
        stack.view_mut((s * dim, 0), (dim, dp)).copy_from(&block);
    }
    null_space(&stack, 1e-8).into_iter().map(|c| &pmat * c).collect()
}

/// A maximal abelian subspace of p containing `seed` (first) when given.
pub fn maximal_abelian(
    alg: &MatrixLieAlgebra,
    cd: &CartanData,
    seed: Option<&DVector<f64>>,
) -> Result<AbelianSubspace> {
    let k = alg.killing_gram();
    let mut a: Vec<DVector<f64>> = Vec::new();
    if let Some(s) = seed {
        let residual = cd.p_residual(s);
        if residual > UNIT_TOL {
            return Err(Error::SeedNotInP { residual });
        }
        let norm = ip(k, s, s).max(0.0).sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::SeedNotUnit { norm });
        }
        a.push(s.clone());
    }
    for _ in 0..=cd.p_basis.len() {
        let comm = commutant_in_p(alg, cd, &a);
        if comm.len() == a.len() {
            return Ok(AbelianSubspace {
                basis: a,
                commutant_dim: comm.len(),
            });
        }
        if comm.len() < a.len() {
            return Err(Error::SeedNotExtendable);
        }
        let mut candidates = a.clone();
        candidates.extend(comm);
        let ortho = gram_schmidt(&candidates, k, 1e-8);
        if ortho.len() <= a.len() {
            return Err(Error::SeedNotExtendable);
        }
        // keep the existing vectors untouched; add the first new direction
        let fresh = ortho[a.len()].clone();
        a.push(fresh);
    }
    Err(Error::SeedNotExtendable)
}

/// A restricted root together with its root space.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Root {
    /// alpha(H_i) for the basis H_i of a.
    pub values: Vec<f64>,
    /// B_theta-orthonormal basis of g_alpha (algebra coordinates).
    pub space: Vec<Vec<f64>>,
}

impl Root {
    pub fn multiplicity(&self) -> usize {
        self.space.len()
    }
    pub fn values_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
    pub fn space_vecs(&self) -> Vec<DVector<f64>> {
        self.space.iter().map(|v| DVector::from_column_slice(v)).collect()
    }
}

/// Roots and the zero weight space g_0.
#[derive(Debug, Clone)]
pub struct RootSystem {
    pub roots: Vec<Root>,
    pub g0_space: Vec<DVector<f64>>,
    /// Number of generic elements tried.
    pub attempts: usize,
}

fn canonical_space_basis(vs: &[DVector<f64>], g: &DMatrix<f64>) -> Vec<DVector<f64>> {
    // B_theta-orthogonal projector onto span(vs); projecting the standard basis
    // in order gives a basis that does not depend on the eigensolver's choices.
    let dim = g.nrows();
    let k = vs.len();
    let v = DMatrix::from_fn(dim, k, |i, j| vs[j][i]);
    let proj = &v * v.transpose() * g;
    let mut out = Vec::with_capacity(k);
    for e in 0..dim {
        if out.len() == k {
            break;
        }
        let mut cand = out.clone();
        cand.push(proj.column(e).into_owned());
        let gs = gram_schmidt(&cand, g, 1e-6);
        if gs.len() > out.len() {
            out = gs;
        }
    }
    out
}

fn lex_cmp(a: &[f64], b: &[f64], tol: f64) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > tol {
            return x.total_cmp(y);
        }
    }
    std::cmp::Ordering::Equal
}

/// Simultaneous diagonalisation of ad(a) through one generic element.
pub fn restricted_roots(
    alg: &MatrixLieAlgebra,
    cd: &CartanData,
    a_basis: &[DVector<f64>],
    seed: u64,
) -> Result<RootSystem> {
    let r = a_basis.len();
    let (s, si) = sqrt_and_inv_sqrt(&cd.btheta);
    let sym_ad: Vec<DMatrix<f64>> = a_basis
        .iter()
        .map(|h| {
            let m = &s * alg.ad_coords(h) * &si;
            (&m + m.transpose()) * 0.5
        })
        .collect();
    let scales: Vec<f64> = sym_ad.iter().map(|m| max_abs(m).max(1e-300)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=MAX_GENERICITY_ATTEMPTS {
        let gamma: Vec<f64> = (0..r)
            .map(|_| {
                let mag: f64 = rng.random_range(0.5..1.5);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let mut hstar = DMatrix::zeros(alg.dim(), alg.dim());
        for i in 0..r {
            hstar += &sym_ad[i] * gamma[i];
        }
        let (vals, vecs) = sorted_sym_eigen(&hstar);
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for i in 0..vals.len() {
            match clusters.last_mut() {
                Some(c) if (vals[i] - vals[*c.last().unwrap()]).abs() <= CLUSTER_TOL * scale => c.push(i),
                _ => clusters.push(vec![i]),
            }
        }
        let mut ok = true;
        let mut roots = Vec::new();
        let mut g0 = None;
        for c in &clusters {
            let w = DMatrix::from_fn(vals.len(), c.len(), |i, j| vecs[(i, c[j])]);
            let mut values = Vec::with_capacity(r);
            for (i, m) in sym_ad.iter().enumerate() {
                let mw = m * &w;
                let alpha = (w.transpose() * &mw).trace() / c.len() as f64;
                if max_abs(&(mw - &w * alpha)) > 1e-7 * scales[i] {
                    ok = false;
                }
                values.push(alpha);
            }
            if !ok {
                break;
            }
            let space: Vec<DVector<f64>> = (0..c.len()).map(|j| &si * w.column(j)).collect();
            let space = canonical_space_basis(&space, &cd.btheta);
            let is_zero = values.iter().zip(&scales).all(|(v, sc)| v.abs() <= CLUSTER_TOL * sc);
            if is_zero {
                if g0.is_some() {
                    ok = false;
                    break;
                }
                g0 = Some(space);
            } else {
                roots.push(Root {
                    values,
                    space: space.iter().map(|v| v.as_slice().to_vec()).collect(),
                });
            }
        }
        if !ok {
            continue;
        }
        let Some(g0_space) = g0 else { continue };
        let tol = 1e-7 * scales.iter().cloned().fold(0.0, f64::max);
        roots.sort_by(|a, b| lex_cmp(&a.values, &b.values, tol));
        return Ok(RootSystem {
            roots,
            g0_space,
            attempts: attempt,
        });
    }
    Err(Error::GenericityFailure {
        attempts: MAX_GENERICITY_ATTEMPTS,
    })
}

/// Positive system, simple roots, grading and rho.
#[derive(Debug, Clone)]
pub struct PositiveSystem {
    /// Indices into the root list, ordered by grading then lexicographically.
    pub positive: Vec<usize>,
    /// Indices into the root list.
    pub simple: Vec<usize>,
    /// Simple-root coefficients of each positive root (same order as `positive`).
    pub coefficients: Vec<Vec<u32>>,
    /// d(alpha) for each positive root.
    pub grading: Vec<u32>,
    /// rho(H_i) on the a basis.
    pub rho: DVector<f64>,
}

/// Choose positive roots by the sign of alpha(direction), breaking ties
/// lexicographically in the a basis coordinates.
pub fn choose_positive(roots: &[Root], direction: &DVector<f64>) -> Result<PositiveSystem> {
    let r = direction.len();
    let scale = roots
        .iter()
        .flat_map(|a| a.values.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let tol = 1e-9 * scale;
    let key = |a: &Root| {
        let mut k = vec![a.values_vec().dot(direction)];
        k.extend_from_slice(&a.values);
        k
    };
    let zero = vec![0.0; r + 1];
    let mut pos: Vec<usize> = (0..roots.len())
        .filter(|&i| lex_cmp(&key(&roots[i]), &zero, tol) == std::cmp::Ordering::Greater)
        .collect();
    let close = |a: &DVector<f64>, b: &DVector<f64>| (a - b).amax() <= 1e-7 * scale;
    let vals: Vec<DVector<f64>> = roots.iter().map(|a| a.values_vec()).collect();
    let simple: Vec<usize> = pos
        .iter()
        .copied()
        .filter(|&i| {
            !pos.iter()
                .any(|&j| pos.iter().any(|&k| close(&(&vals[j] + &vals[k]), &vals[i])))
        })
        .collect();
    let smat = DMatrix::from_fn(r, simple.len(), |i, j| vals[simple[j]][i]);
    let solve = smat.clone().svd(true, true);
    let mut coeffs = Vec::with_capacity(pos.len());
    for &i in &pos {
        let c = solve
            .solve(&vals[i], 1e-12)
            .map_err(|_| Error::NotDecomposable { index: i })?;
        let rounded: Vec<f64> = c.iter().map(|x| x.round()).collect();
        let back = &smat * DVector::from_column_slice(&rounded);
        if rounded.iter().any(|&x| x < 0.0) || !close(&back, &vals[i]) {
            return Err(Error::NotDecomposable { index: i });
        }
        coeffs.push(rounded.iter().map(|&x| x as u32).collect::<Vec<u32>>());
    }
    let grading: Vec<u32> = coeffs.iter().map(|c| c.iter().sum()).collect();
    // order positive roots by grading, keeping the lexicographic order inside a level
    let mut order: Vec<usize> = (0..pos.len()).collect();
    order.sort_by_key(|&k| grading[k]);
    let coefficients: Vec<Vec<u32>> = order.iter().map(|&k| coeffs[k].clone()).collect();
    let grading: Vec<u32> = order.iter().map(|&k| grading[k]).collect();
    pos = order.iter().map(|&k| pos[k]).collect();
    let mut rho = DVector::zeros(r);
    for &i in &pos {
        rho += &vals[i] * (roots[i].multiplicity() as f64 * 0.5);
    }
    Ok(PositiveSystem {
        positive: pos,
        simple,
        coefficients,
        grading,
        rho,
    })
}

/// All the data attached to one Iwasawa decomposition.
#[derive(Debug, Clone)]
pub struct IwasawaStructure {
    pub cartan: CartanData,
    /// Killing-orthonormal basis of a.
    pub a_basis: Vec<DVector<f64>>,
    pub roots: RootSystem,
    pub positive: PositiveSystem,
    /// Concatenated root-space bases of the positive roots, in `positive` order.
    pub n_basis: Vec<DVector<f64>>,
    /// For each vector of `n_basis`, its position in `positive.positive`.
    pub n_root: Vec<usize>,
    /// Gram matrix of g0 on algebra coordinates.
    pub g0: DMatrix<f64>,
    /// Copy of the Killing Gram matrix.
    pub killing: DMatrix<f64>,
    pub commutant_dim: usize,
}

impl IwasawaStructure {
    pub fn rank(&self) -> usize {
        self.a_basis.len()
    }
    /// dim S = dim a + dim n.
    pub fn m(&self) -> usize {
        self.a_basis.len() + self.n_basis.len()
    }
    /// alpha values of a positive root (index into `positive.positive`).
    pub fn positive_root(&self, k: usize) -> &Root {
        &self.roots.roots[self.positive.positive[k]]
    }

    /// Evaluate a functional given by values on `a_basis` at an element of a.
    pub fn eval_functional(&self, values: &DVector<f64>, h: &DVector<f64>) -> f64 {
        let c = DVector::from_iterator(self.rank(), self.a_basis.iter().map(|a| ip(&self.killing, a, h)));
        values.dot(&c)
    }

    /// Coordinates of `h` in `a_basis` and the relative residual of that expansion.
    pub fn a_coords(&self, h: &DVector<f64>) -> (DVector<f64>, f64) {
        let c = DVector::from_iterator(self.rank(), self.a_basis.iter().map(|a| ip(&self.killing, a, h)));
        let mut back = DVector::zeros(h.len());
        for (i, a) in self.a_basis.iter().enumerate() {
            back += a * c[i];
        }
        let d = h - back;
        let nh = ip(&self.cartan.btheta, h, h).max(f64::MIN_POSITIVE).sqrt();
        (c, ip(&self.cartan.btheta, &d, &d).max(0.0).sqrt() / nh)
    }

    fn projector(&self, space: &[DVector<f64>]) -> DMatrix<f64> {
        let dim = self.killing.nrows();
        if space.is_empty() {
            return DMatrix::zeros(dim, dim);
        }
        let v = DMatrix::from_fn(dim, space.len(), |i, j| space[j][i]);
        &v * v.transpose() * &self.cartan.btheta
    }

    fn bnorm(&self, x: &DVector<f64>) -> f64 {
        ip(&self.cartan.btheta, x, x).max(0.0).sqrt()
    }

    /// Largest component of [g_alpha, g_beta] outside g_{alpha+beta} over all
    /// pairs of roots (g_0 when beta = -alpha, nothing when alpha+beta is not a weight).
    pub fn root_bracket_residual(&self, alg: &MatrixLieAlgebra) -> f64 {
        let rs = &self.roots.roots;
        let tol = 1e-7
            * rs.iter()
                .flat_map(|a| a.values.iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for a in rs {
            for b in rs {
                let sum = &a.values_vec() + b.values_vec();
                let target: Vec<DVector<f64>> = if sum.amax() <= tol {
                    self.roots.g0_space.clone()
                } else {
                    rs.iter()
                        .find(|c| (c.values_vec() - &sum).amax() <= tol)
                        .map(|c| c.space_vecs())
                        .unwrap_or_default()
                };
                let p = self.projector(&target);
                for x in a.space_vecs() {
                    for y in b.space_vecs() {
                        let z = alg.bracket_coords(&x, &y);
                        worst = worst.max(self.bnorm(&(&z - &p * &z)));
                    }
                }
            }
        }
        worst
    }

    /// Largest component of [V_j, V_k] outside V_{j+k}.
    pub fn grading_residual(&self, alg: &MatrixLieAlgebra) -> f64 {
        let level = |k: u32| -> Vec<DVector<f64>> {
            self.n_basis
                .iter()
                .zip(&self.n_root)
                .filter(|(_, &ri)| self.positive.grading[ri] == k)
                .map(|(v, _)| v.clone())
                .collect()
        };
        let mut worst = 0.0f64;
        for (x, &rx) in self.n_basis.iter().zip(&self.n_root) {
            for (y, &ry) in self.n_basis.iter().zip(&self.n_root) {
                let p = self.projector(&level(self.positive.grading[rx] + self.positive.grading[ry]));
                let z = alg.bracket_coords(x, y);
                worst = worst.max(self.bnorm(&(&z - &p * &z)));
            }
        }
        worst
    }

    /// dim g_0 + sum of root multiplicities.
    pub fn weight_space_total(&self) -> usize {
        self.roots.g0_space.len() + self.roots.roots.iter().map(|a| a.multiplicity()).sum::<usize>()
    }

    /// Max over the abelian basis of |[H_i, H_j]|.
    pub fn abelian_residual(&self, alg: &MatrixLieAlgebra) -> f64 {
        let mut w = 0.0f64;
        for x in &self.a_basis {
            for y in &self.a_basis {
                w = w.max(self.bnorm(&alg.bracket_coords(x, y)));
            }
        }
        w
    }

    /// Weyl symmetry: largest mismatch between alpha and the nearest -beta,
    /// and whether multiplicities agree.
    pub fn weyl_symmetry(&self) -> (f64, bool) {
        let rs = &self.roots.roots;
        let mut worst = 0.0f64;
        let mut mult_ok = true;
        for a in rs {
            let (d, b) = rs
                .iter()
                .map(|b| ((a.values_vec() + b.values_vec()).amax(), b))
                .min_by(|x, y| x.0.total_cmp(&y.0))
                .unwrap();
            worst = worst.max(d);
            mult_ok &= a.multiplicity() == b.multiplicity();
        }
        (worst, mult_ok)
    }

    /// max rho(H) over `samples` random unit directions of a, with the maximiser.
    pub fn max_rho_direction(&self, samples: usize, seed: u64) -> (f64, DVector<f64>) {
        let r = self.rank();
        // the exact maximiser is rho's dual, normalised
        let n = self.positive.rho.norm();
        let mut best = (n, &self.positive.rho / n.max(1e-300));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let v = DVector::from_iterator(r, (0..r).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)));
            let v = &v / v.norm().max(1e-300);
            let val = self.positive.rho.dot(&v);
            if val > best.0 {
                best = (val, v);
            }
        }
        best
    }

    /// Element of a with the given a_basis coordinates.
    pub fn a_element(&self, coords: &DVector<f64>) -> DVector<f64> {
        let mut h = DVector::zeros(self.killing.nrows());
        for (i, a) in self.a_basis.iter().enumerate() {
            h += a * coords[i];
        }
        h
    }
}

/// Build an Iwasawa structure; `seed_h` (unit, in p) is put first in a and
/// also used as the positivity direction.
pub fn iwasawa(alg: &MatrixLieAlgebra, seed_h: Option<&DVector<f64>>, rng_seed: u64) -> Result<IwasawaStructure> {
    let cartan = cartan_split(alg)?;
    let ab = maximal_abelian(alg, &cartan, seed_h)?;
    let roots = restricted_roots(alg, &cartan, &ab.basis, rng_seed)?;
    let r = ab.basis.len();
    let mut dir = DVector::zeros(r);
    dir[0] = 1.0;
    let positive = choose_positive(&roots.roots, &dir)?;
    let mut n_basis = Vec::new();
    let mut n_root = Vec::new();
    for (k, &ri) in positive.positive.iter().enumerate() {
        for v in roots.roots[ri].space_vecs() {
            n_basis.push(v);
            n_root.push(k);
        }
    }
    let g0 = cartan.g0_gram(alg.killing_gram());
    Ok(IwasawaStructure {
        cartan,
        a_basis: ab.basis,
        roots,
        positive,
        n_basis,
        n_root,
        g0,
        killing: alg.killing_gram().clone(),
        commutant_dim: ab.commutant_dim,
    })
}

/// A g0-orthonormal basis of s: H_1..H_r then root vectors Y_1..Y_{m-r}.
#[derive(Debug, Clone)]
pub struct GoodFrame {
    pub h: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    /// Position (in the positive-root list) of the root of each Y_j.
    pub y_root: Vec<usize>,
    /// alpha_j(H_i): row j, column i.
    pub alpha: DMatrix<f64>,
    /// rho(H_i) on the frame's H vectors.
    pub rho: DVector<f64>,
    /// d(alpha_j) for each Y_j.
    pub grading: Vec<u32>,
}

impl GoodFrame {
    pub fn rank(&self) -> usize {
        self.h.len()
    }
    pub fn m(&self) -> usize {
        self.h.len() + self.y.len()
    }
    /// X_1..X_m in algebra coordinates.
    pub fn vectors(&self) -> Vec<DVector<f64>> {
        self.h.iter().chain(self.y.iter()).cloned().collect()
    }
    /// Gram matrix of the frame under `g`.
    pub fn gram(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let v = self.vectors();
        DMatrix::from_fn(v.len(), v.len(), |i, j| ip(g, &v[i], &v[j]))
    }
}

/// Good frame; when `h1` is given it becomes H_1.
pub fn good_frame(iw: &IwasawaStructure, h1: Option<&DVector<f64>>) -> Result<GoodFrame> {
    let mut hs = Vec::new();
    if let Some(h) = h1 {
        let (_, residual) = iw.a_coords(h);
        if residual > UNIT_TOL {
            return Err(Error::H1NotInA { residual });
        }
        let norm = ip(&iw.g0, h, h).max(0.0).sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::H1NotUnit { norm });
        }
        hs.push(h.clone());
    }
    hs.extend(iw.a_basis.iter().cloned());
    let mut h = gram_schmidt(&hs, &iw.g0, 1e-8);
    if let Some(h1) = h1 {
        // keep the prescribed vector bit-for-bit
        h[0] = h1.clone();
    }
    let mut y = Vec::new();
    let mut y_root = Vec::new();
    for k in 0..iw.positive.positive.len() {
        let space = iw.positive_root(k).space_vecs();
        for v in gram_schmidt(&space, &iw.g0, 1e-8) {
            y.push(v);
            y_root.push(k);
        }
    }
    let r = h.len();
    let hc: Vec<DVector<f64>> = h.iter().map(|x| iw.a_coords(x).0).collect();
    let alpha = DMatrix::from_fn(y.len(), r, |j, i| iw.positive_root(y_root[j]).values_vec().dot(&hc[i]));
    let rho = DVector::from_iterator(r, hc.iter().map(|c| iw.positive.rho.dot(c)));
    let grading = y_root.iter().map(|&k| iw.positive.grading[k]).collect();
    Ok(GoodFrame {
        h,
        y,
        y_root,
        alpha,
        rho,
        grading,
    })
}

/// Iwasawa structure and good frame adapted to a unit vector v0 of p: v0 is
/// placed in a and becomes H_1, and the positive system is chosen by v0.
pub fn adapted_structure(
    alg: &MatrixLieAlgebra,
    v0: &DVector<f64>,
    rng_seed: u64,
) -> Result<(IwasawaStructure, GoodFrame)> {
    let iw = iwasawa(alg, Some(v0), rng_seed)?;
    let frame = good_frame(&iw, Some(v0))?;
    Ok((iw, frame))
}

/// JSON view of an Iwasawa structure and its frame.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StructureSummary {
    pub dim: usize,
    pub k_dim: usize,
    pub p_dim: usize,
    pub rank: usize,
    pub m: usize,
    pub a_basis: Vec<Vec<f64>>,
    pub roots: Vec<Root>,
    pub positive: Vec<usize>,
    pub simple: Vec<usize>,
    pub grading: Vec<u32>,
    pub rho: Vec<f64>,
    pub frame_h: Vec<Vec<f64>>,
    pub frame_y: Vec<Vec<f64>>,
    /// alpha_j(H_i) on the frame, row per Y_j.
    pub frame_alpha: Vec<Vec<f64>>,
    pub frame_rho: Vec<f64>,
}

impl StructureSummary {
    pub fn new(alg: &MatrixLieAlgebra, iw: &IwasawaStructure, frame: &GoodFrame) -> Self {
        let v = |x: &DVector<f64>| x.as_slice().to_vec();
        Self {
            dim: alg.dim(),
            k_dim: iw.cartan.k_basis.len(),
            p_dim: iw.cartan.p_basis.len(),
            rank: iw.rank(),
            m: iw.m(),
            a_basis: iw.a_basis.iter().map(v).collect(),
            roots: iw.roots.roots.clone(),
            positive: iw.positive.positive.clone(),
            simple: iw.positive.simple.clone(),
            grading: iw.positive.grading.clone(),
            rho: v(&iw.positive.rho),
            frame_h: frame.h.iter().map(v).collect(),
            frame_y: frame.y.iter().map(v).collect(),
            frame_alpha: (0..frame.alpha.nrows())
                .map(|j| frame.alpha.row(j).iter().copied().collect())
                .collect(),
            frame_rho: v(&frame.rho),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{build_algebra, FamilySpec};

    fn alg(spec: FamilySpec) -> MatrixLieAlgebra {
        build_algebra(&spec).unwrap()
    }

    #[test]
    fn cartan_dims() {
        for (spec, k, p) in [
            (FamilySpec::Sl { n: 2 }, 1, 2),
            (FamilySpec::Sl { n: 3 }, 3, 5),
            (FamilySpec::So { n: 3 }, 3, 3),
        ] {
            let cd = cartan_split(&alg(spec)).unwrap();
            assert_eq!((cd.k_basis.len(), cd.p_basis.len()), (k, p));
            assert!(cd.theta_square_residual < 1e-12);
            assert!(cd.btheta_min_eig > 0.0);
        }
    }

    #[test]
    fn sl2_k_is_e_minus_f() {
        let cd = cartan_split(&alg(FamilySpec::Sl { n: 2 })).unwrap();
        let k = &cd.k_basis[0];
        assert!(k[0].abs() < 1e-14);
        assert!((k[1] + k[2]).abs() < 1e-14);
    }

    #[test]
    fn sl2_seeded_abelian() {
        let g = alg(FamilySpec::Sl { n: 2 });
        let cd = cartan_split(&g).unwrap();
        let seed = DVector::from_vec(vec![1.0 / 8f64.sqrt(), 0.0, 0.0]);
        let a = maximal_abelian(&g, &cd, Some(&seed)).unwrap();
        assert_eq!(a.basis.len(), 1);
        assert_eq!(a.basis[0], seed);
    }

    #[test]
    fn seed_errors() {
        let g = alg(FamilySpec::Sl { n: 2 });
        let cd = cartan_split(&g).unwrap();
        let k = DVector::from_vec(vec![0.0, 0.5, -0.5]);
        assert!(matches!(
            maximal_abelian(&g, &cd, Some(&k)),
            Err(Error::SeedNotInP { .. })
        ));
        let h = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(matches!(
            maximal_abelian(&g, &cd, Some(&h)),
            Err(Error::SeedNotUnit { .. })
        ));
    }

    #[test]
    fn ranks() {
        for (spec, r) in [
            (FamilySpec::Sl { n: 2 }, 1),
            (FamilySpec::Sl { n: 3 }, 2),
            (FamilySpec::So { n: 3 }, 1),
        ] {
            let g = alg(spec);
            let iw = iwasawa(&g, None, 7).unwrap();
            assert_eq!(iw.rank(), r);
            assert_eq!(iw.commutant_dim, r);
            assert_eq!(iw.weight_space_total(), g.dim());
        }
    }

    #[test]
    fn sl2_roots_and_frame() {
        let g = alg(FamilySpec::Sl { n: 2 });
        let v0 = DVector::from_vec(vec![1.0 / 8f64.sqrt(), 0.0, 0.0]);
        let (iw, fr) = adapted_structure(&g, &v0, 1).unwrap();
        assert_eq!(iw.roots.roots.len(), 2);
        assert_eq!(iw.positive.positive.len(), 1);
        let alpha = iw.positive_root(0);
        // alpha(H) = 2 with H = sqrt(8) * H_1
        assert!((alpha.values[0] * 8f64.sqrt() - 2.0).abs() < 1e-12);
        assert_eq!(alpha.multiplicity(), 1);
        let y = &fr.y[0];
        let s = 2f64.sqrt();
        assert!((y[1].abs() - 1.0 / s).abs() < 1e-12 && y[0].abs() < 1e-12 && y[2].abs() < 1e-12);
        assert!((fr.rho[0] - s / 4.0).abs() < 1e-12);
        assert!((fr.alpha[(0, 0)] - s / 2.0).abs() < 1e-12);
    }

    #[test]
    fn sl2_opposite_chamber() {
        let g = alg(FamilySpec::Sl { n: 2 });
        let v0 = DVector::from_vec(vec![-1.0 / 8f64.sqrt(), 0.0, 0.0]);
        let (_, fr) = adapted_structure(&g, &v0, 1).unwrap();
        // positive root space is now spanned by F
        assert!(fr.y[0][1].abs() < 1e-12 && fr.y[0][2].abs() > 0.5);
        assert!(fr.alpha[(0, 0)] > 0.0);
    }

    #[test]
    fn sl3_a2_system() {
        let g = alg(FamilySpec::Sl { n: 3 });
        let iw = iwasawa(&g, None, 3).unwrap();
        assert_eq!(iw.roots.roots.len(), 6);
        assert_eq!(iw.positive.positive.len(), 3);
        assert_eq!(iw.positive.simple.len(), 2);
        assert_eq!(iw.positive.grading, vec![1, 1, 2]);
        assert_eq!(iw.n_basis.len(), 3);
        assert_eq!(iw.m(), 5);
        // rho = alpha_1 + alpha_2
        let s: DVector<f64> = iw.positive.simple.iter().map(|&i| iw.roots.roots[i].values_vec()).sum();
        assert!((&iw.positive.rho - s).amax() < 1e-12);
        assert!(iw.root_bracket_residual(&g) < 1e-9);
        assert!(iw.grading_residual(&g) < 1e-9);
        assert!(iw.abelian_residual(&g) < 1e-10);
    }

    #[test]
    fn so31_multiplicity_two() {
        let g = alg(FamilySpec::So { n: 3 });
        let iw = iwasawa(&g, None, 3).unwrap();
        assert_eq!(iw.positive.positive.len(), 1);
        assert_eq!(iw.positive_root(0).multiplicity(), 2);
        assert_eq!(iw.m(), 3);
        let (w, ok) = iw.weyl_symmetry();
        assert!(w < 1e-10 && ok);
    }

    #[test]
    fn frame_orthonormal_and_orthogonal() {
        for spec in [
            FamilySpec::Sl { n: 2 },
            FamilySpec::Sl { n: 3 },
            FamilySpec::So { n: 3 },
            FamilySpec::Sl { n: 4 },
        ] {
            let g = alg(spec);
            let iw = iwasawa(&g, None, 5).unwrap();
            let fr = good_frame(&iw, None).unwrap();
            let gram = fr.gram(&iw.g0);
            assert!((gram - DMatrix::identity(fr.m(), fr.m())).amax() < 1e-10);
        }
    }

    #[test]
    fn h1_errors() {
        let g = alg(FamilySpec::Sl { n: 3 });
        let iw = iwasawa(&g, None, 3).unwrap();
        let not_a = iw.n_basis[0].clone();
        assert!(matches!(good_frame(&iw, Some(&not_a)), Err(Error::H1NotInA { .. })));
        let long = &iw.a_basis[0] * 2.0;
        assert!(matches!(good_frame(&iw, Some(&long)), Err(Error::H1NotUnit { .. })));
    }

    #[test]
    fn deterministic() {
        let g = alg(FamilySpec::Sl { n: 3 });
        let a = good_frame(&iwasawa(&g, None, 11).unwrap(), None).unwrap();
        let b = good_frame(&iwasawa(&g, None, 11).unwrap(), None).unwrap();
        assert_eq!(a.vectors(), b.vectors());
    }

    #[test]
    fn summary_roundtrip() {
        let g = alg(FamilySpec::Sl { n: 2 });
        let iw = iwasawa(&g, None, 1).unwrap();
        let fr = good_frame(&iw, None).unwrap();
        let s = StructureSummary::new(&g, &iw, &fr);
        let text = serde_json::to_string(&s).unwrap();
        let back: StructureSummary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
