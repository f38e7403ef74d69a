//! Real matrix Lie algebras: brackets, adjoint maps and the Killing form.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, sorted_sym_eigen};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Largest algebra dimension accepted by [`build_algebra`].
pub const MAX_DIM: usize = 64;
/// Closure tolerance for custom bases (relative to the bracket scale).
pub const CLOSURE_TOL: f64 = 1e-10;
/// Relative spectral gate for non-degeneracy of the Killing form.
pub const DEGENERACY_GATE: f64 = 1e-8;

/// Which family an algebra was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyTag {
    /// sl(n, R)
    Sl(usize),
    /// so(n, 1)
    So(usize),
    Custom,
}

/// JSON-facing family selector, e.g. `{"family": "sl", "n": 3}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FamilySpec {
    Sl { n: usize },
    So { n: usize },
    Custom { basis: Vec<Vec<Vec<f64>>> },
}

impl FamilySpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("line {} column {}: {}", e.line(), e.column(), e)))
    }
}

/// An element of a specific algebra, stored as coordinates in its basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    algebra: u64,
    pub coords: DVector<f64>,
}

impl AlgebraElement {
    pub fn algebra_id(&self) -> u64 {
        self.algebra
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            algebra: self.algebra,
            coords: &self.coords * c,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.algebra != other.algebra {
            return Err(Error::MixedAlgebras);
        }
        Ok(Self {
            algebra: self.algebra,
            coords: &self.coords + &other.coords,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }
}

/// A finite-dimensional real Lie algebra realized by q×q matrices.
#[derive(Debug, Clone)]
pub struct MatrixLieAlgebra {
    id: u64,
    family: FamilyTag,
    q: usize,
    basis: Vec<DMatrix<f64>>,
    /// `structure[(i*dim + j)*dim + k]` = c_ij^k with [B_i, B_j] = Σ_k c_ij^k B_k
    structure: Vec<f64>,
    ad: Vec<DMatrix<f64>>,
    killing: DMatrix<f64>,
    /// Least-squares map from vec(M) (column-major, length q²) to basis coordinates.
    coord_map: DMatrix<f64>,
    stacked: DMatrix<f64>,
    jacobi_residual: f64,
    closure_residual: f64,
}

fn unit(q: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(q, q);
    m[(i, j)] = 1.0;
    m
}

fn sl_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut basis = Vec::with_capacity(n * n - 1);
    for i in 0..n - 1 {
        basis.push(unit(n, i, i) - unit(n, i + 1, i + 1));
    }
    for i in 0..n {
        for j in i + 1..n {
            basis.push(unit(n, i, j));
            basis.push(unit(n, j, i));
        }
    }
    basis
}

fn so_n1_basis(n: usize) -> Vec<DMatrix<f64>> {
    let q = n + 1;
    let mut basis = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            basis.push(unit(q, i, j) - unit(q, j, i));
        }
    }
    for i in 0..n {
        basis.push(unit(q, i, n) + unit(q, n, i));
    }
    basis
}

/// Build one of the supported families and populate every cached field.
pub fn build_algebra(spec: &FamilySpec) -> Result<MatrixLieAlgebra> {
    let (family, basis) = match spec {
        FamilySpec::Sl { n } => {
            if *n < 2 || n * n - 1 > MAX_DIM {
                return Err(Error::InvalidFamily(format!("sl(n) needs 2 <= n <= 8, got {n}")));
            }
            (FamilyTag::Sl(*n), sl_basis(*n))
        }
        FamilySpec::So { n } => {
            if *n < 2 || n * (n + 1) / 2 > MAX_DIM {
                return Err(Error::InvalidFamily(format!("so(n,1) needs 2 <= n <= 10, got {n}")));
            }
            (FamilyTag::So(*n), so_n1_basis(*n))
        }
        FamilySpec::Custom { basis } => {
            if basis.is_empty() || basis.len() > MAX_DIM {
                return Err(Error::InvalidFamily("custom basis must hold 1..=64 matrices".into()));
            }
            let q = basis[0].len();
            let mut mats = Vec::with_capacity(basis.len());
            for m in basis {
                if m.len() != q || m.iter().any(|row| row.len() != q) {
                    return Err(Error::InvalidFamily(
                        "custom basis matrices must be square and equal-sized".into(),
                    ));
                }
                mats.push(DMatrix::from_fn(q, q, |i, j| m[i][j]));
            }
            (FamilyTag::Custom, mats)
        }
    };
    MatrixLieAlgebra::from_basis(family, basis)
}

impl MatrixLieAlgebra {
    /// Construct from an explicit matrix basis, checking closure, Jacobi,
    /// non-degeneracy and non-compactness.
    pub fn from_basis(family: FamilyTag, basis: Vec<DMatrix<f64>>) -> Result<Self> {
        let dim = basis.len();
        let q = basis[0].nrows();
        let mut stacked = DMatrix::zeros(q * q, dim);
        for (c, b) in basis.iter().enumerate() {
            for (r, v) in b.iter().enumerate() {
                stacked[(r, c)] = *v;
            }
        }
        let svd = stacked.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smax == 0.0 || smin <= 1e-12 * smax {
            return Err(Error::DependentBasis);
        }
        let coord_map = svd.pseudo_inverse(1e-14 * smax).map_err(|_| Error::DependentBasis)?;

        let mut alg = Self {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            family,
            q,
            basis,
            structure: vec![0.0; dim * dim * dim],
            ad: Vec::new(),
            killing: DMatrix::zeros(dim, dim),
            coord_map,
            stacked,
            jacobi_residual: 0.0,
            closure_residual: 0.0,
        };

        let mut closure = 0.0f64;
        for i in 0..dim {
            for j in 0..dim {
                let comm = &alg.basis[i] * &alg.basis[j] - &alg.basis[j] * &alg.basis[i];
                let (c, res) = alg.coords_of_matrix(&comm);
                let scale = alg.basis[i].norm() * alg.basis[j].norm();
                closure = closure.max(res / scale.max(f64::MIN_POSITIVE));
                for k in 0..dim {
                    alg.structure[(i * dim + j) * dim + k] = c[k];
                }
            }
        }
        alg.closure_residual = closure;
        if closure > CLOSURE_TOL {
            return Err(Error::NotClosed { residual: closure });
        }

        alg.ad = (0..dim)
            .map(|i| DMatrix::from_fn(dim, dim, |k, j| alg.structure[(i * dim + j) * dim + k]))
            .collect();
        alg.killing = DMatrix::from_fn(dim, dim, |i, j| (&alg.ad[i] * &alg.ad[j]).trace());
        alg.jacobi_residual = alg.compute_jacobi_residual();

        let sv = alg.killing.clone().svd(false, false).singular_values;
        let (kmin, kmax) = (sv.min(), sv.max());
        let ratio = if kmax > 0.0 { kmin / kmax } else { 0.0 };
        if ratio < DEGENERACY_GATE {
            return Err(Error::Degenerate { ratio });
        }
        let (eigs, _) = sorted_sym_eigen(&alg.killing);
        if eigs[eigs.len() - 1] <= 0.0 {
            return Err(Error::CompactType);
        }
        Ok(alg)
    }

    fn compute_jacobi_residual(&self) -> f64 {
        // ad_[Bi,Bj] = [ad_Bi, ad_Bj] on every basis pair
        let dim = self.dim();
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in i + 1..dim {
                let lhs = &self.ad[i] * &self.ad[j] - &self.ad[j] * &self.ad[i];
                let mut rhs = DMatrix::zeros(dim, dim);
                for k in 0..dim {
                    let c = self.c(i, j, k);
                    if c != 0.0 {
                        rhs += &self.ad[k] * c;
                    }
                }
                worst = worst.max(max_abs(&(lhs - rhs)));
            }
        }
        worst
    }

    pub fn id(&self) -> u64 {
        self.id
    }
    pub fn family(&self) -> FamilyTag {
        self.family
    }
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
    /// Size of the realizing matrices.
    pub fn matrix_size(&self) -> usize {
        self.q
    }
    pub fn basis(&self) -> &[DMatrix<f64>] {
        &self.basis
    }
    pub fn killing_gram(&self) -> &DMatrix<f64> {
        &self.killing
    }
    /// Structure constant c_ij^k.
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        let d = self.dim();
        self.structure[(i * d + j) * d + k]
    }
    pub fn jacobi_residual(&self) -> f64 {
        self.jacobi_residual
    }
    pub fn closure_residual(&self) -> f64 {
        self.closure_residual
    }

    pub fn element(&self, coords: DVector<f64>) -> AlgebraElement {
        assert_eq!(
            coords.len(),
            self.dim(),
            "coordinate length must match algebra dimension"
        );
        AlgebraElement {
            algebra: self.id,
            coords,
        }
    }

    pub fn basis_element(&self, i: usize) -> AlgebraElement {
        let mut c = DVector::zeros(self.dim());
        c[i] = 1.0;
        self.element(c)
    }

    pub fn zero(&self) -> AlgebraElement {
        self.element(DVector::zeros(self.dim()))
    }

    /// Express a q×q matrix in basis coordinates; returns the coordinates and
    /// the Frobenius norm of the re-expression residual.
    pub fn coords_of_matrix(&self, m: &DMatrix<f64>) -> (DVector<f64>, f64) {
        let v = DVector::from_column_slice(m.as_slice());
        let c = &self.coord_map * &v;
        let res = (&self.stacked * &c - v).norm();
        (c, res)
    }

    pub fn matrix_of(&self, coords: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.q, self.q);
        for (i, b) in self.basis.iter().enumerate() {
            if coords[i] != 0.0 {
                m += b * coords[i];
            }
        }
        m
    }

    pub fn element_from_matrix(&self, m: &DMatrix<f64>) -> (AlgebraElement, f64) {
        let (c, r) = self.coords_of_matrix(m);
        (self.element(c), r)
    }

    /// Adjoint matrix of an element given by coordinates.
    pub fn ad_coords(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            if x[i] != 0.0 {
                m += &self.ad[i] * x[i];
            }
        }
        m
    }

    pub fn ad(&self, x: &AlgebraElement) -> Result<DMatrix<f64>> {
        self.check(x)?;
        Ok(self.ad_coords(&x.coords))
    }

    /// Bracket on raw coordinates via the structure constants.
    pub fn bracket_coords(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.ad_coords(x) * y
    }

    fn check(&self, x: &AlgebraElement) -> Result<()> {
        if x.algebra != self.id {
            return Err(Error::MixedAlgebras);
        }
        Ok(())
    }

    /// [X, Y], computed as the matrix commutator and re-expressed in the basis.
    pub fn bracket(&self, x: &AlgebraElement, y: &AlgebraElement) -> Result<AlgebraElement> {
        self.check(x)?;
        self.check(y)?;
        let (mx, my) = (self.matrix_of(&x.coords), self.matrix_of(&y.coords));
        let (c, _) = self.coords_of_matrix(&(&mx * &my - &my * &mx));
        Ok(self.element(c))
    }

    /// B(X, Y) = trace(ad X ∘ ad Y).
    pub fn killing_form(&self, x: &AlgebraElement, y: &AlgebraElement) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.killing_coords(&x.coords, &y.coords))
    }

    pub fn killing_coords(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x.transpose() * &self.killing * y)[(0, 0)]
    }
}
