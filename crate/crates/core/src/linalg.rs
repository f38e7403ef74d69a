//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sorted_sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (col, &i) in idx.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Orthonormal basis of the null space of `a`: right singular vectors whose
/// singular value is at most `rel_tol` times the largest one.
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> Vec<DVector<f64>> {
    let (m, n) = a.shape();
    // pad to at least square so that the SVD returns a full set of right vectors
    let mut padded = DMatrix::zeros(m.max(n), n);
    padded.view_mut((0, 0), (m, n)).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.max();
    (0..n)
        .filter(|&i| svd.singular_values[i] <= rel_tol * smax || smax == 0.0)
        .map(|i| vt.row(i).transpose())
        .collect()
}

/// Modified Gram–Schmidt (two passes) under the inner product `gram`.
/// Vectors whose residual norm falls below `drop_tol` times their original
/// norm, or below `drop_tol` times the largest input norm, are discarded.
pub fn gram_schmidt(vectors: &[DVector<f64>], gram: &DMatrix<f64>, drop_tol: f64) -> Vec<DVector<f64>> {
    let ip = |x: &DVector<f64>, y: &DVector<f64>| (x.transpose() * gram * y)[(0, 0)];
    let mut out: Vec<DVector<f64>> = Vec::new();
    let big = vectors.iter().fold(0.0f64, |m, v| m.max(ip(v, v).abs().sqrt()));
    for v in vectors {
        let n0 = ip(v, v).abs().sqrt();
        if n0 == 0.0 || n0 <= drop_tol * big {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for u in &out {
                let c = ip(u, &w);
                w -= u * c;
            }
        }
        let n = ip(&w, &w);
        if n <= 0.0 || n.sqrt() <= drop_tol * n0 {
            continue;
        }
        out.push(w / n.sqrt());
    }
    out
}

/// Symmetric square root and inverse square root of a positive definite matrix.
pub fn sqrt_and_inv_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (vals, vecs) = sorted_sym_eigen(m);
    let n = vals.len();
    let mut s = DMatrix::zeros(n, n);
    let mut si = DMatrix::zeros(n, n);
    for i in 0..n {
        let l = vals[i].max(0.0).sqrt();
        s[(i, i)] = l;
        si[(i, i)] = if l > 0.0 { 1.0 / l } else { 0.0 };
    }
    (&vecs * s * vecs.transpose(), &vecs * si * vecs.transpose())
}

/// Flip the sign of `v` so that its largest-magnitude entry (first one on ties) is positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() * (1.0 + 1e-9) {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Max-abs entry of a matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |s, v| s.max(v.abs()))
}

/// Exponential of a nilpotent matrix by its terminating power series.
pub fn exp_nilpotent(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=n {
        term = &term * x / k as f64;
        if max_abs(&term) == 0.0 {
            break;
        }
        out += &term;
    }
    out
}

/// Logarithm of a unipotent matrix by its terminating power series.
pub fn log_unipotent(u: &DMatrix<f64>) -> DMatrix<f64> {
    let n = u.nrows();
    let x = u - DMatrix::identity(n, n);
    let mut out = DMatrix::zeros(n, n);
    let mut pow = DMatrix::identity(n, n);
    for k in 1..=n {
        pow = &pow * &x;
        if max_abs(&pow) == 0.0 {
            break;
        }
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        out += &pow * (sign / k as f64);
    }
    out
}
