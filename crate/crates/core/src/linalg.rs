//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{CMatrix, C64};

/// Eigen-decomposition of a Hermitian matrix with eigenvalues in ascending
/// order.
pub fn hermitian_eigh(x: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(hermitian_part(x));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(x.nrows(), x.nrows(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `(X + X^H) / 2`.
pub fn hermitian_part(x: &CMatrix) -> CMatrix {
    (x + x.adjoint()).scale(0.5)
}

/// Applies `f` to the eigenvalues of a Hermitian matrix.
pub fn hermitian_map(x: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (values, vectors) = hermitian_eigh(x);
    let mut scaled = vectors.clone();
    for (c, &v) in values.iter().enumerate() {
        let s = f(v);
        scaled.column_mut(c).scale_mut(s);
    }
    hermitian_part(&(scaled * vectors.adjoint()))
}

/// Singular value decomposition `(U, sigma, V^H)` with singular values in
/// descending order, thin form.
pub fn svd_sorted(x: &CMatrix) -> (CMatrix, Vec<f64>, CMatrix) {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^H");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = CMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let vt_sorted = CMatrix::from_fn(order.len(), vt.ncols(), |r, c| vt[(order[r], c)]);
    (u_sorted, sigma, vt_sorted)
}

/// Real embedding `[[Re X, -Im X], [Im X, Re X]]`.
pub fn real_embedding(x: &CMatrix) -> DMatrix<f64> {
    let (r, c) = x.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let v = x[(i, j)];
            out[(i, j)] = v.re;
            out[(i + r, j + c)] = v.re;
            out[(i, j + c)] = -v.im;
            out[(i + r, j)] = v.im;
        }
    }
    out
}

/// Inverse of [`real_embedding`], averaging the redundant copies.
pub fn from_real_embedding(e: &DMatrix<f64>) -> CMatrix {
    let n = e.nrows() / 2;
    let m = e.ncols() / 2;
    CMatrix::from_fn(n, m, |i, j| {
        C64::new(
            0.5 * (e[(i, j)] + e[(i + n, j + m)]),
            0.5 * (e[(i + n, j)] - e[(i, j + m)]),
        )
    })
}

pub fn trace_re(x: &CMatrix) -> f64 {
    x.diagonal().iter().map(|c| c.re).sum()
}

/// Hermitian positive definite solve `A X = B` with a Cholesky factor.
pub fn hpd_solve(a: &CMatrix, b: &CMatrix) -> Option<CMatrix> {
    a.clone().cholesky().map(|ch| ch.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_sim::random_complex_matrix;
    use crate::CVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eigh_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_complex_matrix(4, 4, &mut rng);
        let h = hermitian_part(&g);
        let (vals, vecs) = hermitian_eigh(&h);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = CMatrix::from_diagonal(&CVector::from_iterator(4, vals.iter().map(|&v| C64::new(v, 0.0))));
        assert!((&vecs * d * vecs.adjoint() - h).norm() < 1e-12);
    }

    #[test]
    fn svd_is_sorted_and_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_complex_matrix(3, 5, &mut rng);
        let (u, s, vt) = svd_sorted(&g);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let d = CMatrix::from_diagonal(&CVector::from_iterator(3, s.iter().map(|&v| C64::new(v, 0.0))));
        assert!((u * d * vt - g).norm() < 1e-12);
    }

    #[test]
    fn embedding_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_complex_matrix(3, 2, &mut rng);
        assert!((from_real_embedding(&real_embedding(&g)) - &g).norm() < 1e-15);
    }
}
