//! Small dense helpers shared by the modules: symmetric eigen-solves,
//! metric-weighted pencils and deterministic pairwise reductions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Largest absolute entry, 0 for an empty matrix.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Frobenius norm of the antisymmetric part.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    ((m - m.transpose()) * 0.5).norm()
}

/// Eigen-decomposition with eigenvalues sorted ascending and eigenvectors permuted to match.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `M^{-1/2}` for a symmetric positive definite `M`.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sorted_eigen(m);
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] / values[j].sqrt()
    });
    &scaled * vectors.transpose()
}

/// Generalized eigenpairs of the pencil `(form, metric)`, ascending.
///
/// Solved on `M^{-1/2} form M^{-1/2}`; the returned vectors are metric-orthonormal.
pub fn generalized_eigen(form: &DMatrix<f64>, metric: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let w = inv_sqrt_spd(metric);
    let reduced = &w * form * &w;
    let (values, vectors) = sorted_eigen(&reduced);
    (values, w * vectors)
}

/// Block-diagonal `id_n ⊗ g`.
pub fn block_diag(g: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let d = g.nrows();
    let mut out = DMatrix::zeros(d * n, d * n);
    for k in 0..n {
        out.view_mut((k * d, k * d), (d, d)).copy_from(g);
    }
    out
}

/// Pairwise reduction with a fixed tree shape, independent of evaluation order.
pub fn pairwise_sum<T, F>(items: &[T], zero: &T, add: &F) -> T
where
    T: Clone,
    F: Fn(&T, &T) -> T,
{
    match items.len() {
        0 => zero.clone(),
        1 => items[0].clone(),
        len => {
            let (lo, hi) = items.split_at(len / 2);
            add(&pairwise_sum(lo, zero, add), &pairwise_sum(hi, zero, add))
        }
    }
}

pub fn pairwise_sum_f64(items: &[f64]) -> f64 {
    pairwise_sum(items, &0.0, &|a: &f64, b: &f64| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn generalized_eigen_vectors_are_metric_orthonormal() {
        let form = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let metric = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let (vals, vecs) = generalized_eigen(&form, &metric);
        let gram = vecs.transpose() * &metric * &vecs;
        assert_relative_eq!(gram, DMatrix::identity(2, 2), epsilon = 1e-12);
        for i in 0..2 {
            let lhs = &form * vecs.column(i);
            let rhs = &metric * vecs.column(i) * vals[i];
            assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
        }
        assert!(vals[0] <= vals[1]);
    }

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(pairwise_sum_f64(&xs), 55.0);
        assert_eq!(pairwise_sum_f64(&[]), 0.0);
    }
}
