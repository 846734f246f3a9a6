//! Inner products and quadratic-form calculus induced by a positive matrix `g`.
//!
//! The polar of a nonnegative form `Q(u) = ⟨Cu, u⟩_M` is
//! `Q°(v) = sup_{Q(u) ≤ 1} ⟨u, v⟩_M²`. It is evaluated spectrally: in a
//! metric-orthonormal eigenbasis of the pencil `(M·C, M)` it is
//! `Σ cᵢ² / λᵢ`, and `+∞` as soon as `v` has a component along the null space.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Serialize, Serializer};

use crate::error::{input, Error, Result};
use crate::linalg;

/// Default relative threshold under which generalized eigenvalues count as null.
pub const DEFAULT_REL_NULL_TOL: f64 = 1e-10;
/// A form is accepted as PSD if `λ_min ≥ −PSD_TOL · max|λ|`.
pub const PSD_TOL: f64 = 1e-9;
/// Relative eigenvalue floor for positive definiteness: `λ_min > SPD_TOL · λ_max`.
pub const SPD_TOL: f64 = 1e-14;
/// Relative asymmetry accepted on symmetric inputs before they are symmetrized.
pub const SYM_TOL: f64 = 1e-10;

/// A real symmetric positive definite matrix, stored exactly symmetric.
#[derive(Clone, Debug)]
pub struct SpdMatrix {
    mat: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() || mat.nrows() == 0 {
            return input(format!("SPD matrix must be square and nonempty, got {}x{}", mat.nrows(), mat.ncols()));
        }
        if mat.iter().any(|x| !x.is_finite()) {
            return input("SPD matrix has non-finite entries");
        }
        if linalg::asymmetry(&mat) > SYM_TOL * linalg::max_abs(&mat).max(f64::MIN_POSITIVE) {
            return input("SPD matrix is not symmetric");
        }
        let mat = linalg::symmetrize(&mat);
        let eig = linalg::sorted_eigenvalues(&mat);
        let (lo, hi) = (eig[0], eig[eig.len() - 1]);
        if !(lo > 0.0 && lo > SPD_TOL * hi) {
            return Err(Error::NotPositive(format!("eigenvalues span [{lo:e}, {hi:e}]")));
        }
        let chol = Cholesky::new(mat.clone())
            .ok_or_else(|| Error::NotPositive("Cholesky factorization failed".into()))?;
        Ok(SpdMatrix { mat, chol })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// `g⁻¹ b` by Cholesky solve.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mat == other.mat
    }
}

/// A `d × n` matrix viewed through its columns `[u_1, …, u_n]`, `u_k ∈ ℝ^d`.
///
/// Flattening puts column `k` at offsets `k·d .. (k+1)·d`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnBlockMatrix {
    d: usize,
    columns: Vec<DVector<f64>>,
}

impl ColumnBlockMatrix {
    pub fn new(d: usize, columns: Vec<DVector<f64>>) -> Result<Self> {
        if let Some(bad) = columns.iter().find(|c| c.len() != d) {
            return input(format!("column of length {} in a block with d = {d}", bad.len()));
        }
        Ok(ColumnBlockMatrix { d, columns })
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        ColumnBlockMatrix { d, columns: vec![DVector::zeros(d); n] }
    }

    pub fn from_flat(d: usize, n: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != d * n {
            return input(format!("expected {} entries for a {d}x{n} block, got {}", d * n, flat.len()));
        }
        Ok(ColumnBlockMatrix {
            d,
            columns: flat.chunks(d.max(1)).take(n).map(DVector::from_column_slice).collect(),
        })
    }

    /// Wraps a `d × n` matrix column by column.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        ColumnBlockMatrix {
            d: m.nrows(),
            columns: m.column_iter().map(|c| c.into_owned()).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[DVector<f64>] {
        &self.columns
    }

    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(self.d * self.n(), self.columns.iter().flat_map(|c| c.iter().copied()))
    }
}

/// A real number or `±∞`; infinities come from degenerate polar evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
    NegInfinite,
}

impl ExtendedReal {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(x) => Some(x),
            _ => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtendedReal::Finite(x) => x,
            ExtendedReal::Infinite => f64::INFINITY,
            ExtendedReal::NegInfinite => f64::NEG_INFINITY,
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == f64::INFINITY {
            ExtendedReal::Infinite
        } else if x == f64::NEG_INFINITY {
            ExtendedReal::NegInfinite
        } else {
            ExtendedReal::Finite(x)
        }
    }
}

impl From<f64> for ExtendedReal {
    fn from(x: f64) -> Self {
        ExtendedReal::from_f64(x)
    }
}

impl fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedReal::Finite(x) => write!(f, "{x}"),
            ExtendedReal::Infinite => f.write_str("inf"),
            ExtendedReal::NegInfinite => f.write_str("-inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(x) => s.serialize_f64(*x),
            ExtendedReal::Infinite => s.serialize_str("inf"),
            ExtendedReal::NegInfinite => s.serialize_str("-inf"),
        }
    }
}

/// A nonnegative quadratic form `u ↦ uᵀ·form·u` on a space with inner product `metric`.
///
/// `form` is `metric·C` for a metric-symmetric operator `C`.
#[derive(Clone, Debug)]
pub struct QuadraticFormSpec {
    metric: SpdMatrix,
    form: DMatrix<f64>,
}

impl QuadraticFormSpec {
    pub fn new(metric: SpdMatrix, form: DMatrix<f64>) -> Result<Self> {
        if form.nrows() != metric.dim() || form.ncols() != metric.dim() {
            return input(format!(
                "form is {}x{} but metric has dimension {}",
                form.nrows(),
                form.ncols(),
                metric.dim()
            ));
        }
        if form.iter().any(|x| !x.is_finite()) {
            return input("form has non-finite entries");
        }
        if linalg::asymmetry(&form) > SYM_TOL * linalg::max_abs(&form) {
            return input("form is not symmetric");
        }
        let form = linalg::symmetrize(&form);
        Ok(QuadraticFormSpec { metric, form })
    }

    pub fn metric(&self) -> &SpdMatrix {
        &self.metric
    }

    pub fn form(&self) -> &DMatrix<f64> {
        &self.form
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn value(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.form * u))
    }
}

/// Spectral data of a PSD form, reusable across many polar evaluations.
#[derive(Clone, Debug)]
pub struct PolarForm {
    metric: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    // Metric-orthonormal generalized eigenvectors, columns.
    eigenvectors: DMatrix<f64>,
    null_cutoff: f64,
    rel_null_tol: f64,
}

impl PolarForm {
    pub fn new(spec: &QuadraticFormSpec, rel_null_tol: f64) -> Result<Self> {
        if !(rel_null_tol > 0.0 && rel_null_tol <= 1e-3) {
            return input(format!("rel_null_tol must lie in (0, 1e-3], got {rel_null_tol}"));
        }
        let (eigenvalues, eigenvectors) = linalg::generalized_eigen(&spec.form, spec.metric.matrix());
        let lo = eigenvalues[0];
        let hi = eigenvalues[eigenvalues.len() - 1];
        let scale = lo.abs().max(hi.abs());
        if lo < -PSD_TOL * scale {
            return Err(Error::NotPsd { min: lo, max: hi });
        }
        Ok(PolarForm {
            metric: spec.metric.matrix().clone(),
            eigenvalues,
            eigenvectors,
            null_cutoff: rel_null_tol * hi.max(0.0),
            rel_null_tol,
        })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn value(&self, v: &DVector<f64>) -> Result<ExtendedReal> {
        if v.len() != self.metric.nrows() {
            return input(format!("vector of length {} for a form of dimension {}", v.len(), self.metric.nrows()));
        }
        let mv = &self.metric * v;
        let norm = v.dot(&mv).max(0.0).sqrt();
        let coords = self.eigenvectors.transpose() * mv;
        let mut null_sq = 0.0;
        let mut total = 0.0;
        for (c, &lambda) in coords.iter().zip(self.eigenvalues.iter()) {
            if lambda <= self.null_cutoff {
                null_sq += c * c;
            } else {
                total += c * c / lambda;
            }
        }
        if null_sq.sqrt() > self.rel_null_tol * norm {
            return Ok(ExtendedReal::Infinite);
        }
        Ok(ExtendedReal::Finite(total))
    }
}

/// `Q°(v)` for the form described by `spec`.
pub fn polar_value(spec: &QuadraticFormSpec, v: &DVector<f64>, rel_null_tol: f64) -> Result<ExtendedReal> {
    PolarForm::new(spec, rel_null_tol)?.value(v)
}

/// `⟨g u, v⟩`.
pub fn g_inner(g: &SpdMatrix, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    if u.len() != g.dim() || v.len() != g.dim() {
        return input(format!("vectors of length {} and {} for a metric of dimension {}", u.len(), v.len(), g.dim()));
    }
    Ok((g.matrix() * u).dot(v))
}

/// `⟨U, V⟩_{id_n⊗g} = Σ_k ⟨g u_k, v_k⟩ = tr((gU)ᵀ V)`.
pub fn tensor_inner(g: &SpdMatrix, u: &ColumnBlockMatrix, v: &ColumnBlockMatrix) -> Result<f64> {
    if u.d() != v.d() || u.n() != v.n() {
        return input(format!("shapes {}x{} and {}x{} differ", u.d(), u.n(), v.d(), v.n()));
    }
    if u.d() != g.dim() {
        return input(format!("blocks have d = {} but metric has dimension {}", u.d(), g.dim()));
    }
    Ok(u.columns()
        .iter()
        .zip(v.columns())
        .map(|(a, b)| (g.matrix() * a).dot(b))
        .sum())
}

/// The `g`-adjoint `g⁻¹ Aᵀ g`.
pub fn g_adjoint(g: &SpdMatrix, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != g.dim() || a.ncols() != g.dim() {
        return input(format!("operator is {}x{} but metric has dimension {}", a.nrows(), a.ncols(), g.dim()));
    }
    Ok(g.solve(&(a.transpose() * g.matrix())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    fn mat(rows: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, data.len() / rows, data)
    }

    #[test]
    fn g_inner_examples() {
        let i2 = SpdMatrix::identity(2);
        assert_eq!(g_inner(&i2, &dvector![1.0, 1.0], &dvector![1.0, 1.0]).unwrap(), 2.0);
        let g = SpdMatrix::from_diagonal(&[2.0, 3.0]).unwrap();
        assert_eq!(g_inner(&g, &dvector![1.0, 0.0], &dvector![0.0, 1.0]).unwrap(), 0.0);
        let g = SpdMatrix::new(mat(2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert_eq!(g_inner(&g, &dvector![1.0, 0.0], &dvector![1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(g_inner(&g, &dvector![1.0], &dvector![1.0, 0.0]), Err(Error::Input(_))));
    }

    #[test]
    fn tensor_inner_examples() {
        let e = ColumnBlockMatrix::from_matrix(&DMatrix::identity(2, 2));
        assert_eq!(tensor_inner(&SpdMatrix::identity(2), &e, &e).unwrap(), 2.0);
        let g2 = SpdMatrix::from_diagonal(&[2.0, 2.0]).unwrap();
        assert_eq!(tensor_inner(&g2, &e, &e).unwrap(), 4.0);
        let g = SpdMatrix::from_diagonal(&[3.0]).unwrap();
        let u = ColumnBlockMatrix::from_flat(1, 2, &[1.0, 2.0]).unwrap();
        let v = ColumnBlockMatrix::from_flat(1, 2, &[1.0, 1.0]).unwrap();
        assert_eq!(tensor_inner(&g, &u, &v).unwrap(), 9.0);
        let bad = ColumnBlockMatrix::zeros(1, 3);
        assert!(tensor_inner(&g, &u, &bad).is_err());
    }

    #[test]
    fn g_adjoint_examples() {
        let a = mat(2, &[1.0, 2.0, 3.0, 4.0]);
        assert_relative_eq!(g_adjoint(&SpdMatrix::identity(2), &a).unwrap(), a.transpose());

        let g = SpdMatrix::from_diagonal(&[1.0, 4.0]).unwrap();
        let commuting = mat(2, &[5.0, 0.0, 0.0, 7.0]);
        assert_relative_eq!(g_adjoint(&g, &commuting).unwrap(), commuting);

        let nil = mat(2, &[0.0, 1.0, 0.0, 0.0]);
        let adj = g_adjoint(&g, &nil).unwrap();
        assert_relative_eq!(adj, mat(2, &[0.0, 0.0, 0.25, 0.0]));
        let (u, v) = (DVector::from_vec(vec![0.3, -1.2]), DVector::from_vec(vec![2.0, 0.7]));
        assert_relative_eq!(g_inner(&g, &(&nil * &u), &v).unwrap(), g_inner(&g, &u, &(&adj * &v)).unwrap());
        assert_relative_eq!(g_adjoint(&g, &adj).unwrap(), nil);
    }

    #[test]
    fn polar_examples() {
        let spec = QuadraticFormSpec::new(SpdMatrix::identity(2), DMatrix::identity(2, 2)).unwrap();
        let v = dvector![0.3, -1.2];
        assert_relative_eq!(polar_value(&spec, &v, 1e-10).unwrap().to_f64(), v.norm_squared(), epsilon = 1e-14);

        let spec = QuadraticFormSpec::new(SpdMatrix::identity(2), mat(2, &[2.0, 0.0, 0.0, 0.5])).unwrap();
        assert_relative_eq!(polar_value(&spec, &dvector![1.0, 1.0], 1e-10).unwrap().to_f64(), 2.5, epsilon = 1e-14);

        let spec = QuadraticFormSpec::new(SpdMatrix::identity(2), mat(2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(polar_value(&spec, &dvector![0.0, 1.0], 1e-10).unwrap(), ExtendedReal::Infinite);
        assert_eq!(polar_value(&spec, &dvector![2.0, 0.0], 1e-10).unwrap(), ExtendedReal::Finite(4.0));
    }

    #[test]
    fn polar_rejects_indefinite_and_bad_tolerance() {
        let spec = QuadraticFormSpec::new(SpdMatrix::identity(2), mat(2, &[1.0, 0.0, 0.0, -0.5])).unwrap();
        assert!(matches!(polar_value(&spec, &dvector![1.0, 0.0], 1e-10), Err(Error::NotPsd { .. })));
        let spec = QuadraticFormSpec::new(SpdMatrix::identity(1), DMatrix::identity(1, 1)).unwrap();
        assert!(polar_value(&spec, &dvector![1.0], 0.0).is_err());
        assert!(polar_value(&spec, &dvector![1.0], 1e-2).is_err());
    }

    #[test]
    fn zero_form_is_infinite_off_zero() {
        let spec = QuadraticFormSpec::new(SpdMatrix::identity(2), DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(polar_value(&spec, &dvector![0.0, 0.0], 1e-10).unwrap(), ExtendedReal::Finite(0.0));
        assert_eq!(polar_value(&spec, &dvector![1e-3, 0.0], 1e-10).unwrap(), ExtendedReal::Infinite);
    }

    #[test]
    fn spd_construction_checks() {
        assert!(matches!(SpdMatrix::new(mat(2, &[1.0, 0.0, 0.0, -1.0])), Err(Error::NotPositive(_))));
        assert!(matches!(SpdMatrix::new(mat(2, &[1.0, 0.5, 0.0, 1.0])), Err(Error::Input(_))));
        assert!(matches!(SpdMatrix::new(mat(1, &[f64::NAN])), Err(Error::Input(_))));
        let g = SpdMatrix::new(mat(2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        assert_eq!(g.matrix()[(0, 1)], g.matrix()[(1, 0)]);
    }
}
