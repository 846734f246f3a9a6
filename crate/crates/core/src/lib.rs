//! Curvature of matrix-valued weights and the variance and Brascamp–Lieb type
//! inequalities that follow from it.
//!
//! A weight is a smooth map `g: ℝ^n → Sym⁺(d)`. Its curvature operator `Θ`
//! acts on `d × n` matrices; `−Θ ⪰ 0` in the tensor metric `id_n ⊗ g`
//! (N-log-concavity) drives the inequalities checked here.

pub mod curvature;
pub mod error;
pub mod fields;
pub mod inequalities;
pub mod linalg;
pub mod metric;
pub mod quadrature;

pub use curvature::{
    block_split, curvature_matrix, griffiths_min_gap, nakano_verdict, schur_gap, theta_block, BlockSplit,
    CurvatureMatrix, GriffithsOptions, NakanoVerdict,
};
pub use error::{Error, Result};
pub use fields::{builtin_field, JetMode, MatrixField, Monomial, Polynomial, BUILTIN_NAMES};
pub use inequalities::{
    bl_gap, bochner_residual, ipp_residual, marginal_theta_fd, prekopa_check, theta_alpha_decomposed, weighted_laplacian,
    Bound, CheckReport, PrekopaOptions, Status,
};
pub use metric::{
    g_adjoint, g_inner, polar_value, tensor_inner, ColumnBlockMatrix, ExtendedReal, PolarForm, QuadraticFormSpec,
    SpdMatrix,
};
pub use quadrature::{
    dirichlet_energy, integrate_field, variance_functional, weighted_mean, PolyVectorField, QuadratureRule,
    RuleKind, VectorFieldFn,
};
