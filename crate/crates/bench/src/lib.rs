//! Fixtures shared by the `kernels` benchmarks.

use mlcc_core::{ColumnBlockMatrix, MatrixField, PolarForm, PolyVectorField, QuadraticFormSpec, SpdMatrix};
use nalgebra::{DMatrix, DVector};

pub fn curvature_fields() -> Vec<(&'static str, MatrixField, Vec<f64>)> {
    vec![
        ("raufi_corrected", MatrixField::raufi_corrected(0.75).expect("field"), vec![0.01, -0.02]),
        ("gaussian_outer_d3", MatrixField::gaussian_outer(3, 0.2, 1.0).expect("field"), vec![0.3, -0.1, 0.2]),
        (
            "gaussian_outer_d3_fd",
            MatrixField::gaussian_outer(3, 0.2, 1.0).expect("field").with_jet_mode(mlcc_core::JetMode::finite_difference()),
            vec![0.3, -0.1, 0.2],
        ),
    ]
}

/// Rank-deficient PSD form of size `dim` under a non-trivial metric, and a vector in its range.
pub fn polar_case(dim: usize) -> (PolarForm, DVector<f64>) {
    let b = DMatrix::from_fn(dim, dim.div_ceil(2), |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * i as f64);
    let form = &b * b.transpose();
    let metric = SpdMatrix::new(DMatrix::from_fn(dim, dim, |i, j| if i == j { 2.0 } else { 0.3 / (1.0 + i.abs_diff(j) as f64) }))
        .expect("metric");
    let v = metric.solve_vec(&(&form * DVector::from_fn(dim, |i, _| 1.0 - 0.2 * i as f64)));
    let spec = QuadraticFormSpec::new(metric, form).expect("form");
    (PolarForm::new(&spec, mlcc_core::metric::DEFAULT_REL_NULL_TOL).expect("polar"), v)
}

pub fn block_direction(d: usize, n: usize) -> ColumnBlockMatrix {
    ColumnBlockMatrix::from_matrix(&DMatrix::from_fn(d, n, |i, j| 1.0 / (1.0 + i as f64 + 2.0 * j as f64)))
}

pub fn cubic_test_fn(m: usize) -> PolyVectorField {
    let expr = if m == 1 { "y^3 - y; y^2".to_string() } else { "y1^3 - y2; y1*y2 + y2^2".to_string() };
    PolyVectorField::parse(m, &expr).expect("test function")
}
