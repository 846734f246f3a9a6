//! The curvature operator `Θ^g` at a point and the tests built on it.
//!
//! `Θ^g` acts on `d × n` matrices `U = [u_1, …, u_n]` by
//! `(ΘU)_k = Σ_j θ_{j,k} u_j` with `θ_{j,k} = ∂_k(g⁻¹ ∂_j g)`. Its metric-weighted
//! realization `Θ̃` is the `dn × dn` symmetric matrix with
//! `ūᵀ Θ̃ ū = ⟨ΘU, U⟩_{id_n⊗g}` for the flattening `ū` of `U` (column `j` at
//! offsets `j·d ..`). Row block `k`, column block `j` of `Θ̃` holds
//! `g θ_{j,k} = ∂²_{kj} g − (∂_k g) g⁻¹ (∂_j g)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr_normal::sample_unit_sphere;

use crate::error::{input, Error, Result};
use crate::fields::{Jet2, MatrixField};
use crate::linalg;
use crate::metric::{ColumnBlockMatrix, ExtendedReal, PolarForm, QuadraticFormSpec, SpdMatrix};

/// Nonpositivity threshold on the largest generalized eigenvalue.
pub const DEFAULT_TOL_PSD: f64 = 1e-9;
/// Relative pre-symmetrization asymmetry above which assembly is rejected.
pub const MAX_ASYMMETRY: f64 = 1e-6;

/// `g θ_{j,k} = ∂²_{kj} g − (∂_k g) g⁻¹ (∂_j g)`.
fn weighted_theta(jet: &Jet2, j: usize, k: usize) -> DMatrix<f64> {
    jet.d2(k, j) - jet.d1(k) * jet.value().solve(jet.d1(j))
}

/// `θ_{j,k} = g⁻¹[∂²_{kj} g − (∂_k g) g⁻¹ (∂_j g)]`, zero-based indices.
pub fn theta_block(jet: &Jet2, j: usize, k: usize) -> Result<DMatrix<f64>> {
    if j >= jet.n() || k >= jet.n() {
        return input(format!("block ({j},{k}) out of range for n = {}", jet.n()));
    }
    Ok(jet.value().solve(&weighted_theta(jet, j, k)))
}

/// `Θ̃^g(x)` together with the metric `id_n ⊗ g(x)`.
#[derive(Clone, Debug)]
pub struct CurvatureMatrix {
    n: usize,
    d: usize,
    g: SpdMatrix,
    theta_tilde: DMatrix<f64>,
    metric: SpdMatrix,
    asymmetry: f64,
}

impl CurvatureMatrix {
    /// Assembles from a jet; `Θ̃` is averaged with its transpose and the
    /// removed antisymmetric part is kept as [`CurvatureMatrix::asymmetry`].
    pub fn from_jet(jet: &Jet2) -> Result<Self> {
        let (n, d) = (jet.n(), jet.d());
        let mut raw = DMatrix::zeros(n * d, n * d);
        for j in 0..n {
            for k in 0..n {
                raw.view_mut((k * d, j * d), (d, d)).copy_from(&weighted_theta(jet, j, k));
            }
        }
        let asymmetry = linalg::asymmetry(&raw);
        let limit = MAX_ASYMMETRY * raw.norm();
        if asymmetry > limit {
            return Err(Error::Symmetry { asymmetry, limit });
        }
        let metric = SpdMatrix::new(linalg::block_diag(jet.value().matrix(), n))?;
        Ok(CurvatureMatrix {
            n,
            d,
            g: jet.value().clone(),
            theta_tilde: linalg::symmetrize(&raw),
            metric,
            asymmetry,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn g(&self) -> &SpdMatrix {
        &self.g
    }

    pub fn theta_tilde(&self) -> &DMatrix<f64> {
        &self.theta_tilde
    }

    /// `id_n ⊗ g`.
    pub fn metric(&self) -> &SpdMatrix {
        &self.metric
    }

    /// Frobenius norm of the antisymmetric part removed on assembly.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }

    /// `θ_{j,k}` recovered from the symmetrized `Θ̃`.
    pub fn theta(&self, j: usize, k: usize) -> DMatrix<f64> {
        let d = self.d;
        self.g.solve(&self.theta_tilde.view((k * d, j * d), (d, d)).into_owned())
    }

    /// `⟨ΘU, U⟩_{id_n⊗g}`.
    pub fn quadratic_form(&self, u: &ColumnBlockMatrix) -> Result<f64> {
        if u.d() != self.d || u.n() != self.n {
            return input(format!("block is {}x{}, curvature acts on {}x{}", u.d(), u.n(), self.d, self.n));
        }
        let v = u.flatten();
        Ok(v.dot(&(&self.theta_tilde * &v)))
    }

    /// Spectrum of the pencil `(Θ̃, id_n⊗g)`, i.e. of `Θ` as a metric-symmetric operator, ascending.
    pub fn generalized_spectrum(&self) -> Vec<f64> {
        linalg::generalized_eigen(&self.theta_tilde, self.metric.matrix()).0.iter().copied().collect()
    }

    /// Plain eigenvalues of `Θ̃`, ascending.
    pub fn standard_spectrum(&self) -> Vec<f64> {
        linalg::sorted_eigenvalues(&self.theta_tilde)
    }

    /// `−Θ` as a quadratic form for polar evaluation.
    pub fn negative_form(&self) -> Result<QuadraticFormSpec> {
        QuadraticFormSpec::new(self.metric.clone(), -&self.theta_tilde)
    }
}

pub fn curvature_matrix(field: &MatrixField, x: &[f64]) -> Result<CurvatureMatrix> {
    CurvatureMatrix::from_jet(&field.evaluate_jet(x)?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NakanoVerdict {
    /// Largest generalized eigenvalue of `(Θ̃, id_n⊗g)`.
    pub lambda_max: f64,
    /// Largest plain eigenvalue of `Θ̃`; same sign as `lambda_max`.
    pub lambda_max_standard: f64,
    pub is_nlogconcave: bool,
}

pub fn nakano_verdict(cm: &CurvatureMatrix) -> NakanoVerdict {
    nakano_verdict_with_tol(cm, DEFAULT_TOL_PSD)
}

pub fn nakano_verdict_with_tol(cm: &CurvatureMatrix, tol_psd: f64) -> NakanoVerdict {
    let lambda_max = *cm.generalized_spectrum().last().expect("nonempty spectrum");
    let lambda_max_standard = *cm.standard_spectrum().last().expect("nonempty spectrum");
    NakanoVerdict { lambda_max, lambda_max_standard, is_nlogconcave: lambda_max <= tol_psd }
}

#[derive(Clone, Copy, Debug)]
pub struct GriffithsOptions {
    pub n_starts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GriffithsOptions {
    fn default() -> Self {
        GriffithsOptions { n_starts: 32, max_iter: 200, tol: 1e-10, seed: 0 }
    }
}

/// Best value found of `⟨Θ(y⊗u), y⊗u⟩_{id_n⊗g}` over `|y| = 1`, `‖u‖_g = 1`.
///
/// Alternating maximization from random starts; the result is a lower bound
/// on the true maximum over rank-one directions.
pub fn griffiths_min_gap(cm: &CurvatureMatrix, opts: &GriffithsOptions) -> Result<f64> {
    if opts.n_starts < 8 {
        return input(format!("griffiths search needs at least 8 starts, got {}", opts.n_starts));
    }
    let (n, d) = (cm.n, cm.d);
    let block = |a: usize, b: usize| cm.theta_tilde.view((a * d, b * d), (d, d));
    let g = cm.g.matrix();

    let best_u = |y: &DVector<f64>| {
        let mut a = DMatrix::zeros(d, d);
        for i in 0..n {
            for j in 0..n {
                a += block(i, j) * (y[i] * y[j]);
            }
        }
        let (vals, vecs) = linalg::generalized_eigen(&linalg::symmetrize(&a), g);
        (vals[d - 1], vecs.column(d - 1).into_owned())
    };
    let best_y = |u: &DVector<f64>| {
        let b = DMatrix::from_fn(n, n, |i, j| u.dot(&(block(i, j) * u)));
        let (vals, vecs) = linalg::sorted_eigen(&linalg::symmetrize(&b));
        (vals[n - 1], vecs.column(n - 1).into_owned())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..opts.n_starts {
        let mut y = DVector::from_vec(sample_unit_sphere(&mut rng, n));
        let mut value = f64::NEG_INFINITY;
        for _ in 0..opts.max_iter {
            let (_, u) = best_u(&y);
            let (next, y_new) = best_y(&u);
            y = y_new;
            let converged = (next - value).abs() <= opts.tol;
            value = next;
            if converged {
                break;
            }
        }
        value = value.max(best_u(&y).0);
        best = best.max(value);
    }
    Ok(best)
}

/// The blocks of `Θ` for the split `ℝⁿ = ℝ^{n₀} × ℝ^{n₁}`.
#[derive(Clone, Debug)]
pub struct BlockSplit {
    n0: usize,
    n1: usize,
    d: usize,
    theta00: DMatrix<f64>,
    theta11: DMatrix<f64>,
    mixed_tilde: DMatrix<f64>,
    theta01: DMatrix<f64>,
    metric0: SpdMatrix,
    metric1: SpdMatrix,
}

impl BlockSplit {
    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    /// Metric-weighted `Θ̃₀₀` (`d·n₀` square).
    pub fn theta00(&self) -> &DMatrix<f64> {
        &self.theta00
    }

    /// Metric-weighted `Θ̃₁₁` (`d·n₁` square).
    pub fn theta11(&self) -> &DMatrix<f64> {
        &self.theta11
    }

    /// `Θ₀₁` as a `d·n₁ × d·n₀` operator: `V₀ ↦ [Σ_j θ_{j,n₀+k} v_j]_k`.
    pub fn theta01(&self) -> &DMatrix<f64> {
        &self.theta01
    }

    /// Lower-left block of `Θ̃`, equal to `(id_{n₁}⊗g)·Θ₀₁`.
    pub fn mixed_tilde(&self) -> &DMatrix<f64> {
        &self.mixed_tilde
    }

    pub fn metric0(&self) -> &SpdMatrix {
        &self.metric0
    }

    pub fn metric1(&self) -> &SpdMatrix {
        &self.metric1
    }

    /// `[[Θ̃₀₀, Θ̃₁₀ᵀ], [Θ̃₁₀, Θ̃₁₁]]`.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let (a, b) = (self.d * self.n0, self.d * self.n1);
        let mut out = DMatrix::zeros(a + b, a + b);
        out.view_mut((0, 0), (a, a)).copy_from(&self.theta00);
        out.view_mut((a, a), (b, b)).copy_from(&self.theta11);
        out.view_mut((a, 0), (b, a)).copy_from(&self.mixed_tilde);
        out.view_mut((0, a), (a, b)).copy_from(&self.mixed_tilde.transpose());
        out
    }

    /// `Θ₀₁ V₀` as a `d × n₁` block.
    pub fn apply_mixed(&self, v0: &ColumnBlockMatrix) -> Result<ColumnBlockMatrix> {
        self.check_v0(v0)?;
        let w = &self.theta01 * v0.flatten();
        ColumnBlockMatrix::from_flat(self.d, self.n1, w.as_slice())
    }

    fn check_v0(&self, v0: &ColumnBlockMatrix) -> Result<()> {
        if v0.d() != self.d || v0.n() != self.n0 {
            return input(format!("V0 is {}x{}, expected {}x{}", v0.d(), v0.n(), self.d, self.n0));
        }
        Ok(())
    }

    /// `Q₁₁`, the form `W ↦ −⟨Θ₁₁W, W⟩_{id_{n₁}⊗g}`.
    pub fn q11(&self) -> Result<QuadraticFormSpec> {
        QuadraticFormSpec::new(self.metric1.clone(), -&self.theta11)
    }
}

pub fn block_split(cm: &CurvatureMatrix, n0: usize) -> Result<BlockSplit> {
    if n0 == 0 || n0 >= cm.n {
        return input(format!("split index n0 = {n0} must satisfy 1 <= n0 < n = {}", cm.n));
    }
    let d = cm.d;
    let n1 = cm.n - n0;
    let (a, b) = (d * n0, d * n1);
    let t = &cm.theta_tilde;
    let mixed_tilde = t.view((a, 0), (b, a)).into_owned();
    let mut theta01 = DMatrix::zeros(b, a);
    for k in 0..n1 {
        let rows = cm.g.solve(&mixed_tilde.rows(k * d, d).into_owned());
        theta01.rows_mut(k * d, d).copy_from(&rows);
    }
    Ok(BlockSplit {
        n0,
        n1,
        d,
        theta00: t.view((0, 0), (a, a)).into_owned(),
        theta11: t.view((a, a), (b, b)).into_owned(),
        mixed_tilde,
        theta01,
        metric0: SpdMatrix::new(linalg::block_diag(cm.g.matrix(), n0))?,
        metric1: SpdMatrix::new(linalg::block_diag(cm.g.matrix(), n1))?,
    })
}

/// `⟨−Θ₀₀V₀, V₀⟩ − Q°₁₁(Θ₀₁V₀)`; nonnegative wherever `g` is N-log-concave.
///
/// An infinite polar (mixed term outside the range of `−Θ₁₁`) gives `−∞`.
pub fn schur_gap(split: &BlockSplit, v0: &ColumnBlockMatrix, rel_null_tol: f64) -> Result<ExtendedReal> {
    schur_gap_with(split, &PolarForm::new(&split.q11()?, rel_null_tol)?, v0)
}

/// [`schur_gap`] with a precomputed polar of `Q₁₁`.
pub fn schur_gap_with(split: &BlockSplit, q11: &PolarForm, v0: &ColumnBlockMatrix) -> Result<ExtendedReal> {
    split.check_v0(v0)?;
    let v = v0.flatten();
    let lhs = -v.dot(&(&split.theta00 * &v));
    Ok(match q11.value(&(&split.theta01 * &v))? {
        ExtendedReal::Finite(q) => ExtendedReal::Finite(lhs - q),
        _ => ExtendedReal::NegInfinite,
    })
}

/// Uniform `[−1, 1]` entries, the sampling used for random test directions.
pub fn random_block<R: Rng>(rng: &mut R, d: usize, n: usize) -> ColumnBlockMatrix {
    let flat: Vec<f64> = (0..d * n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    ColumnBlockMatrix::from_flat(d, n, &flat).expect("shape matches")
}

/// `count` directions from [`random_block`] with a ChaCha generator seeded by `seed`.
pub fn seeded_blocks(seed: u64, d: usize, n: usize, count: usize) -> Vec<ColumnBlockMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_block(&mut rng, d, n)).collect()
}

mod rand_distr_normal {
    use rand::Rng;

    /// Uniform point on the unit sphere of `ℝⁿ` via normalized Box–Muller normals.
    pub fn sample_unit_sphere<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n)
                .map(|_| {
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}
