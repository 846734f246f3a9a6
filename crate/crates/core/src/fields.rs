//! Smooth maps `g: ℝⁿ → SPD(d)` with exact or finite-difference 2-jets.
//!
//! Exact jets come from coefficient calculus on polynomial entries and the
//! product rule against Gaussian envelopes. Finite-difference jets only use
//! point values and are the independent route for checking them.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{input, Error, Result};
use crate::linalg;
use crate::metric::SpdMatrix;

/// Default central-difference step for field jets.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// `c · Π x_i^{p_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    fn eval(&self, x: &[f64]) -> f64 {
        self.powers
            .iter()
            .zip(x)
            .fold(self.coeff, |acc, (&p, &xi)| if p == 0 { acc } else { acc * xi.powi(p as i32) })
    }
}

/// A real polynomial in `n` variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    n: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(n: usize, terms: Vec<Monomial>) -> Result<Self> {
        for t in &terms {
            if t.powers.len() != n {
                return input(format!("monomial has {} exponents, expected {n}", t.powers.len()));
            }
            if !t.coeff.is_finite() {
                return input("monomial coefficient is not finite");
            }
        }
        Ok(Polynomial { n, terms: terms.into_iter().filter(|t| t.coeff != 0.0).collect() })
    }

    pub fn zero(n: usize) -> Self {
        Polynomial { n, terms: Vec::new() }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Polynomial::new(n, vec![Monomial { coeff: c, powers: vec![0; n] }]).expect("constant polynomial")
    }

    /// The coordinate `x_j`.
    pub fn var(n: usize, j: usize) -> Self {
        let mut powers = vec![0; n];
        powers[j] = 1;
        Polynomial { n, terms: vec![Monomial { coeff: 1.0, powers }] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|t| t.powers.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn partial(&self, j: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.powers[j] > 0)
            .map(|t| {
                let mut powers = t.powers.clone();
                powers[j] -= 1;
                Monomial { coeff: t.coeff * f64::from(t.powers[j]), powers }
            })
            .collect();
        Polynomial { n: self.n, terms }
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        let terms = self.terms.iter().map(|t| Monomial { coeff: t.coeff * c, powers: t.powers.clone() }).collect();
        Polynomial::new(self.n, terms).expect("scaled polynomial")
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.n, other.n);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Polynomial { n: self.n, terms }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.n, other.n);
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let powers = a.powers.iter().zip(&b.powers).map(|(p, q)| p + q).collect();
                terms.push(Monomial { coeff: a.coeff * b.coeff, powers });
            }
        }
        Polynomial::new(self.n, terms).expect("product polynomial")
    }
}

/// A polynomial with its first and second partials precomputed.
#[derive(Clone, Debug)]
pub(crate) struct PolyJet {
    pub(crate) value: Polynomial,
    d1: Vec<Polynomial>,
    // flat j*n + k
    d2: Vec<Polynomial>,
}

impl PolyJet {
    pub(crate) fn new(value: Polynomial) -> Self {
        let n = value.n();
        let d1: Vec<Polynomial> = (0..n).map(|j| value.partial(j)).collect();
        let d2 = (0..n * n).map(|jk| d1[jk / n].partial(jk % n)).collect();
        PolyJet { value, d1, d2 }
    }

    pub(crate) fn eval_d1(&self, j: usize, x: &[f64]) -> f64 {
        self.d1[j].eval(x)
    }

    pub(crate) fn eval_d2(&self, j: usize, k: usize, x: &[f64]) -> f64 {
        self.d2[j * self.value.n() + k].eval(x)
    }
}

/// Symmetric matrix of polynomials, stored by its upper triangle.
#[derive(Clone, Debug)]
pub struct PolyMatrix {
    n: usize,
    d: usize,
    // (i, j, entry) with i <= j
    entries: Vec<(usize, usize, PolyJet)>,
}

impl PolyMatrix {
    /// `upper` maps `(i, j)` with `i ≤ j` to the entry polynomial; missing entries are zero.
    pub fn new(n: usize, d: usize, upper: BTreeMap<(usize, usize), Polynomial>) -> Result<Self> {
        let mut entries = Vec::with_capacity(upper.len());
        for ((i, j), p) in upper {
            if i > j {
                return input(format!("entry ({i},{j}) is below the diagonal; only i <= j is accepted"));
            }
            if j >= d {
                return input(format!("entry ({i},{j}) is out of range for d = {d}"));
            }
            if p.n() != n {
                return input(format!("entry ({i},{j}) has {} variables, expected {n}", p.n()));
            }
            entries.push((i, j, PolyJet::new(p)));
        }
        Ok(PolyMatrix { n, d, entries })
    }

    fn fill(&self, f: impl Fn(&PolyJet) -> f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.d, self.d);
        for (i, j, p) in &self.entries {
            let v = f(p);
            m[(*i, *j)] = v;
            m[(*j, *i)] = v;
        }
        m
    }

    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        self.fill(|p| p.value.eval(x))
    }

    fn jet(&self, x: &[f64]) -> RawJet {
        let n = self.n;
        RawJet {
            value: self.value(x),
            d1: (0..n).map(|j| self.fill(|p| p.eval_d1(j, x))).collect(),
            d2: (0..n * n).map(|jk| self.fill(|p| p.eval_d2(jk / n, jk % n, x))).collect(),
        }
    }
}

/// Positive scalar envelopes multiplying a matrix field.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarField {
    /// `exp(−rate·|x − center|²)`.
    Gaussian { rate: f64, center: Vec<f64> },
}

impl ScalarField {
    fn jet(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        match self {
            ScalarField::Gaussian { rate, center } => {
                let n = x.len();
                let dx: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let s = (-rate * dx.iter().map(|v| v * v).sum::<f64>()).exp();
                let d1 = dx.iter().map(|v| -2.0 * rate * v * s).collect();
                let d2 = (0..n * n)
                    .map(|jk| {
                        let (j, k) = (jk / n, jk % n);
                        let delta = if j == k { 1.0 } else { 0.0 };
                        (4.0 * rate * rate * dx[j] * dx[k] - 2.0 * rate * delta) * s
                    })
                    .collect();
                (s, d1, d2)
            }
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Gaussian { rate, center } => {
                (-rate * x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()).exp()
            }
        }
    }
}

/// Matrix-valued value with first and second partials, not yet validated.
#[derive(Clone, Debug)]
pub struct RawJet {
    pub value: DMatrix<f64>,
    pub d1: Vec<DMatrix<f64>>,
    /// Flat `j*n + k`.
    pub d2: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub enum FieldKind {
    Constant(DMatrix<f64>),
    Polynomial(PolyMatrix),
    Product { scalar: ScalarField, factor: Box<FieldKind> },
    /// `x ↦ Pᵀ g(x) P`.
    Conjugated { inner: Box<FieldKind>, rotation: DMatrix<f64> },
    /// `y ↦ g(t, y)`; `fixed` holds `t`, the leading coordinates.
    Restricted { inner: Box<FieldKind>, fixed: Vec<f64>, inner_n: usize },
}

impl FieldKind {
    fn value(&self, x: &[f64]) -> DMatrix<f64> {
        match self {
            FieldKind::Constant(a) => a.clone(),
            FieldKind::Polynomial(p) => p.value(x),
            FieldKind::Product { scalar, factor } => factor.value(x) * scalar.value(x),
            FieldKind::Conjugated { inner, rotation } => rotation.transpose() * inner.value(x) * rotation,
            FieldKind::Restricted { inner, fixed, .. } => inner.value(&concat(fixed, x)),
        }
    }

    fn jet(&self, x: &[f64]) -> RawJet {
        let n = x.len();
        match self {
            FieldKind::Constant(a) => RawJet {
                value: a.clone(),
                d1: vec![DMatrix::zeros(a.nrows(), a.ncols()); n],
                d2: vec![DMatrix::zeros(a.nrows(), a.ncols()); n * n],
            },
            FieldKind::Polynomial(p) => p.jet(x),
            FieldKind::Product { scalar, factor } => {
                let (s, s1, s2) = scalar.jet(x);
                let m = factor.jet(x);
                let d1 = (0..n).map(|j| &m.value * s1[j] + &m.d1[j] * s).collect();
                let d2 = (0..n * n)
                    .map(|jk| {
                        let (j, k) = (jk / n, jk % n);
                        &m.value * s2[jk] + &m.d1[k] * s1[j] + &m.d1[j] * s1[k] + &m.d2[jk] * s
                    })
                    .collect();
                RawJet { value: m.value * s, d1, d2 }
            }
            FieldKind::Conjugated { inner, rotation } => {
                let conj = |a: &DMatrix<f64>| rotation.transpose() * a * rotation;
                let j = inner.jet(x);
                RawJet {
                    value: conj(&j.value),
                    d1: j.d1.iter().map(conj).collect(),
                    d2: j.d2.iter().map(conj).collect(),
                }
            }
            FieldKind::Restricted { inner, fixed, inner_n } => {
                let n0 = fixed.len();
                let parent = inner.jet(&concat(fixed, x));
                RawJet {
                    value: parent.value,
                    d1: (0..n).map(|j| parent.d1[n0 + j].clone()).collect(),
                    d2: (0..n * n)
                        .map(|jk| parent.d2[(n0 + jk / n) * inner_n + n0 + jk % n].clone())
                        .collect(),
                }
            }
        }
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum JetMode {
    #[default]
    Exact,
    FiniteDifference { step: f64, richardson: bool },
}

impl JetMode {
    pub fn finite_difference() -> Self {
        JetMode::FiniteDifference { step: DEFAULT_FD_STEP, richardson: true }
    }
}

/// Value, gradient and Hessian of `g` at a point, symmetrized.
#[derive(Clone, Debug)]
pub struct Jet2 {
    n: usize,
    value: SpdMatrix,
    d1: Vec<DMatrix<f64>>,
    d2: Vec<DMatrix<f64>>,
}

impl Jet2 {
    /// Validates positivity of the value and symmetrizes every derivative array,
    /// including `d2[j][k] = d2[k][j]`.
    pub fn new(raw: RawJet) -> Result<Self> {
        let n = raw.d1.len();
        if raw.d2.len() != n * n {
            return input(format!("jet has {} first and {} second derivatives", n, raw.d2.len()));
        }
        let value = SpdMatrix::new(linalg::symmetrize(&raw.value)).map_err(|e| match e {
            Error::Input(m) => Error::NotPositive(m),
            other => other,
        })?;
        let d1 = raw.d1.iter().map(linalg::symmetrize).collect();
        let mut d2: Vec<DMatrix<f64>> = raw.d2.iter().map(linalg::symmetrize).collect();
        for j in 0..n {
            for k in (j + 1)..n {
                let avg = (&d2[j * n + k] + &d2[k * n + j]) * 0.5;
                d2[k * n + j] = avg.clone();
                d2[j * n + k] = avg;
            }
        }
        Ok(Jet2 { n, value, d1, d2 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.value.dim()
    }

    pub fn value(&self) -> &SpdMatrix {
        &self.value
    }

    /// `∂_j g`.
    pub fn d1(&self, j: usize) -> &DMatrix<f64> {
        &self.d1[j]
    }

    /// `∂²_{jk} g`.
    pub fn d2(&self, j: usize, k: usize) -> &DMatrix<f64> {
        &self.d2[j * self.n + k]
    }
}

/// Central-difference 2-jet of a matrix-valued map from point values only,
/// optionally with one Richardson level (`(4·D(h/2) − D(h))/3`).
pub fn finite_difference_jet<F>(f: F, x: &[f64], step: f64, richardson: bool) -> Result<RawJet>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    if !(step > 0.0 && step.is_finite()) {
        return input(format!("finite-difference step must be positive, got {step}"));
    }
    let coarse = central_jet(&f, x, step)?;
    if !richardson {
        return Ok(coarse);
    }
    let fine = central_jet(&f, x, step / 2.0)?;
    let extrapolate = |c: &DMatrix<f64>, f: &DMatrix<f64>| (f * 4.0 - c) / 3.0;
    Ok(RawJet {
        value: fine.value.clone(),
        d1: coarse.d1.iter().zip(&fine.d1).map(|(c, f)| extrapolate(c, f)).collect(),
        d2: coarse.d2.iter().zip(&fine.d2).map(|(c, f)| extrapolate(c, f)).collect(),
    })
}

fn central_jet<F>(f: &F, x: &[f64], h: f64) -> Result<RawJet>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    let n = x.len();
    let shifted = |moves: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(j, s) in moves {
            y[j] += s * h;
        }
        f(&y)
    };
    let center = f(x)?;
    let mut plus = Vec::with_capacity(n);
    let mut minus = Vec::with_capacity(n);
    for j in 0..n {
        plus.push(shifted(&[(j, 1.0)])?);
        minus.push(shifted(&[(j, -1.0)])?);
    }
    let d1 = (0..n).map(|j| (&plus[j] - &minus[j]) / (2.0 * h)).collect();
    let mut d2 = vec![DMatrix::zeros(center.nrows(), center.ncols()); n * n];
    for j in 0..n {
        d2[j * n + j] = (&plus[j] - &center * 2.0 + &minus[j]) / (h * h);
        for k in (j + 1)..n {
            let pp = shifted(&[(j, 1.0), (k, 1.0)])?;
            let pm = shifted(&[(j, 1.0), (k, -1.0)])?;
            let mp = shifted(&[(j, -1.0), (k, 1.0)])?;
            let mm = shifted(&[(j, -1.0), (k, -1.0)])?;
            let mixed = (pp - pm - mp + mm) / (4.0 * h * h);
            d2[k * n + j] = mixed.clone();
            d2[j * n + k] = mixed;
        }
    }
    Ok(RawJet { value: center, d1, d2 })
}

/// A smooth map `ℝⁿ → SPD(d)`.
#[derive(Clone, Debug)]
pub struct MatrixField {
    n: usize,
    d: usize,
    label: String,
    kind: FieldKind,
    jet_mode: JetMode,
}

impl MatrixField {
    pub fn new(n: usize, d: usize, label: impl Into<String>, kind: FieldKind) -> Result<Self> {
        if n == 0 || d == 0 {
            return input("field dimensions must be positive");
        }
        Ok(MatrixField { n, d, label: label.into(), kind, jet_mode: JetMode::Exact })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn jet_mode(&self) -> JetMode {
        self.jet_mode
    }

    pub fn with_jet_mode(mut self, mode: JetMode) -> Self {
        self.jet_mode = mode;
        self
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return input(format!("point has {} coordinates, field '{}' has n = {}", x.len(), self.label, self.n));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return input("point has non-finite coordinates");
        }
        Ok(())
    }

    /// Unvalidated `g(x)`.
    pub fn raw_value(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        Ok(self.kind.value(x))
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<SpdMatrix> {
        let v = self.raw_value(x)?;
        SpdMatrix::new(v).map_err(|e| match e {
            Error::NotPositive(m) => Error::NotPositive(format!("field '{}' at {:?}: {m}", self.label, x)),
            other => other,
        })
    }

    pub fn evaluate_jet(&self, x: &[f64]) -> Result<Jet2> {
        self.check_point(x)?;
        let raw = match self.jet_mode {
            JetMode::Exact => self.kind.jet(x),
            JetMode::FiniteDifference { step, richardson } => {
                let mut raw = finite_difference_jet(|y| Ok(self.kind.value(y)), x, step, richardson)?;
                raw.value = self.kind.value(x);
                raw
            }
        };
        Jet2::new(raw).map_err(|e| match e {
            Error::NotPositive(m) => Error::NotPositive(format!("field '{}' at {:?}: {m}", self.label, x)),
            other => other,
        })
    }

    /// `x ↦ Pᵀ g(x) P` for orthogonal `P`.
    pub fn conjugate(&self, p: &DMatrix<f64>) -> Result<MatrixField> {
        if p.nrows() != self.d || p.ncols() != self.d {
            return input(format!("rotation is {}x{}, field has d = {}", p.nrows(), p.ncols(), self.d));
        }
        let defect = linalg::max_abs(&(p.transpose() * p - DMatrix::identity(self.d, self.d)));
        if defect > 1e-12 {
            return input(format!("matrix is not orthogonal (|PᵀP − I| = {defect:e})"));
        }
        Ok(MatrixField {
            n: self.n,
            d: self.d,
            label: format!("{}^P", self.label),
            kind: FieldKind::Conjugated { inner: Box::new(self.kind.clone()), rotation: p.clone() },
            jet_mode: self.jet_mode,
        })
    }

    /// `y ↦ g(t, y)` on `ℝ^{n − n₀}` with `t ∈ ℝ^{n₀}` the leading coordinates.
    pub fn restrict(&self, t: &[f64]) -> Result<MatrixField> {
        if t.len() >= self.n {
            return input(format!("cannot freeze {} of {} coordinates", t.len(), self.n));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return input("frozen coordinates are not finite");
        }
        Ok(MatrixField {
            n: self.n - t.len(),
            d: self.d,
            label: format!("{}|t={:?}", self.label, t),
            kind: FieldKind::Restricted { inner: Box::new(self.kind.clone()), fixed: t.to_vec(), inner_n: self.n },
            jet_mode: self.jet_mode,
        })
    }

    /// `e^{−|x|²/2}` as a 1×1 field on `ℝⁿ`.
    pub fn gaussian_scalar(n: usize) -> Result<Self> {
        MatrixField::new(
            n,
            1,
            "gaussian_scalar",
            FieldKind::Product {
                scalar: ScalarField::Gaussian { rate: 0.5, center: vec![0.0; n] },
                factor: Box::new(FieldKind::Constant(DMatrix::identity(1, 1))),
            },
        )
    }

    /// `e^{−|x|²} A`.
    pub fn gaussian_times_spd(n: usize, a: &SpdMatrix) -> Result<Self> {
        MatrixField::new(
            n,
            a.dim(),
            "gaussian_times_spd",
            FieldKind::Product {
                scalar: ScalarField::Gaussian { rate: 1.0, center: vec![0.0; n] },
                factor: Box::new(FieldKind::Constant(a.matrix().clone())),
            },
        )
    }

    pub fn constant(n: usize, a: &SpdMatrix) -> Result<Self> {
        MatrixField::new(n, a.dim(), "constant", FieldKind::Constant(a.matrix().clone()))
    }

    /// `I₂ − [[s x₁² + x₂², x₁x₂], [x₁x₂, s x₁² + x₂²]]`, positive only near 0.
    pub fn raufi_printed(s: f64) -> Result<Self> {
        raufi(s, false)
    }

    /// As [`MatrixField::raufi_printed`] with the (2,2) entry `1 − x₁² − s x₂²`.
    pub fn raufi_corrected(s: f64) -> Result<Self> {
        raufi(s, true)
    }

    /// `e^{−rate·|x|²} (I + eps·x xᵀ)` on `ℝᵈ → SPD(d)`; the matrix direction varies with `x`.
    pub fn gaussian_outer(d: usize, eps: f64, rate: f64) -> Result<Self> {
        if !(eps >= 0.0 && rate > 0.0) {
            return input("gaussian_outer needs eps >= 0 and rate > 0");
        }
        let mut upper = BTreeMap::new();
        for i in 0..d {
            for j in i..d {
                let mut p = Polynomial::var(d, i).mul(&Polynomial::var(d, j)).scale(eps);
                if i == j {
                    p = p.add(&Polynomial::constant(d, 1.0));
                }
                upper.insert((i, j), p);
            }
        }
        MatrixField::new(
            d,
            d,
            "gaussian_outer",
            FieldKind::Product {
                scalar: ScalarField::Gaussian { rate, center: vec![0.0; d] },
                factor: Box::new(FieldKind::Polynomial(PolyMatrix::new(d, d, upper)?)),
            },
        )
    }

    pub fn polynomial(n: usize, d: usize, upper: BTreeMap<(usize, usize), Polynomial>) -> Result<Self> {
        MatrixField::new(n, d, "polynomial", FieldKind::Polynomial(PolyMatrix::new(n, d, upper)?))
    }

    /// Parses `{"n": int, "d": int, "entries": {"i,j": [[coeff, [deg_1, …, deg_n]], …]}}`
    /// with zero-based `i ≤ j`.
    pub fn from_polynomial_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Spec {
            n: usize,
            d: usize,
            entries: BTreeMap<String, Vec<(f64, Vec<u32>)>>,
        }
        let spec: Spec = serde_json::from_str(text).map_err(|e| Error::Input(format!("polynomial field JSON: {e}")))?;
        let mut upper = BTreeMap::new();
        for (key, monomials) in spec.entries {
            let (i, j) = parse_entry_key(&key)?;
            let terms = monomials.into_iter().map(|(coeff, powers)| Monomial { coeff, powers }).collect();
            upper.insert((i, j), Polynomial::new(spec.n, terms)?);
        }
        MatrixField::polynomial(spec.n, spec.d, upper)
    }

    /// Multiplies by `exp(−rate·|x|²)`.
    pub fn with_gaussian_envelope(self, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return input(format!("envelope rate must be positive, got {rate}"));
        }
        Ok(MatrixField {
            label: format!("{}*gauss({rate})", self.label),
            kind: FieldKind::Product {
                scalar: ScalarField::Gaussian { rate, center: vec![0.0; self.n] },
                factor: Box::new(self.kind),
            },
            ..self
        })
    }
}

fn parse_entry_key(key: &str) -> Result<(usize, usize)> {
    let mut parts = key.split(',').map(|p| p.trim().parse::<usize>());
    match (parts.next(), parts.next(), parts.next()) {
        (Some(Ok(i)), Some(Ok(j)), None) => Ok((i, j)),
        _ => input(format!("entry key '{key}' is not of the form \"i,j\"")),
    }
}

fn raufi(s: f64, corrected: bool) -> Result<MatrixField> {
    if !s.is_finite() {
        return input("parameter s must be finite");
    }
    let m = |coeff: f64, p: [u32; 2]| Monomial { coeff, powers: p.to_vec() };
    let p11 = Polynomial::new(2, vec![m(1.0, [0, 0]), m(-s, [2, 0]), m(-1.0, [0, 2])])?;
    let p12 = Polynomial::new(2, vec![m(-1.0, [1, 1])])?;
    let p22 = if corrected {
        Polynomial::new(2, vec![m(1.0, [0, 0]), m(-1.0, [2, 0]), m(-s, [0, 2])])?
    } else {
        p11.clone()
    };
    let upper = BTreeMap::from([((0, 0), p11), ((0, 1), p12), ((1, 1), p22)]);
    let label = if corrected { "raufi_corrected" } else { "raufi_printed" };
    MatrixField::new(2, 2, label, FieldKind::Polynomial(PolyMatrix::new(2, 2, upper)?))
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: Option<f64>) -> Result<f64> {
    match (params.get(key), default) {
        (Some(v), _) => Ok(*v),
        (None, Some(v)) => Ok(v),
        (None, None) => input(format!("missing parameter '{key}'")),
    }
}

fn dim_param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> Result<usize> {
    let v = param(params, key, Some(default))?;
    if v < 1.0 || v.fract() != 0.0 || v > 64.0 {
        return input(format!("parameter '{key}' must be a positive integer, got {v}"));
    }
    Ok(v as usize)
}

/// Names accepted by [`builtin_field`].
pub const BUILTIN_NAMES: &[&str] =
    &["gaussian_scalar", "gaussian_times_spd", "raufi_printed", "raufi_corrected", "gaussian_outer", "constant"];

/// Builds a named field.
///
/// | name | params |
/// |---|---|
/// | `gaussian_scalar` | `n` (1) |
/// | `gaussian_times_spd` | `n` (1), `d` (2), `a<i><j>` one-based entries of `A` (identity) |
/// | `raufi_printed`, `raufi_corrected` | `s` (required) |
/// | `gaussian_outer` | `d` (2), `eps` (0.25), `rate` (1) |
/// | `constant` | `n` (1), `d` (2), `a<i><j>` |
pub fn builtin_field(name: &str, params: &BTreeMap<String, f64>) -> Result<MatrixField> {
    let allowed: &[&str] = match name {
        "gaussian_scalar" => &["n"],
        "raufi_printed" | "raufi_corrected" => &["s"],
        "gaussian_outer" => &["d", "eps", "rate"],
        "gaussian_times_spd" | "constant" => &["n", "d"],
        _ => return input(format!("unknown field '{name}' (known: {})", BUILTIN_NAMES.join(", "))),
    };
    for key in params.keys() {
        let matrix_key = matches!(name, "gaussian_times_spd" | "constant") && key.starts_with('a');
        if !allowed.contains(&key.as_str()) && !matrix_key {
            return input(format!("unknown parameter '{key}' for field '{name}'"));
        }
    }
    match name {
        "gaussian_scalar" => MatrixField::gaussian_scalar(dim_param(params, "n", 1.0)?),
        "raufi_printed" => MatrixField::raufi_printed(param(params, "s", None)?),
        "raufi_corrected" => MatrixField::raufi_corrected(param(params, "s", None)?),
        "gaussian_outer" => MatrixField::gaussian_outer(
            dim_param(params, "d", 2.0)?,
            param(params, "eps", Some(0.25))?,
            param(params, "rate", Some(1.0))?,
        ),
        _ => {
            let n = dim_param(params, "n", 1.0)?;
            let d = dim_param(params, "d", 2.0)?;
            let mut a = DMatrix::identity(d, d);
            for (key, &v) in params.iter().filter(|(k, _)| k.starts_with('a')) {
                let digits: Vec<usize> = key[1..].chars().filter_map(|c| c.to_digit(10).map(|x| x as usize)).collect();
                match digits.as_slice() {
                    [i, j] if key.len() == 3 && (1..=d).contains(i) && (1..=d).contains(j) => {
                        a[(i - 1, j - 1)] = v;
                        a[(j - 1, i - 1)] = v;
                    }
                    _ => return input(format!("matrix parameter '{key}' must be a<i><j> with 1 <= i,j <= {d}")),
                }
            }
            let a = SpdMatrix::new(a)?;
            if name == "constant" {
                MatrixField::constant(n, &a)
            } else {
                MatrixField::gaussian_times_spd(n, &a)
            }
        }
    }
}
