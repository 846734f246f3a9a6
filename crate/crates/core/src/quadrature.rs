//! Tensor-product quadrature of matrix- and vector-valued integrands against
//! the matrix weight `g`.
//!
//! Gauss–Hermite rules use the probabilists' convention (weight `e^{−ξ²/2}`,
//! order 2 has nodes `±1`) with the weight folded back into the stored
//! weights, so every rule integrates plain `dy`. Node evaluations may run in
//! parallel; reductions use a fixed pairwise tree.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::curvature::CurvatureMatrix;
use crate::error::{input, Error, Result};
use crate::fields::{finite_difference_jet, Jet2, MatrixField, Monomial, PolyJet, Polynomial};
use crate::linalg::{pairwise_sum, pairwise_sum_f64};
use crate::metric::{ExtendedReal, PolarForm, SpdMatrix};

/// Largest tensor-product rule accepted.
pub const NODE_BUDGET: u128 = 10_000_000;
pub const DEFAULT_ORDER: usize = 64;
/// Largest Gauss–Hermite order per axis; beyond it `e^{−z²/2}` at the outer nodes underflows.
pub const MAX_GH_ORDER: usize = 512;
/// Outermost-node contribution (relative) above which a truncation warning is logged.
pub const TAIL_WARN_RATIO: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub enum RuleKind {
    GaussHermite { order: usize, center: f64, scale: f64 },
    /// Trapezoid rule with `resolution` nodes per axis, endpoints included.
    UniformGrid { bounds: Vec<(f64, f64)>, resolution: usize },
}

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    m: usize,
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    kind: RuleKind,
}

/// Physicists' Gauss–Hermite nodes with plain-`dz` weights `w_i e^{z_i²}`.
///
/// Nodes start as eigenvalues of the Jacobi matrix and are polished by Newton steps on
/// the orthonormal Hermite functions `ψ_j(z) = h_j(z) e^{−z²/2}`, which stay bounded, so
/// neither the weights nor the `e^{z²}` factor overflow.
fn hermite_nodes(order: usize) -> (Vec<f64>, Vec<f64>) {
    const PI_M4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let n = order;
    let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64 / 2.0).sqrt() } else { 0.0 });
    let mut roots: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    roots.sort_by(|a, b| b.total_cmp(a));
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = roots[i];
        let mut pp = 0.0;
        for _ in 0..20 {
            let mut p1 = PI_M4 * (-0.5 * z * z).exp();
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z1.abs().max(1.0) {
                break;
            }
        }
        if 2 * i + 1 == n {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

impl QuadratureRule {
    /// Tensor Gauss–Hermite rule on `ℝ^m`, nodes `center + scale·ξ`.
    pub fn gauss_hermite(m: usize, order: usize, center: f64, scale: f64) -> Result<Self> {
        if !(2..=MAX_GH_ORDER).contains(&order) {
            return input(format!("Gauss-Hermite order must be in 2..={MAX_GH_ORDER}, got {order}"));
        }
        if !(scale > 0.0 && scale.is_finite() && center.is_finite()) {
            return input(format!("invalid center/scale ({center}, {scale})"));
        }
        check_budget(order, m)?;
        let (z, wz) = hermite_nodes(order);
        let root2 = std::f64::consts::SQRT_2;
        let axis: Vec<(f64, f64)> = z
            .iter()
            .zip(&wz)
            .rev()
            .map(|(&zi, &wi)| (center + scale * root2 * zi, scale * root2 * wi))
            .collect();
        Ok(Self::tensor(m, &vec![axis; m], RuleKind::GaussHermite { order, center, scale }))
    }

    /// Tensor trapezoid rule on a box.
    pub fn uniform_grid(bounds: Vec<(f64, f64)>, resolution: usize) -> Result<Self> {
        if bounds.is_empty() {
            return input("uniform grid needs at least one axis");
        }
        if resolution < 2 {
            return input(format!("uniform grid resolution must be >= 2, got {resolution}"));
        }
        if bounds.iter().any(|&(lo, hi)| !(lo < hi && lo.is_finite() && hi.is_finite())) {
            return input("uniform grid bounds must satisfy lo < hi");
        }
        check_budget(resolution, bounds.len())?;
        let axes: Vec<Vec<(f64, f64)>> = bounds
            .iter()
            .map(|&(lo, hi)| {
                let h = (hi - lo) / (resolution - 1) as f64;
                (0..resolution)
                    .map(|i| {
                        let w = if i == 0 || i == resolution - 1 { h / 2.0 } else { h };
                        (lo + h * i as f64, w)
                    })
                    .collect()
            })
            .collect();
        Ok(Self::tensor(bounds.len(), &axes, RuleKind::UniformGrid { bounds, resolution }))
    }

    pub fn build(kind: &RuleKind, m: usize) -> Result<Self> {
        match kind {
            RuleKind::GaussHermite { order, center, scale } => Self::gauss_hermite(m, *order, *center, *scale),
            RuleKind::UniformGrid { bounds, resolution } => {
                let bounds = match bounds.len() {
                    1 => vec![bounds[0]; m],
                    len if len == m => bounds.clone(),
                    len => return input(format!("grid has {len} axes, integrand has {m}")),
                };
                Self::uniform_grid(bounds, *resolution)
            }
        }
    }

    fn tensor(m: usize, axes: &[Vec<(f64, f64)>], kind: RuleKind) -> Self {
        let mut nodes: Vec<Vec<f64>> = vec![Vec::new()];
        let mut weights = vec![1.0];
        for axis in axes {
            let mut next_nodes = Vec::with_capacity(nodes.len() * axis.len());
            let mut next_weights = Vec::with_capacity(nodes.len() * axis.len());
            for (node, w) in nodes.iter().zip(&weights) {
                for &(x, wx) in axis {
                    let mut p = node.clone();
                    p.push(x);
                    next_nodes.push(p);
                    next_weights.push(w * wx);
                }
            }
            nodes = next_nodes;
            weights = next_weights;
        }
        QuadratureRule { m, nodes, weights, kind }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kind(&self) -> &RuleKind {
        &self.kind
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A rule with about half the nodes per axis, for error estimates.
    pub fn coarsen(&self) -> Result<Self> {
        match &self.kind {
            RuleKind::GaussHermite { order, center, scale } => {
                Self::gauss_hermite(self.m, (order / 2).max(2), *center, *scale)
            }
            RuleKind::UniformGrid { bounds, resolution } => {
                Self::uniform_grid(bounds.clone(), resolution.div_ceil(2))
            }
        }
    }

    /// Index of the node farthest from the rule's center.
    fn outermost(&self) -> usize {
        let center: Vec<f64> = match &self.kind {
            RuleKind::GaussHermite { center, .. } => vec![*center; self.m],
            RuleKind::UniformGrid { bounds, .. } => bounds.iter().map(|(a, b)| 0.5 * (a + b)).collect(),
        };
        let dist = |p: &Vec<f64>| p.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>();
        (0..self.len()).max_by(|&a, &b| dist(&self.nodes[a]).total_cmp(&dist(&self.nodes[b]))).unwrap_or(0)
    }

    /// `Σ wᵢ f(xᵢ)` for scalars, evaluated in parallel and reduced pairwise.
    pub fn integrate_scalar<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let terms: Vec<f64> = self
            .nodes
            .par_iter()
            .zip(self.weights.par_iter())
            .map(|(x, w)| f(x).map(|v| w * v))
            .collect::<Result<_>>()?;
        Ok(pairwise_sum_f64(&terms))
    }
}

fn check_budget(per_axis: usize, m: usize) -> Result<()> {
    let nodes = (per_axis as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if nodes > NODE_BUDGET {
        return Err(Error::Budget { nodes, limit: NODE_BUDGET });
    }
    Ok(())
}

fn sum_matrices(items: &[DMatrix<f64>], rows: usize, cols: usize) -> DMatrix<f64> {
    pairwise_sum(items, &DMatrix::zeros(rows, cols), &|a: &DMatrix<f64>, b: &DMatrix<f64>| a + b)
}

fn sum_vectors(items: &[DVector<f64>], len: usize) -> DVector<f64> {
    pairwise_sum(items, &DVector::zeros(len), &|a: &DVector<f64>, b: &DVector<f64>| a + b)
}

/// Value, gradient (`d × m`, columns `∂_j F`) and second partials `∂²_{jk} F` (flat `j*m + k`).
#[derive(Clone, Debug)]
pub struct VectorJet {
    pub value: DVector<f64>,
    pub grad: DMatrix<f64>,
    pub hess: Vec<DVector<f64>>,
}

impl VectorJet {
    pub fn second(&self, j: usize, k: usize) -> &DVector<f64> {
        &self.hess[j * self.grad.ncols() + k]
    }
}

/// A map `F: ℝ^m → ℝ^d` with derivative oracles.
pub trait VectorFieldFn: Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<DVector<f64>>;

    /// Defaults to Richardson-extrapolated central differences of `value`.
    fn gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.jet(x)?.grad)
    }

    fn jet(&self, x: &[f64]) -> Result<VectorJet> {
        fd_vector_jet(self, x, 1e-3)
    }
}

fn fd_vector_jet<F: VectorFieldFn + ?Sized>(f: &F, x: &[f64], step: f64) -> Result<VectorJet> {
    let m = x.len();
    let raw = finite_difference_jet(|y| Ok(DMatrix::from_column_slice(f.dim_out(), 1, f.value(y)?.as_slice())), x, step, true)?;
    let col = |a: &DMatrix<f64>| DVector::from_column_slice(a.as_slice());
    let mut grad = DMatrix::zeros(f.dim_out(), m);
    for j in 0..m {
        grad.set_column(j, &col(&raw.d1[j]));
    }
    Ok(VectorJet { value: f.value(x)?, grad, hess: raw.d2.iter().map(col).collect() })
}

/// Vector of polynomials with exact derivatives.
#[derive(Clone, Debug)]
pub struct PolyVectorField {
    m: usize,
    components: Vec<PolyJet>,
}

impl PolyVectorField {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        let m = match components.first() {
            Some(p) => p.n(),
            None => return input("vector field needs at least one component"),
        };
        if components.iter().any(|p| p.n() != m) {
            return input("components have different numbers of variables");
        }
        Ok(PolyVectorField { m, components: components.into_iter().map(PolyJet::new).collect() })
    }

    pub fn components(&self) -> impl Iterator<Item = &Polynomial> {
        self.components.iter().map(|c| &c.value)
    }
}

impl VectorFieldFn for PolyVectorField {
    fn dim_in(&self) -> usize {
        self.m
    }

    fn dim_out(&self) -> usize {
        self.components.len()
    }

    fn value(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_iterator(self.components.len(), self.components.iter().map(|c| c.value.eval(x))))
    }

    fn gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_fn(self.dim_out(), self.m, |r, j| self.components[r].eval_d1(j, x)))
    }

    fn jet(&self, x: &[f64]) -> Result<VectorJet> {
        let m = self.m;
        let d = self.dim_out();
        Ok(VectorJet {
            value: self.value(x)?,
            grad: self.gradient(x)?,
            hess: (0..m * m)
                .map(|jk| DVector::from_fn(d, |r, _| self.components[r].eval_d2(jk / m, jk % m, x)))
                .collect(),
        })
    }
}

impl PolyVectorField {
    /// Polynomial in `m` variables with every monomial of total degree `≤ max_degree`
    /// given a uniform `[−1, 1]` coefficient, one per output component.
    pub fn random<R: Rng>(rng: &mut R, m: usize, d: usize, max_degree: u32) -> Self {
        let exponents = exponents_up_to(m, max_degree);
        let components = (0..d)
            .map(|_| {
                let terms = exponents
                    .iter()
                    .map(|p| Monomial { coeff: rng.gen_range(-1.0..=1.0), powers: p.clone() })
                    .collect();
                Polynomial::new(m, terms).expect("finite coefficients")
            })
            .collect();
        PolyVectorField::new(components).expect("components share m")
    }

    /// Parses `;`-separated components such as `3*y1*y2^2 - 0.5; y1`.
    ///
    /// Variables are `y1..ym` (or `x1..xm`); with `m = 1`, a bare `y` or `x` also works.
    pub fn parse(m: usize, text: &str) -> Result<Self> {
        if m == 0 {
            return input("test function needs at least one variable");
        }
        let components = text
            .split(';')
            .map(|part| PolyParser::new(m, part).parse())
            .collect::<Result<Vec<_>>>()?;
        PolyVectorField::new(components)
    }
}

fn exponents_up_to(m: usize, max_degree: u32) -> Vec<Vec<u32>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 0..=max_degree {
        for mut rest in exponents_up_to(m - 1, max_degree - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

struct PolyParser<'s> {
    m: usize,
    src: &'s str,
    chars: Vec<char>,
    pos: usize,
}

impl<'s> PolyParser<'s> {
    fn new(m: usize, src: &'s str) -> Self {
        PolyParser { m, src, chars: src.chars().filter(|c| !c.is_whitespace()).collect(), pos: 0 }
    }

    fn err<T>(&self, what: &str) -> Result<T> {
        input(format!("cannot parse polynomial '{}': {what}", self.src.trim()))
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Polynomial> {
        if self.chars.is_empty() {
            return self.err("empty component");
        }
        let p = self.expr()?;
        if self.pos != self.chars.len() {
            return self.err(&format!("unexpected '{}'", self.chars[self.pos]));
        }
        Ok(p)
    }

    fn expr(&mut self) -> Result<Polynomial> {
        let mut acc = match self.peek() {
            Some('-') => {
                self.pos += 1;
                self.term()?.scale(-1.0)
            }
            Some('+') => {
                self.pos += 1;
                self.term()?
            }
            _ => self.term()?,
        };
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let t = self.term()?;
            acc = acc.add(&if c == '-' { t.scale(-1.0) } else { t });
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = self.power()?;
        while self.peek() == Some('*') {
            self.pos += 1;
            acc = acc.mul(&self.power()?);
        }
        Ok(acc)
    }

    fn power(&mut self) -> Result<Polynomial> {
        let base = self.atom()?;
        if self.peek() != Some('^') {
            return Ok(base);
        }
        self.pos += 1;
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let exp: u32 = match self.chars[start..self.pos].iter().collect::<String>().parse() {
            Ok(e) => e,
            Err(_) => return self.err("exponent must be a nonnegative integer"),
        };
        Ok((0..exp).fold(Polynomial::constant(self.m, 1.0), |acc, _| acc.mul(&base)))
    }

    fn atom(&mut self) -> Result<Polynomial> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(')') {
                    return self.err("missing ')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some('x' | 'y') => {
                self.pos += 1;
                let start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
                let digits: String = self.chars[start..self.pos].iter().collect();
                let index = if digits.is_empty() && self.m == 1 { 1 } else { digits.parse().unwrap_or(0) };
                if index == 0 || index > self.m {
                    return self.err(&format!("variable index must be in 1..={}", self.m));
                }
                Ok(Polynomial::var(self.m, index - 1))
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                while let Some(c) = self.peek() {
                    let exp_sign = matches!(c, '+' | '-') && matches!(self.chars[self.pos - 1], 'e' | 'E');
                    if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                match self.chars[start..self.pos].iter().collect::<String>().parse::<f64>() {
                    Ok(v) => Ok(Polynomial::constant(self.m, v)),
                    Err(_) => self.err("bad number"),
                }
            }
            Some(c) => self.err(&format!("unexpected '{c}'")),
            None => self.err("unexpected end"),
        }
    }
}

/// `F·𝟙{‖y‖_∞ ≤ radius}`: a test function cut off outside a cube.
///
/// Jets are those of `F` inside the cube and zero outside, so `F` should vanish
/// to first order on the boundary.
pub struct Truncated<F> {
    inner: F,
    radius: f64,
}

impl<F: VectorFieldFn> Truncated<F> {
    pub fn new(inner: F, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return input(format!("cutoff radius must be positive, got {radius}"));
        }
        Ok(Truncated { inner, radius })
    }

    fn inside(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.abs() <= self.radius)
    }
}

impl<F: VectorFieldFn> VectorFieldFn for Truncated<F> {
    fn dim_in(&self) -> usize {
        self.inner.dim_in()
    }

    fn dim_out(&self) -> usize {
        self.inner.dim_out()
    }

    fn value(&self, x: &[f64]) -> Result<DVector<f64>> {
        if self.inside(x) {
            self.inner.value(x)
        } else {
            Ok(DVector::zeros(self.dim_out()))
        }
    }

    fn gradient(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if self.inside(x) {
            self.inner.gradient(x)
        } else {
            Ok(DMatrix::zeros(self.dim_out(), self.dim_in()))
        }
    }

    fn jet(&self, x: &[f64]) -> Result<VectorJet> {
        if self.inside(x) {
            return self.inner.jet(x);
        }
        let (m, d) = (self.dim_in(), self.dim_out());
        Ok(VectorJet { value: DVector::zeros(d), grad: DMatrix::zeros(d, m), hess: vec![DVector::zeros(d); m * m] })
    }
}

/// A closure-backed field with finite-difference derivatives.
pub struct FnVectorField<F> {
    m: usize,
    d: usize,
    step: f64,
    f: F,
}

impl<F> FnVectorField<F>
where
    F: Fn(&[f64]) -> Result<DVector<f64>> + Sync,
{
    pub fn new(m: usize, d: usize, f: F) -> Self {
        FnVectorField { m, d, step: 1e-3, f }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }
}

impl<F> VectorFieldFn for FnVectorField<F>
where
    F: Fn(&[f64]) -> Result<DVector<f64>> + Sync,
{
    fn dim_in(&self) -> usize {
        self.m
    }

    fn dim_out(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> Result<DVector<f64>> {
        (self.f)(x)
    }

    fn jet(&self, x: &[f64]) -> Result<VectorJet> {
        fd_vector_jet(self, x, self.step)
    }
}

/// Weight values at the nodes of a rule, and their total `𝒵 = Σ wᵢ g(xᵢ)`.
#[derive(Clone, Debug)]
pub struct WeightedSamples<'a> {
    rule: &'a QuadratureRule,
    d: usize,
    values: Vec<SpdMatrix>,
    total: SpdMatrix,
    tail_ratio: f64,
}

impl<'a> WeightedSamples<'a> {
    pub fn new(field: &MatrixField, rule: &'a QuadratureRule) -> Result<Self> {
        if field.n() != rule.m() {
            return input(format!("field has n = {}, rule integrates over {} axes", field.n(), rule.m()));
        }
        let d = field.d();
        let values: Vec<SpdMatrix> = rule.nodes.par_iter().map(|x| field.evaluate(x)).collect::<Result<_>>()?;
        let terms: Vec<DMatrix<f64>> = values.iter().zip(&rule.weights).map(|(g, w)| g.matrix() * *w).collect();
        let sum = sum_matrices(&terms, d, d);
        let outer = rule.outermost();
        let tail_ratio = terms[outer].norm() / sum.norm().max(f64::MIN_POSITIVE);
        if tail_ratio > TAIL_WARN_RATIO {
            log::warn!(
                "field '{}': outermost node carries {tail_ratio:e} of the integral; the rule may truncate the tail",
                field.label()
            );
        }
        let total = SpdMatrix::new(sum).map_err(|e| Error::Quadrature(format!("integral of '{}' is not positive definite: {e}", field.label())))?;
        Ok(WeightedSamples { rule, d, values, total, tail_ratio })
    }

    pub fn rule(&self) -> &QuadratureRule {
        self.rule
    }

    /// `𝒵 = ∫ g`.
    pub fn total(&self) -> &SpdMatrix {
        &self.total
    }

    pub fn values(&self) -> &[SpdMatrix] {
        &self.values
    }

    /// Relative size of the outermost node's contribution.
    pub fn tail_ratio(&self) -> f64 {
        self.tail_ratio
    }

    fn check_fn(&self, f: &dyn VectorFieldFn) -> Result<()> {
        if f.dim_in() != self.rule.m() || f.dim_out() != self.d {
            return input(format!(
                "test function maps R^{} -> R^{}, weight needs R^{} -> R^{}",
                f.dim_in(),
                f.dim_out(),
                self.rule.m(),
                self.d
            ));
        }
        Ok(())
    }

    /// `(∫ ‖F‖²_g, ∫ g F)`.
    fn moments(&self, f: &dyn VectorFieldFn) -> Result<(f64, DVector<f64>)> {
        self.check_fn(f)?;
        let per_node: Vec<(f64, DVector<f64>)> = self
            .rule
            .nodes
            .par_iter()
            .zip(self.values.par_iter())
            .zip(self.rule.weights.par_iter())
            .map(|((x, g), w)| {
                let v = f.value(x)?;
                let gv = g.matrix() * &v;
                Ok((w * v.dot(&gv), gv * *w))
            })
            .collect::<Result<_>>()?;
        let (sq, vecs): (Vec<f64>, Vec<DVector<f64>>) = per_node.into_iter().unzip();
        Ok((pairwise_sum_f64(&sq), sum_vectors(&vecs, self.d)))
    }

    /// `𝒵⁻¹ ∫ g F`.
    pub fn mean(&self, f: &dyn VectorFieldFn) -> Result<DVector<f64>> {
        let (_, b) = self.moments(f)?;
        Ok(self.total.solve_vec(&b))
    }

    /// `∫ ‖F‖²_g − ‖𝒵⁻¹ ∫ g F‖²_𝒵`.
    pub fn variance(&self, f: &dyn VectorFieldFn) -> Result<f64> {
        let (sq, b) = self.moments(f)?;
        Ok(sq - b.dot(&self.total.solve_vec(&b)))
    }

    /// `∫ ‖F − mean‖²_g` computed in a second pass.
    pub fn variance_two_pass(&self, f: &dyn VectorFieldFn) -> Result<f64> {
        let mean = self.mean(f)?;
        let terms: Vec<f64> = self
            .rule
            .nodes
            .par_iter()
            .zip(self.values.par_iter())
            .zip(self.rule.weights.par_iter())
            .map(|((x, g), w)| {
                let c = f.value(x)? - &mean;
                Ok(w * c.dot(&(g.matrix() * &c)))
            })
            .collect::<Result<_>>()?;
        Ok(pairwise_sum_f64(&terms))
    }
}

/// Weight samples plus the curvature `Θ` and the polar of `−Θ` at every node.
#[derive(Clone, Debug)]
pub struct CurvatureSamples<'a> {
    weighted: WeightedSamples<'a>,
    jets: Vec<Jet2>,
    curvature: Vec<CurvatureMatrix>,
    polar: Vec<PolarForm>,
}

impl<'a> CurvatureSamples<'a> {
    /// Fails with `NotPsd` at the first node where `−Θ` is indefinite.
    pub fn new(field: &MatrixField, rule: &'a QuadratureRule, rel_null_tol: f64) -> Result<Self> {
        let weighted = WeightedSamples::new(field, rule)?;
        let per_node: Vec<(Jet2, CurvatureMatrix, PolarForm)> = rule
            .nodes
            .par_iter()
            .map(|x| {
                let jet = field.evaluate_jet(x)?;
                let cm = CurvatureMatrix::from_jet(&jet)?;
                let polar = PolarForm::new(&cm.negative_form()?, rel_null_tol)?;
                Ok((jet, cm, polar))
            })
            .collect::<Result<_>>()?;
        let mut jets = Vec::with_capacity(per_node.len());
        let mut curvature = Vec::with_capacity(per_node.len());
        let mut polar = Vec::with_capacity(per_node.len());
        for (j, c, p) in per_node {
            jets.push(j);
            curvature.push(c);
            polar.push(p);
        }
        Ok(CurvatureSamples { weighted, jets, curvature, polar })
    }

    pub fn weighted(&self) -> &WeightedSamples<'a> {
        &self.weighted
    }

    pub fn jets(&self) -> &[Jet2] {
        &self.jets
    }

    pub fn curvature(&self) -> &[CurvatureMatrix] {
        &self.curvature
    }

    /// `∫ Q°_{id⊗g, −Θ}(∇F)`; `+∞` if any node is off-range.
    pub fn dirichlet(&self, f: &dyn VectorFieldFn) -> Result<ExtendedReal> {
        self.weighted.check_fn(f)?;
        let rule = self.weighted.rule;
        let terms: Vec<ExtendedReal> = rule
            .nodes
            .par_iter()
            .zip(self.polar.par_iter())
            .zip(rule.weights.par_iter())
            .map(|((x, polar), w)| {
                let grad = f.gradient(x)?;
                Ok(match polar.value(&DVector::from_column_slice(grad.as_slice()))? {
                    ExtendedReal::Finite(q) => ExtendedReal::Finite(w * q),
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        if terms.iter().any(|t| !t.is_finite()) {
            return Ok(ExtendedReal::Infinite);
        }
        let finite: Vec<f64> = terms.iter().map(|t| t.to_f64()).collect();
        Ok(ExtendedReal::Finite(pairwise_sum_f64(&finite)))
    }
}

/// `∫ g` over the rule, validated positive definite.
pub fn integrate_field(field: &MatrixField, rule: &QuadratureRule) -> Result<SpdMatrix> {
    Ok(WeightedSamples::new(field, rule)?.total)
}

pub fn weighted_mean(field: &MatrixField, f: &dyn VectorFieldFn, rule: &QuadratureRule) -> Result<DVector<f64>> {
    WeightedSamples::new(field, rule)?.mean(f)
}

pub fn variance_functional(field: &MatrixField, f: &dyn VectorFieldFn, rule: &QuadratureRule) -> Result<f64> {
    WeightedSamples::new(field, rule)?.variance(f)
}

pub fn dirichlet_energy(
    field: &MatrixField,
    f: &dyn VectorFieldFn,
    rule: &QuadratureRule,
    rel_null_tol: f64,
) -> Result<ExtendedReal> {
    CurvatureSamples::new(field, rule, rel_null_tol)?.dirichlet(f)
}
