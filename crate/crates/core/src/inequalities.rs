//! Certifications: Brascamp–Lieb variance gap, weighted-Laplacian identities,
//! and log-concavity of marginals computed along two independent routes.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::curvature::{
    block_split, nakano_verdict_with_tol, random_block, schur_gap_with, BlockSplit, CurvatureMatrix, DEFAULT_TOL_PSD,
};
use crate::error::{input, Result};
use crate::fields::{finite_difference_jet, Jet2, JetMode, MatrixField};
use crate::linalg::pairwise_sum_f64;
use crate::metric::{ColumnBlockMatrix, ExtendedReal, PolarForm, QuadraticFormSpec, SpdMatrix, DEFAULT_REL_NULL_TOL};
use crate::quadrature::{CurvatureSamples, QuadratureRule, RuleKind, VectorFieldFn, VectorJet, WeightedSamples};

pub const DEFAULT_MARGINAL_STEP: f64 = 1e-3;
pub const DEFAULT_ROUTE_TOL: f64 = 1e-4;
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Degenerate,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Degenerate => "degenerate",
        })
    }
}

/// A predicate on one metric.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Bound {
    #[serde(rename = "max")]
    AtMost(f64),
    #[serde(rename = "min")]
    AtLeast(f64),
}

impl Bound {
    pub fn holds(&self, value: ExtendedReal) -> bool {
        match (self, value) {
            (Bound::AtMost(b), v) => v.is_finite() && v.to_f64() <= *b || v == ExtendedReal::NegInfinite,
            (Bound::AtLeast(b), v) => v.is_finite() && v.to_f64() >= *b || v == ExtendedReal::Infinite,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub status: Status,
    pub metrics: BTreeMap<String, ExtendedReal>,
    pub tolerances: BTreeMap<String, Bound>,
    pub settings: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        CheckReport {
            name: name.into(),
            status: Status::Pass,
            metrics: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            settings: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Into<ExtendedReal>) -> &mut Self {
        self.metrics.insert(key.to_string(), value.into());
        self
    }

    pub fn bound(&mut self, key: &str, bound: Bound) -> &mut Self {
        self.tolerances.insert(key.to_string(), bound);
        self
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.insert(key.to_string(), value.to_string());
        self
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    /// Finite value of a metric, if present.
    pub fn value(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).map(|v| v.to_f64())
    }

    /// Sets `status` from the declared predicates: pass iff all hold.
    pub fn settle(mut self) -> Self {
        let ok = self.tolerances.iter().all(|(k, b)| self.metrics.get(k).is_some_and(|v| b.holds(*v)));
        self.status = if ok { Status::Pass } else { Status::Fail };
        self
    }

    pub fn degenerate(mut self, why: impl Into<String>) -> Self {
        self.status = Status::Degenerate;
        self.notes.push(why.into());
        self
    }

    fn echo_rule(&mut self, rule: &QuadratureRule) -> &mut Self {
        self.setting("rule", describe_rule(rule))
    }

    fn echo_field(&mut self, field: &MatrixField) -> &mut Self {
        self.setting("field", field.label()).setting("jet", describe_jet(field.jet_mode()))
    }
}

pub fn describe_rule(rule: &QuadratureRule) -> String {
    match rule.kind() {
        RuleKind::GaussHermite { order, center, scale } => {
            format!("gauss_hermite(m={}, order={order}, center={center}, scale={scale})", rule.m())
        }
        RuleKind::UniformGrid { bounds, resolution } => {
            let b: Vec<String> = bounds.iter().map(|(lo, hi)| format!("[{lo},{hi}]")).collect();
            format!("uniform_grid(box={}, resolution={resolution})", b.join("x"))
        }
    }
}

pub fn describe_jet(mode: JetMode) -> String {
    match mode {
        JetMode::Exact => "exact".to_string(),
        JetMode::FiniteDifference { step, richardson } => format!("fd(h={step}, richardson={richardson})"),
    }
}

/// `Σ wᵢ tᵢ` over nodes for several parallel-computed terms at once.
fn node_sums<const K: usize, F>(rule: &QuadratureRule, f: F) -> Result<[f64; K]>
where
    F: Fn(&[f64]) -> Result<[f64; K]> + Sync,
{
    let per_node: Vec<[f64; K]> = rule
        .nodes()
        .par_iter()
        .zip(rule.weights().par_iter())
        .map(|(x, w)| f(x).map(|t| t.map(|v| w * v)))
        .collect::<Result<_>>()?;
    Ok(std::array::from_fn(|i| pairwise_sum_f64(&per_node.iter().map(|t| t[i]).collect::<Vec<_>>())))
}

fn check_dims(field: &MatrixField, f: &dyn VectorFieldFn, what: &str) -> Result<()> {
    if f.dim_in() != field.n() || f.dim_out() != field.d() {
        return input(format!(
            "{what} maps R^{} -> R^{}, weight needs R^{} -> R^{}",
            f.dim_in(),
            f.dim_out(),
            field.n(),
            field.d()
        ));
    }
    Ok(())
}

/// Brascamp–Lieb: `variance(F) ≤ ∫ Q°_{−Θ}(∇F)`.
pub fn bl_gap(field: &MatrixField, f: &dyn VectorFieldFn, rule: &QuadratureRule) -> Result<CheckReport> {
    let samples = CurvatureSamples::new(field, rule, DEFAULT_REL_NULL_TOL)?;
    let mut report = bl_gap_with(&samples, f)?;
    report.echo_field(field);
    Ok(report)
}

/// [`bl_gap`] reusing per-node curvature data.
pub fn bl_gap_with(samples: &CurvatureSamples<'_>, f: &dyn VectorFieldFn) -> Result<CheckReport> {
    let lhs = samples.weighted().variance(f)?;
    let rhs = samples.dirichlet(f)?;
    let mut report = CheckReport::new("bl");
    report.echo_rule(samples.weighted().rule());
    report.metric("lhs", lhs).metric("rhs", rhs);
    match rhs {
        ExtendedReal::Finite(r) => {
            let tol = 1e-6 * r.max(1.0);
            report.metric("gap", r - lhs).bound("gap", Bound::AtLeast(-tol));
            Ok(report.settle())
        }
        _ => {
            report.metric("gap", ExtendedReal::Infinite);
            Ok(report.degenerate("gradient leaves the range of the curvature; inequality holds trivially"))
        }
    }
}

fn laplacian_from_jets(jet: &Jet2, fj: &VectorJet) -> DVector<f64> {
    let n = jet.n();
    let mut out = DVector::zeros(jet.d());
    for k in 0..n {
        out += fj.second(k, k);
        out += jet.value().solve(jet.d1(k)) * fj.grad.column(k);
    }
    out
}

/// `LF = ΔF + Σ_k (g⁻¹∂_k g) ∂_k F` at `x`.
pub fn weighted_laplacian(field: &MatrixField, f: &dyn VectorFieldFn, x: &[f64]) -> Result<DVector<f64>> {
    check_dims(field, f, "F")?;
    Ok(laplacian_from_jets(&field.evaluate_jet(x)?, &f.jet(x)?))
}

fn ipp_terms(field: &MatrixField, f: &dyn VectorFieldFn, g: &dyn VectorFieldFn, rule: &QuadratureRule) -> Result<[f64; 2]> {
    node_sums(rule, |x| {
        let jet = field.evaluate_jet(x)?;
        let fj = f.jet(x)?;
        let gv = g.value(x)?;
        let metric = jet.value().matrix();
        let lhs = laplacian_from_jets(&jet, &fj).dot(&(metric * gv));
        let grad_g = g.gradient(x)?;
        let dirichlet: f64 = (0..field.n()).map(|k| fj.grad.column(k).dot(&(metric * grad_g.column(k)))).sum();
        Ok([lhs, -dirichlet])
    })
}

/// Integration by parts for `L`: `∫⟨LF, G⟩_g = −∫⟨∇F, ∇G⟩_{id⊗g}`.
pub fn ipp_residual(
    field: &MatrixField,
    f: &dyn VectorFieldFn,
    g: &dyn VectorFieldFn,
    rule: &QuadratureRule,
) -> Result<CheckReport> {
    check_dims(field, f, "F")?;
    check_dims(field, g, "G")?;
    let [lhs, rhs] = ipp_terms(field, f, g, rule)?;
    let [lhs_c, rhs_c] = ipp_terms(field, f, g, &rule.coarsen()?)?;
    let rule_error = (lhs - lhs_c).abs().max((rhs - rhs_c).abs());
    let residual = (lhs - rhs).abs();
    let mut report = CheckReport::new("ipp");
    report.echo_field(field).echo_rule(rule);
    report
        .metric("lhs", lhs)
        .metric("rhs", rhs)
        .metric("residual", residual)
        .metric("rule_error", rule_error)
        .bound("residual", Bound::AtMost(DEFAULT_RESIDUAL_TOL * lhs.abs().max(rhs.abs()).max(1.0) + rule_error));
    Ok(report.settle())
}

/// `⟨ΘU, U⟩_{id⊗g} = Σ_{j,k} u_kᵀ (∂²_{kj}g − ∂_k g g⁻¹ ∂_j g) u_j`, from the raw jet.
fn curvature_form(jet: &Jet2, u: &DMatrix<f64>) -> f64 {
    let n = jet.n();
    let g = jet.value();
    let mut total = 0.0;
    for j in 0..n {
        let ginv_dj_u = g.solve_vec(&(jet.d1(j) * u.column(j)));
        for k in 0..n {
            let uk = u.column(k);
            total += uk.dot(&(jet.d2(k, j) * u.column(j))) - (jet.d1(k) * uk).dot(&ginv_dj_u);
        }
    }
    total
}

fn bochner_terms(field: &MatrixField, psi: &dyn VectorFieldFn, rule: &QuadratureRule) -> Result<[f64; 3]> {
    let n = field.n();
    node_sums(rule, |x| {
        let jet = field.evaluate_jet(x)?;
        let pj = psi.jet(x)?;
        let metric = jet.value().matrix();
        let lpsi = laplacian_from_jets(&jet, &pj);
        let lhs = lpsi.dot(&(metric * &lpsi));
        let curv = -curvature_form(&jet, &pj.grad);
        let hess: f64 = pj.hess.iter().map(|h| h.dot(&(metric * h))).sum();
        debug_assert_eq!(pj.hess.len(), n * n);
        Ok([lhs, curv, hess])
    })
}

/// Bochner identity: `∫‖LΨ‖²_g = ∫⟨−Θ∇Ψ, ∇Ψ⟩ + ∫Σ_{j,k}‖∂²_{jk}Ψ‖²_g`.
pub fn bochner_residual(field: &MatrixField, psi: &dyn VectorFieldFn, rule: &QuadratureRule) -> Result<CheckReport> {
    check_dims(field, psi, "Psi")?;
    let [lhs, curv, hess] = bochner_terms(field, psi, rule)?;
    let [lhs_c, curv_c, hess_c] = bochner_terms(field, psi, &rule.coarsen()?)?;
    let rule_error = (lhs - lhs_c).abs() + (curv - curv_c).abs() + (hess - hess_c).abs();
    let residual = (lhs - curv - hess).abs();
    let mut report = CheckReport::new("bochner");
    report.echo_field(field).echo_rule(rule);
    report
        .metric("lhs", lhs)
        .metric("term_curv", curv)
        .metric("term_hess", hess)
        .metric("residual", residual)
        .metric("rule_error", rule_error)
        .bound("residual", Bound::AtMost(DEFAULT_RESIDUAL_TOL * lhs.abs().max(1.0) + rule_error));
    Ok(report.settle())
}

fn check_marginal_args(field: &MatrixField, t: &[f64], rule: &QuadratureRule) -> Result<()> {
    if t.is_empty() || t.len() >= field.n() {
        return input(format!("marginal point has {} coordinates; need 1..{} for n = {}", t.len(), field.n(), field.n()));
    }
    if rule.m() != field.n() - t.len() {
        return input(format!("rule integrates over {} axes, marginal needs {}", rule.m(), field.n() - t.len()));
    }
    Ok(())
}

/// Route A: `Θ̃^α(t)` from central differences of `α(t) = ∫ g(t, y) dy`.
pub fn marginal_theta_fd(field: &MatrixField, t: &[f64], rule: &QuadratureRule, h: f64) -> Result<CurvatureMatrix> {
    marginal_theta_fd_with(field, t, rule, h, true)
}

pub fn marginal_theta_fd_with(
    field: &MatrixField,
    t: &[f64],
    rule: &QuadratureRule,
    h: f64,
    richardson: bool,
) -> Result<CurvatureMatrix> {
    check_marginal_args(field, t, rule)?;
    let alpha = |s: &[f64]| Ok(WeightedSamples::new(&field.restrict(s)?, rule)?.total().matrix().clone());
    let jet = Jet2::new(finite_difference_jet(alpha, t, h, richardson)?)?;
    CurvatureMatrix::from_jet(&jet)
}

/// Per-node data for the fiber over `t`, shared across many `V₀`.
struct FiberNode {
    weight: f64,
    g: SpdMatrix,
    /// `g⁻¹∂_{t_j} g` for each retained direction.
    log_derivs: Vec<DMatrix<f64>>,
    /// `∂_{y_k}(g⁻¹∂_{t_j} g)`, indexed `[k][j]`, by finite differences.
    log_derivs_dy: Vec<Vec<DMatrix<f64>>>,
    cm: CurvatureMatrix,
    split: BlockSplit,
}

/// Full-space data along the fiber `{t} × ℝ^{n₁}` at every node of `rule`.
pub struct Fiber<'a> {
    rule: &'a QuadratureRule,
    t: Vec<f64>,
    d: usize,
    nodes: Vec<FiberNode>,
    total: SpdMatrix,
}

impl<'a> Fiber<'a> {
    pub fn new(field: &MatrixField, t: &[f64], rule: &'a QuadratureRule) -> Result<Self> {
        check_marginal_args(field, t, rule)?;
        let n0 = t.len();
        let d = field.d();
        let point = |y: &[f64]| [t, y].concat();
        let log_derivs_at = |y: &[f64]| -> Result<DMatrix<f64>> {
            let jet = field.evaluate_jet(&point(y))?;
            let mut out = DMatrix::zeros(d, d * n0);
            for j in 0..n0 {
                out.columns_mut(j * d, d).copy_from(&jet.value().solve(jet.d1(j)));
            }
            Ok(out)
        };
        let nodes: Vec<FiberNode> = rule
            .nodes()
            .par_iter()
            .zip(rule.weights().par_iter())
            .map(|(y, &weight)| {
                let jet = field.evaluate_jet(&point(y))?;
                let stacked = log_derivs_at(y)?;
                let dy = finite_difference_jet(log_derivs_at, y, DEFAULT_MARGINAL_STEP, true)?;
                let split_cols = |m: &DMatrix<f64>| (0..n0).map(|j| m.columns(j * d, d).into_owned()).collect::<Vec<_>>();
                let cm = CurvatureMatrix::from_jet(&jet)?;
                let split = block_split(&cm, n0)?;
                Ok(FiberNode {
                    weight,
                    g: jet.value().clone(),
                    log_derivs: split_cols(&stacked),
                    log_derivs_dy: dy.d1.iter().map(split_cols).collect(),
                    cm,
                    split,
                })
            })
            .collect::<Result<_>>()?;
        let total = WeightedSamples::new(&field.restrict(t)?, rule)?.total().clone();
        Ok(Fiber { rule, t: t.to_vec(), d, nodes, total })
    }

    pub fn n0(&self) -> usize {
        self.t.len()
    }

    pub fn rule(&self) -> &QuadratureRule {
        self.rule
    }

    /// `α(t)` by the same rule.
    pub fn alpha(&self) -> &SpdMatrix {
        &self.total
    }

    /// Largest generalized curvature eigenvalue over the fiber's nodes.
    pub fn max_node_lambda(&self) -> f64 {
        self.nodes.iter().map(|nd| nakano_verdict_with_tol(&nd.cm, 0.0).lambda_max).fold(f64::NEG_INFINITY, f64::max)
    }

    fn check_v0(&self, v0: &ColumnBlockMatrix) -> Result<()> {
        if v0.d() != self.d || v0.n() != self.n0() {
            return input(format!("V0 is {}x{}, expected {}x{}", v0.d(), v0.n(), self.d, self.n0()));
        }
        Ok(())
    }

    fn f_at(node: &FiberNode, v0: &ColumnBlockMatrix) -> DVector<f64> {
        node.log_derivs.iter().zip(v0.columns()).map(|(m, v)| m * v).sum()
    }

    /// Route B: `⟨Θ^αV₀,V₀⟩_{id⊗α} = ∫⟨Θ₀₀V₀,V₀⟩_{id⊗g} + variance(F)`.
    pub fn decomposed(&self, v0: &ColumnBlockMatrix) -> Result<RouteB> {
        self.check_v0(v0)?;
        let v = v0.flatten();
        let per_node: Vec<(f64, f64, DVector<f64>)> = self
            .nodes
            .iter()
            .map(|nd| {
                let f = Self::f_at(nd, v0);
                let gf = nd.g.matrix() * &f;
                let w = nd.weight;
                (w * v.dot(&(nd.split.theta00() * &v)), w * f.dot(&gf), gf * w)
            })
            .collect();
        let curv = pairwise_sum_f64(&per_node.iter().map(|p| p.0).collect::<Vec<_>>());
        let sq = pairwise_sum_f64(&per_node.iter().map(|p| p.1).collect::<Vec<_>>());
        let b = crate::linalg::pairwise_sum(
            &per_node.into_iter().map(|p| p.2).collect::<Vec<_>>(),
            &DVector::zeros(self.d),
            &|a: &DVector<f64>, c: &DVector<f64>| a + c,
        );
        let var = sq - b.dot(&self.total.solve_vec(&b));
        Ok(RouteB { total: curv + var, term_curv00: curv, term_var: var })
    }

    /// Local Prékopa inequality at `V₀`, given `⟨Θ^αV₀,V₀⟩` from route A.
    ///
    /// Requires `−Θ₁₁ ⪰ 0` at every node.
    pub fn local_prekopa(&self, v0: &ColumnBlockMatrix, theta_alpha_form: f64, rel_null_tol: f64) -> Result<LocalPrekopa> {
        let route_b = self.decomposed(v0)?;
        let v = v0.flatten();
        let mut polar_terms = Vec::with_capacity(self.nodes.len());
        let mut schur_min = ExtendedReal::Infinite;
        let mut grad_residual: f64 = 0.0;
        for nd in &self.nodes {
            let n1 = nd.split.n1();
            let mut grad = DMatrix::zeros(self.d, n1);
            for k in 0..n1 {
                let col: DVector<f64> = nd.log_derivs_dy[k].iter().zip(v0.columns()).map(|(m, vj)| m * vj).sum();
                grad.set_column(k, &col);
            }
            let grad_flat = DVector::from_column_slice(grad.as_slice());
            let mixed = nd.split.theta01() * &v;
            grad_residual = grad_residual.max((&grad_flat - &mixed).norm() / (1.0 + mixed.norm()));
            let q11 = PolarForm::new(&QuadraticFormSpec::new(nd.split.metric1().clone(), -nd.split.theta11())?, rel_null_tol)?;
            polar_terms.push(match q11.value(&grad_flat)? {
                ExtendedReal::Finite(q) => ExtendedReal::Finite(nd.weight * q),
                other => other,
            });
            let gap = schur_gap_with(&nd.split, &q11, v0)?;
            if gap.to_f64() < schur_min.to_f64() {
                schur_min = gap;
            }
        }
        let polar = if polar_terms.iter().all(|p| p.is_finite()) {
            ExtendedReal::Finite(pairwise_sum_f64(&polar_terms.iter().map(|p| p.to_f64()).collect::<Vec<_>>()))
        } else {
            ExtendedReal::Infinite
        };
        let lhs = -theta_alpha_form;
        let slack = match polar {
            ExtendedReal::Finite(p) => ExtendedReal::Finite(lhs - (p - route_b.term_var)),
            _ => ExtendedReal::NegInfinite,
        };
        Ok(LocalPrekopa { lhs, polar, variance: route_b.term_var, slack, grad_residual, schur_min })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteB {
    pub total: f64,
    pub term_curv00: f64,
    pub term_var: f64,
}

/// `⟨−Θ^αV₀,V₀⟩ ≥ ∫Q°₁₁(∇_yF) − variance(F)`, with `slack` = left − right.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalPrekopa {
    pub lhs: f64,
    pub polar: ExtendedReal,
    pub variance: f64,
    pub slack: ExtendedReal,
    /// Largest `‖∇_yF − Θ₀₁V₀‖ / (1 + ‖Θ₀₁V₀‖)` over nodes.
    pub grad_residual: f64,
    /// Smallest pointwise Schur gap over nodes.
    pub schur_min: ExtendedReal,
}

/// Route B at a single `V₀`.
pub fn theta_alpha_decomposed(
    field: &MatrixField,
    t: &[f64],
    v0: &ColumnBlockMatrix,
    rule: &QuadratureRule,
) -> Result<RouteB> {
    Fiber::new(field, t, rule)?.decomposed(v0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrekopaOptions {
    pub h: f64,
    pub richardson: bool,
    pub samples: usize,
    pub seed: u64,
    pub tol_psd: f64,
    pub tol_route: f64,
    pub rel_null_tol: f64,
}

impl Default for PrekopaOptions {
    fn default() -> Self {
        PrekopaOptions {
            h: DEFAULT_MARGINAL_STEP,
            richardson: true,
            samples: 20,
            seed: 0,
            tol_psd: DEFAULT_TOL_PSD,
            tol_route: DEFAULT_ROUTE_TOL,
            rel_null_tol: DEFAULT_REL_NULL_TOL,
        }
    }
}

/// Marginal N-log-concavity at `t`, certified by two routes.
///
/// If the weight fails N-log-concavity at any node of the fiber, the report is
/// degenerate and nothing about `α` is asserted.
pub fn prekopa_check(
    field: &MatrixField,
    t: &[f64],
    n0: usize,
    rule: &QuadratureRule,
    opts: &PrekopaOptions,
) -> Result<CheckReport> {
    if t.len() != n0 {
        return input(format!("t has {} coordinates but n0 = {n0}", t.len()));
    }
    if opts.samples == 0 {
        return input("need at least one random V0");
    }
    let mut report = CheckReport::new("prekopa");
    report.echo_field(field).echo_rule(rule);
    report
        .setting("n0", n0)
        .setting("t", format!("{t:?}"))
        .setting("h", opts.h)
        .setting("richardson", opts.richardson)
        .setting("samples", opts.samples)
        .setting("seed", opts.seed);

    let fiber = Fiber::new(field, t, rule)?;
    let node_lambda = fiber.max_node_lambda();
    report.metric("node_lambda_max", node_lambda);
    if node_lambda > opts.tol_psd {
        return Ok(report.degenerate(format!(
            "weight is not N-log-concave at every node of the fiber (largest eigenvalue {node_lambda:e})"
        )));
    }

    let route_a = marginal_theta_fd_with(field, t, rule, opts.h, opts.richardson)?;
    let lambda_alpha = nakano_verdict_with_tol(&route_a, opts.tol_psd).lambda_max;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut route_diff: f64 = 0.0;
    let mut grad_residual: f64 = 0.0;
    let mut schur_min = ExtendedReal::Infinite;
    let mut slack_min = ExtendedReal::Infinite;
    for _ in 0..opts.samples {
        let v0 = random_block(&mut rng, field.d(), n0);
        let a = route_a.quadratic_form(&v0)?;
        let local = fiber.local_prekopa(&v0, a, opts.rel_null_tol)?;
        let route_b = fiber.decomposed(&v0)?.total;
        route_diff = route_diff.max((a - route_b).abs() / (1.0 + route_b.abs()));
        grad_residual = grad_residual.max(local.grad_residual);
        if local.schur_min.to_f64() < schur_min.to_f64() {
            schur_min = local.schur_min;
        }
        let scaled = match local.slack {
            ExtendedReal::Finite(s) => ExtendedReal::Finite(s / (1.0 + local.lhs.abs())),
            other => other,
        };
        if scaled.to_f64() < slack_min.to_f64() {
            slack_min = scaled;
        }
    }
    report
        .metric("lambda_max_alpha", lambda_alpha)
        .metric("route_diff", route_diff)
        .metric("schur_margin", schur_min)
        .metric("local_prekopa_slack", slack_min)
        .metric("grad_f_residual", grad_residual)
        .bound("lambda_max_alpha", Bound::AtMost(opts.tol_psd))
        .bound("route_diff", Bound::AtMost(opts.tol_route));
    Ok(report.settle())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::quadrature::PolyVectorField;
    use approx::assert_relative_eq;

    const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

    fn gh(m: usize, order: usize) -> QuadratureRule {
        QuadratureRule::gauss_hermite(m, order, 0.0, 1.0).unwrap()
    }

    fn poly1(text: &str) -> PolyVectorField {
        PolyVectorField::parse(1, text).unwrap()
    }

    #[test]
    fn bl_examples() {
        let g = MatrixField::gaussian_scalar(1).unwrap();
        let rule = gh(1, 64);
        let linear = bl_gap(&g, &poly1("y"), &rule).unwrap();
        assert_eq!(linear.status, Status::Pass);
        assert_relative_eq!(linear.value("lhs").unwrap(), SQRT_2PI, epsilon = 1e-8);
        assert!(linear.value("gap").unwrap().abs() < 1e-8);
        let square = bl_gap(&g, &poly1("y^2"), &rule).unwrap();
        assert_relative_eq!(square.value("gap").unwrap(), 2.0 * SQRT_2PI, epsilon = 1e-6);
        let constant = bl_gap(&g, &poly1("3"), &rule).unwrap();
        assert!(constant.value("gap").unwrap().abs() < 1e-12);
        assert_eq!(constant.status, Status::Pass);
    }

    #[test]
    fn bl_propagates_not_psd() {
        let field = MatrixField::gaussian_outer(2, 1.5, 1.0).unwrap();
        let f = PolyVectorField::parse(2, "y1; y2").unwrap();
        assert!(matches!(bl_gap(&field, &f, &gh(2, 8)), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn weighted_laplacian_examples() {
        let g = MatrixField::gaussian_scalar(1).unwrap();
        assert_relative_eq!(weighted_laplacian(&g, &poly1("y"), &[0.7]).unwrap()[0], -0.7, epsilon = 1e-14);
        assert_eq!(weighted_laplacian(&g, &poly1("5"), &[0.7]).unwrap()[0], 0.0);
        let c = MatrixField::constant(1, &SpdMatrix::identity(1)).unwrap();
        assert_eq!(weighted_laplacian(&c, &poly1("y^2"), &[3.0]).unwrap()[0], 2.0);
    }

    #[test]
    fn ipp_gaussian_moment_case() {
        let g = MatrixField::gaussian_scalar(1).unwrap();
        let r = ipp_residual(&g, &poly1("y"), &poly1("y"), &gh(1, 64)).unwrap();
        assert_relative_eq!(r.value("lhs").unwrap(), -SQRT_2PI, epsilon = 1e-10);
        assert_relative_eq!(r.value("rhs").unwrap(), -SQRT_2PI, epsilon = 1e-10);
        assert!(r.value("residual").unwrap() <= 1e-8);
        assert_eq!(r.status, Status::Pass);
        let r = ipp_residual(&g, &poly1("2"), &poly1("y^3"), &gh(1, 64)).unwrap();
        assert_eq!(r.value("lhs").unwrap(), 0.0);
        assert_eq!(r.value("rhs").unwrap(), 0.0);
    }

    #[test]
    fn ipp_sign_of_l_is_forced() {
        // With the opposite drift sign the two sides differ by 2∫y² e^{-y²/2} ≠ 0.
        let g = MatrixField::gaussian_scalar(1).unwrap();
        let r = ipp_residual(&g, &poly1("y"), &poly1("y"), &gh(1, 64)).unwrap();
        let flipped_lhs = -r.value("lhs").unwrap();
        assert!((flipped_lhs - r.value("rhs").unwrap()).abs() > 1.0);
    }

    #[test]
    fn bochner_gaussian_cases() {
        let g = MatrixField::gaussian_scalar(1).unwrap();
        let rule = gh(1, 64);
        let r = bochner_residual(&g, &poly1("y"), &rule).unwrap();
        assert_relative_eq!(r.value("lhs").unwrap(), SQRT_2PI, epsilon = 1e-8);
        assert_relative_eq!(r.value("term_curv").unwrap(), SQRT_2PI, epsilon = 1e-8);
        assert_eq!(r.value("term_hess").unwrap(), 0.0);
        assert!(r.value("residual").unwrap() <= 1e-8);

        let r = bochner_residual(&g, &poly1("y^2"), &rule).unwrap();
        assert_relative_eq!(r.value("lhs").unwrap(), 8.0 * SQRT_2PI, epsilon = 1e-6);
        assert_relative_eq!(r.value("term_curv").unwrap(), 4.0 * SQRT_2PI, epsilon = 1e-6);
        assert_relative_eq!(r.value("term_hess").unwrap(), 4.0 * SQRT_2PI, epsilon = 1e-6);
        assert!(r.value("residual").unwrap() <= 1e-6);
        assert_eq!(r.status, Status::Pass);

        let r = bochner_residual(&g, &poly1("-1.5"), &rule).unwrap();
        assert_eq!(r.value("lhs").unwrap() + r.value("term_curv").unwrap() + r.value("term_hess").unwrap(), 0.0);
    }

    #[test]
    fn bochner_matrix_weight() {
        let field = MatrixField::gaussian_outer(2, 0.25, 1.0).unwrap();
        let psi = PolyVectorField::parse(2, "y1*y2 + y1^2; y2^3 - y1").unwrap();
        let r = bochner_residual(&field, &psi, &gh(2, 32)).unwrap();
        assert!(r.value("residual").unwrap() <= 1e-8 * r.value("lhs").unwrap(), "{r:?}");
    }

    #[test]
    fn marginal_examples() {
        let rule = gh(1, 64);
        let cm = marginal_theta_fd(&MatrixField::gaussian_scalar(2).unwrap(), &[0.4], &rule, 1e-3).unwrap();
        assert_relative_eq!(nakano_verdict_with_tol(&cm, 0.0).lambda_max, -1.0, epsilon = 1e-6);

        let a = SpdMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        let cm = marginal_theta_fd(&MatrixField::gaussian_times_spd(2, &a).unwrap(), &[0.2], &rule, 1e-3).unwrap();
        assert_relative_eq!(nakano_verdict_with_tol(&cm, 0.0).lambda_max, -2.0, epsilon = 1e-6);

        let cm = marginal_theta_fd(&MatrixField::constant(2, &a).unwrap(), &[0.0], &QuadratureRule::uniform_grid(vec![(0.0, 1.0)], 5).unwrap(), 1e-3).unwrap();
        assert!(cm.theta_tilde().norm() < 1e-9);
    }

    #[test]
    fn marginal_of_outer_fixture_matches_closed_form() {
        // α(t) = √π e^{−t²}(I + ε diag(t², 1/2)), Θ^α(0) = diag(−2 + 2ε, −2)
        let eps = 0.25;
        let field = MatrixField::gaussian_outer(2, eps, 1.0).unwrap();
        let rule = gh(1, 64);
        let cm = marginal_theta_fd(&field, &[0.0], &rule, 1e-3).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0 + 2.0 * eps, -2.0]));
        assert_relative_eq!(cm.theta(0, 0), expected, epsilon = 1e-7);
        let alpha = std::f64::consts::PI.sqrt() * (1.0 + eps * 0.5);
        assert_relative_eq!(cm.g().matrix()[(1, 1)], alpha, epsilon = 1e-12);
    }

    #[test]
    fn route_b_separable_and_constant() {
        let rule = gh(1, 64);
        let v0 = ColumnBlockMatrix::from_flat(1, 1, &[0.7]).unwrap();
        let g = MatrixField::gaussian_scalar(2).unwrap();
        let b = theta_alpha_decomposed(&g, &[0.3], &v0, &rule).unwrap();
        assert!(b.term_var.abs() < 1e-12);
        let alpha = SQRT_2PI * (-0.045f64).exp();
        assert_relative_eq!(b.total, -alpha * 0.49, epsilon = 1e-10);

        let c = MatrixField::constant(2, &SpdMatrix::identity(1)).unwrap();
        let grid = QuadratureRule::uniform_grid(vec![(0.0, 1.0)], 5).unwrap();
        assert_eq!(theta_alpha_decomposed(&c, &[0.0], &v0, &grid).unwrap().total, 0.0);
    }

    #[test]
    fn prekopa_examples() {
        let rule = gh(1, 64);
        let a = SpdMatrix::from_diagonal(&[1.0, 2.0]).unwrap();
        let r = prekopa_check(&MatrixField::gaussian_times_spd(2, &a).unwrap(), &[0.1], 1, &rule, &Default::default()).unwrap();
        assert_eq!(r.status, Status::Pass, "{r:?}");
        assert_relative_eq!(r.value("lambda_max_alpha").unwrap(), -2.0, epsilon = 1e-6);

        let r = prekopa_check(&MatrixField::gaussian_scalar(2).unwrap(), &[0.0], 1, &rule, &Default::default()).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert_relative_eq!(r.value("lambda_max_alpha").unwrap(), -1.0, epsilon = 1e-6);

        let bad = MatrixField::gaussian_outer(2, 1.5, 1.0).unwrap();
        let r = prekopa_check(&bad, &[0.0], 1, &gh(1, 32), &Default::default()).unwrap();
        assert_eq!(r.status, Status::Degenerate);
        assert!(!r.metrics.contains_key("route_diff"));
    }

    #[test]
    fn prekopa_non_separable_fixture() {
        let field = MatrixField::gaussian_outer(2, 0.25, 1.0).unwrap();
        let r = prekopa_check(&field, &[0.3], 1, &gh(1, 64), &Default::default()).unwrap();
        assert_eq!(r.status, Status::Pass, "{r:?}");
        assert!(r.value("route_diff").unwrap() <= 1e-4);
        assert!(r.value("schur_margin").unwrap() >= -1e-8);
        assert!(r.value("local_prekopa_slack").unwrap() >= -1e-4);
        assert!(r.value("grad_f_residual").unwrap() <= 1e-5);
    }

    #[test]
    fn marginal_argument_checks() {
        let g = MatrixField::gaussian_scalar(2).unwrap();
        assert!(marginal_theta_fd(&g, &[0.0, 0.0], &gh(1, 8), 1e-3).is_err());
        assert!(marginal_theta_fd(&g, &[0.0], &gh(2, 8), 1e-3).is_err());
        assert!(prekopa_check(&g, &[0.0], 2, &gh(1, 8), &Default::default()).is_err());
    }

    #[test]
    fn report_settles_from_bounds() {
        let mut r = CheckReport::new("x");
        r.metric("a", 1.0).bound("a", Bound::AtMost(2.0));
        assert_eq!(r.clone().settle().status, Status::Pass);
        r.bound("a", Bound::AtLeast(1.5));
        assert_eq!(r.clone().settle().status, Status::Fail);
        r.metric("a", ExtendedReal::Infinite);
        assert_eq!(r.clone().settle().status, Status::Pass);
        r.metric("a", ExtendedReal::NegInfinite);
        assert_eq!(r.settle().status, Status::Fail);
    }
}
