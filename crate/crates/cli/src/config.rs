//! `RunConfig`: the JSON description of one certification run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use mlcc_core::fields::JetMode;
use mlcc_core::quadrature::Truncated;
use mlcc_core::{builtin_field, Error, MatrixField, PolyVectorField, QuadratureRule, Result, RuleKind, VectorFieldFn};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    /// Builtin field name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    /// Inline polynomial field document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polynomial: Option<serde_json::Value>,
    /// Path to a polynomial field document.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Multiply by `exp(−envelope·|x|²)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<f64>,
}

impl FieldSpec {
    pub fn build(&self) -> Result<MatrixField> {
        self.build_with(&self.params)
    }

    /// Builds the field with `params` in place of the configured ones.
    pub fn build_with(&self, params: &BTreeMap<String, f64>) -> Result<MatrixField> {
        let field = match (&self.builtin, &self.polynomial, &self.path) {
            (Some(name), None, None) => builtin_field(name, params)?,
            (None, Some(doc), None) if params.is_empty() => MatrixField::from_polynomial_json(&doc.to_string())?,
            (None, None, Some(path)) if params.is_empty() => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Input(format!("cannot read field file {}: {e}", path.display())))?;
                MatrixField::from_polynomial_json(&text)?
            }
            (None, None, None) => return Err(Error::Input("no field given".into())),
            (_, _, _) if !params.is_empty() && self.builtin.is_none() => {
                return Err(Error::Input("parameters apply only to builtin fields".into()))
            }
            _ => return Err(Error::Input("give exactly one of builtin, polynomial, path".into())),
        };
        match self.envelope {
            Some(rate) => field.with_gaussian_envelope(rate),
            None => Ok(field),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JetKind {
    Exact,
    Fd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JetSpec {
    pub mode: JetKind,
    #[serde(default = "default_fd_step")]
    pub h: f64,
    #[serde(default = "default_true")]
    pub richardson: bool,
}

fn default_fd_step() -> f64 {
    mlcc_core::fields::DEFAULT_FD_STEP
}

fn default_true() -> bool {
    true
}

impl Default for JetSpec {
    fn default() -> Self {
        JetSpec { mode: JetKind::Exact, h: default_fd_step(), richardson: true }
    }
}

impl JetSpec {
    pub fn mode(&self) -> Result<JetMode> {
        match self.mode {
            JetKind::Exact => Ok(JetMode::Exact),
            JetKind::Fd if self.h > 0.0 && self.h.is_finite() => {
                Ok(JetMode::FiniteDifference { step: self.h, richardson: self.richardson })
            }
            JetKind::Fd => Err(Error::Input(format!("finite-difference step must be positive, got {}", self.h))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    GaussHermite,
    UniformGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub kind: RuleName,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Per-axis bounds; a single pair applies to every axis.
    #[serde(default, rename = "box", skip_serializing_if = "Vec::is_empty")]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
}

fn default_order() -> usize {
    mlcc_core::quadrature::DEFAULT_ORDER
}

fn default_scale() -> f64 {
    1.0
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            kind: RuleName::GaussHermite,
            order: default_order(),
            center: 0.0,
            scale: 1.0,
            bounds: Vec::new(),
            resolution: None,
        }
    }
}

impl QuadratureSpec {
    pub fn build(&self, m: usize) -> Result<QuadratureRule> {
        let kind = match self.kind {
            RuleName::GaussHermite => RuleKind::GaussHermite { order: self.order, center: self.center, scale: self.scale },
            RuleName::UniformGrid => {
                if self.bounds.is_empty() {
                    return Err(Error::Input("uniform_grid needs a box".into()));
                }
                let resolution = self.resolution.ok_or_else(|| Error::Input("uniform_grid needs a resolution".into()))?;
                RuleKind::UniformGrid { bounds: self.bounds.iter().map(|b| (b[0], b[1])).collect(), resolution }
            }
        };
        QuadratureRule::build(&kind, m)
    }
}

/// One check and its options. Points are in field coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum CheckSpec {
    Nakano {
        point: Vec<f64>,
    },
    Griffiths {
        point: Vec<f64>,
        #[serde(default = "default_starts")]
        starts: usize,
    },
    Scan {
        param: String,
        from: f64,
        to: f64,
        step: f64,
        point: Vec<f64>,
    },
    Schur {
        point: Vec<f64>,
        #[serde(default = "default_n0")]
        n0: usize,
        /// Fixed `V₀`, column-major `d × n₀`; random samples when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v0: Option<Vec<f64>>,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    Bl {
        test_fn: String,
    },
    Prekopa {
        t: Vec<f64>,
        #[serde(default = "default_marginal_step")]
        h: f64,
        #[serde(default = "default_samples")]
        samples: usize,
    },
    Bochner {
        test_fn: String,
    },
    Ipp {
        test_fn: String,
        test_fn2: String,
    },
}

fn default_starts() -> usize {
    32
}

fn default_n0() -> usize {
    1
}

fn default_samples() -> usize {
    20
}

fn default_marginal_step() -> f64 {
    mlcc_core::inequalities::DEFAULT_MARGINAL_STEP
}

impl CheckSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CheckSpec::Nakano { .. } => "nakano",
            CheckSpec::Griffiths { .. } => "griffiths",
            CheckSpec::Scan { .. } => "scan",
            CheckSpec::Schur { .. } => "schur",
            CheckSpec::Bl { .. } => "bl",
            CheckSpec::Prekopa { .. } => "prekopa",
            CheckSpec::Bochner { .. } => "bochner",
            CheckSpec::Ipp { .. } => "ipp",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// JSON report path; stdout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// Scan CSV path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub timestamp: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub field: FieldSpec,
    #[serde(default)]
    pub jet: JetSpec,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_parallel() -> usize {
    1
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Input(format!("run config: {e}")))
    }

    /// Builds the configured field with the configured jet mode.
    /// Builds the field; a parameter swept by a scan check defaults to the start of its range.
    pub fn field(&self) -> Result<MatrixField> {
        let mut params = self.field.params.clone();
        for check in &self.checks {
            if let CheckSpec::Scan { param, from, .. } = check {
                params.entry(param.clone()).or_insert(*from);
            }
        }
        Ok(self.field.build_with(&params)?.with_jet_mode(self.jet.mode()?))
    }

    /// Structural validation against the built field.
    pub fn validate(&self, field: &MatrixField) -> Result<()> {
        if self.checks.is_empty() {
            return Err(Error::Input("no checks configured".into()));
        }
        if self.parallel == 0 {
            return Err(Error::Input("parallel must be at least 1".into()));
        }
        let n = field.n();
        let check_point = |p: &[f64]| {
            if p.len() != n {
                return Err(Error::Input(format!("point has {} coordinates, field has n = {n}", p.len())));
            }
            Ok(())
        };
        for check in &self.checks {
            match check {
                CheckSpec::Nakano { point } | CheckSpec::Griffiths { point, .. } | CheckSpec::Scan { point, .. } => {
                    check_point(point)?
                }
                CheckSpec::Schur { point, n0, v0, samples } => {
                    check_point(point)?;
                    if *n0 == 0 || *n0 >= n {
                        return Err(Error::Input(format!("schur needs 1 <= n0 < n = {n}, got {n0}")));
                    }
                    if let Some(v) = v0 {
                        if v.len() != field.d() * n0 {
                            return Err(Error::Input(format!("v0 needs d*n0 = {} entries", field.d() * n0)));
                        }
                    } else if *samples == 0 {
                        return Err(Error::Input("schur needs v0 or samples > 0".into()));
                    }
                }
                CheckSpec::Prekopa { t, .. } => {
                    if n < 2 || t.is_empty() || t.len() >= n {
                        return Err(Error::Input(format!("prekopa needs n >= 2 and 1 <= len(t) < n, got n = {n}, len(t) = {}", t.len())));
                    }
                }
                CheckSpec::Bl { test_fn } | CheckSpec::Bochner { test_fn } => {
                    parse_test_fn(test_fn, n)?;
                }
                CheckSpec::Ipp { test_fn, test_fn2 } => {
                    parse_test_fn(test_fn, n)?;
                    parse_test_fn(test_fn2, n)?;
                }
            }
        }
        Ok(())
    }
}

/// `poly:<expr>[;<expr>…]` or `trunc:<radius>:<expr>[;…]` (cut off outside the cube).
pub fn parse_test_fn(text: &str, m: usize) -> Result<Box<dyn VectorFieldFn>> {
    if let Some(body) = text.strip_prefix("poly:") {
        return Ok(Box::new(PolyVectorField::parse(m, body)?));
    }
    if let Some(rest) = text.strip_prefix("trunc:") {
        let (radius, body) =
            rest.split_once(':').ok_or_else(|| Error::Input(format!("test function '{text}': expected trunc:<radius>:<expr>")))?;
        let radius: f64 = radius.parse().map_err(|_| Error::Input(format!("bad cutoff radius '{radius}'")))?;
        return Ok(Box::new(Truncated::new(PolyVectorField::parse(m, body)?, radius)?));
    }
    Err(Error::Input(format!("test function '{text}' must start with poly: or trunc:")))
}
