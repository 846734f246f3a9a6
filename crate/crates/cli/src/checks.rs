//! Runs one configured check against a field.

use std::collections::BTreeMap;

use mlcc_core::curvature::{block_split, griffiths_min_gap, nakano_verdict, schur_gap_with, seeded_blocks, DEFAULT_TOL_PSD};
use mlcc_core::inequalities::{bl_gap, bochner_residual, ipp_residual, prekopa_check, Bound, CheckReport, PrekopaOptions};
use mlcc_core::{curvature_matrix, ColumnBlockMatrix, Error, ExtendedReal, GriffithsOptions, MatrixField, PolarForm, Result};

use crate::config::{parse_test_fn, CheckSpec, RunConfig};

pub const SCHUR_TOL: f64 = 1e-8;
const MAX_SCAN_POINTS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub param: f64,
    pub lambda_max: f64,
    pub nlogconcave: bool,
}

#[derive(Clone, Debug)]
pub struct Executed {
    pub report: CheckReport,
    pub scan_rows: Vec<ScanRow>,
}

impl From<CheckReport> for Executed {
    fn from(report: CheckReport) -> Self {
        Executed { report, scan_rows: Vec::new() }
    }
}

fn fmt_point(p: &[f64]) -> String {
    p.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
}

pub fn run_check(cfg: &RunConfig, field: &MatrixField, check: &CheckSpec) -> Result<Executed> {
    match check {
        CheckSpec::Nakano { point } => nakano(cfg, field, point).map(Into::into),
        CheckSpec::Griffiths { point, starts } => {
            let cm = curvature_matrix(field, point)?;
            let opts = GriffithsOptions { n_starts: *starts, seed: cfg.seed, ..Default::default() };
            let best = griffiths_min_gap(&cm, &opts)?;
            let mut r = CheckReport::new("griffiths");
            r.setting("point", fmt_point(point))
                .setting("starts", starts)
                .setting("seed", cfg.seed)
                .metric("griffiths_max", best)
                .metric("lambda_max", nakano_verdict(&cm).lambda_max)
                .bound("griffiths_max", Bound::AtMost(DEFAULT_TOL_PSD));
            Ok(r.settle().into())
        }
        CheckSpec::Scan { param, from, to, step, point } => scan(cfg, param, *from, *to, *step, point),
        CheckSpec::Schur { point, n0, v0, samples } => schur(cfg, field, point, *n0, v0.as_deref(), *samples).map(Into::into),
        CheckSpec::Bl { test_fn } => {
            let rule = cfg.quadrature.build(field.n())?;
            let f = parse_test_fn(test_fn, field.n())?;
            let mut r = bl_gap(field, f.as_ref(), &rule)?;
            r.setting("test_fn", test_fn);
            Ok(r.into())
        }
        CheckSpec::Prekopa { t, h, samples } => {
            let rule = cfg.quadrature.build(field.n() - t.len())?;
            let opts = PrekopaOptions { h: *h, samples: *samples, seed: cfg.seed, ..Default::default() };
            Ok(prekopa_check(field, t, t.len(), &rule, &opts)?.into())
        }
        CheckSpec::Bochner { test_fn } => {
            let rule = cfg.quadrature.build(field.n())?;
            let psi = parse_test_fn(test_fn, field.n())?;
            let mut r = bochner_residual(field, psi.as_ref(), &rule)?;
            r.setting("test_fn", test_fn);
            Ok(r.into())
        }
        CheckSpec::Ipp { test_fn, test_fn2 } => {
            let rule = cfg.quadrature.build(field.n())?;
            let f = parse_test_fn(test_fn, field.n())?;
            let g = parse_test_fn(test_fn2, field.n())?;
            let mut r = ipp_residual(field, f.as_ref(), g.as_ref(), &rule)?;
            r.setting("test_fn", test_fn).setting("test_fn2", test_fn2);
            Ok(r.into())
        }
    }
}

fn nakano(cfg: &RunConfig, field: &MatrixField, point: &[f64]) -> Result<CheckReport> {
    let cm = curvature_matrix(field, point)?;
    let verdict = nakano_verdict(&cm);
    let spectrum = cm.generalized_spectrum();
    let mut r = CheckReport::new("nakano");
    r.setting("point", fmt_point(point))
        .metric("lambda_max", verdict.lambda_max)
        .metric("lambda_max_standard", verdict.lambda_max_standard)
        .metric("asymmetry", cm.asymmetry())
        .bound("lambda_max", Bound::AtMost(DEFAULT_TOL_PSD));
    for (i, lambda) in spectrum.iter().enumerate() {
        r.metric(&format!("lambda_{i}"), *lambda);
    }
    let twin = match cfg.field.builtin.as_deref() {
        Some("raufi_printed") => Some("raufi_corrected"),
        Some("raufi_corrected") => Some("raufi_printed"),
        _ => None,
    };
    if let Some(twin) = twin {
        let mut spec = cfg.field.clone();
        spec.builtin = Some(twin.to_string());
        let other = spec.build()?.with_jet_mode(field.jet_mode());
        let other_spectrum = curvature_matrix(&other, point)?.generalized_spectrum();
        let discrepancy = spectrum.iter().zip(&other_spectrum).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.metric("spectrum_discrepancy", discrepancy);
        r.note(format!("{twin} spectrum at this point: [{}]", fmt_point(&other_spectrum)));
    }
    Ok(r.settle())
}

fn scan(cfg: &RunConfig, param: &str, from: f64, to: f64, step: f64, point: &[f64]) -> Result<Executed> {
    if !(step > 0.0 && from.is_finite() && to.is_finite() && to >= from) {
        return Err(Error::Input(format!("scan range {from}:{to}:{step} needs from <= to and step > 0")));
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    if count > MAX_SCAN_POINTS {
        return Err(Error::Input(format!("scan has {count} points, limit {MAX_SCAN_POINTS}")));
    }
    let jet = cfg.jet.mode()?;
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let value = from + i as f64 * step;
        let mut params: BTreeMap<String, f64> = cfg.field.params.clone();
        params.insert(param.to_string(), value);
        let field = cfg.field.build_with(&params)?.with_jet_mode(jet);
        let verdict = nakano_verdict(&curvature_matrix(&field, point)?);
        rows.push(ScanRow { param: value, lambda_max: verdict.lambda_max, nlogconcave: verdict.is_nlogconcave });
    }
    let flips: Vec<f64> = rows.windows(2).filter(|w| w[0].nlogconcave != w[1].nlogconcave).map(|w| w[1].param).collect();
    let mut r = CheckReport::new("scan");
    r.setting("param", param)
        .setting("range", format!("{from:?}:{to:?}:{step:?}"))
        .setting("point", fmt_point(point))
        .metric("points", count as f64)
        .metric("flips", flips.len() as f64);
    if let Some(first) = flips.first() {
        r.metric("threshold", *first);
    }
    Ok(Executed { report: r.settle(), scan_rows: rows })
}

fn schur(
    cfg: &RunConfig,
    field: &MatrixField,
    point: &[f64],
    n0: usize,
    v0: Option<&[f64]>,
    samples: usize,
) -> Result<CheckReport> {
    let cm = curvature_matrix(field, point)?;
    let split = block_split(&cm, n0)?;
    let q11 = PolarForm::new(&split.q11()?, mlcc_core::metric::DEFAULT_REL_NULL_TOL)?;
    let directions = match v0 {
        Some(flat) => vec![ColumnBlockMatrix::from_flat(field.d(), n0, flat)?],
        None => seeded_blocks(cfg.seed, field.d(), n0, samples),
    };
    let mut min = ExtendedReal::Infinite;
    for v in &directions {
        let gap = schur_gap_with(&split, &q11, v)?;
        if gap.to_f64() < min.to_f64() {
            min = gap;
        }
    }
    let mut r = CheckReport::new("schur");
    r.setting("point", fmt_point(point)).setting("n0", n0);
    match v0 {
        Some(flat) => r.setting("v0", fmt_point(flat)),
        None => r.setting("samples", samples).setting("seed", cfg.seed),
    };
    r.metric("schur_gap_min", min).bound("schur_gap_min", Bound::AtLeast(-SCHUR_TOL));
    Ok(r.settle())
}
