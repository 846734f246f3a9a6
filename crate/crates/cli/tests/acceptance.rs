//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mlcc_cli::config::RunConfig;
use mlcc_core::curvature::{block_split, nakano_verdict, schur_gap, seeded_blocks};
use mlcc_core::inequalities::{bl_gap_with, PrekopaOptions};
use mlcc_core::metric::DEFAULT_REL_NULL_TOL;
use mlcc_core::quadrature::CurvatureSamples;
use mlcc_core::{
    bl_gap, bochner_residual, curvature_matrix, ipp_residual, prekopa_check, ColumnBlockMatrix, ExtendedReal, JetMode,
    MatrixField, PolarForm, PolyVectorField, QuadraticFormSpec, QuadratureRule, SpdMatrix,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gh(m: usize, order: usize) -> QuadratureRule {
    QuadratureRule::gauss_hermite(m, order, 0.0, 1.0).expect("valid rule")
}

fn spd(rows: &[f64], dim: usize) -> SpdMatrix {
    SpdMatrix::new(DMatrix::from_row_slice(dim, dim, rows)).expect("SPD fixture")
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn raufi_spectrum() -> Outcome {
    let fd = JetMode::FiniteDifference { step: 1e-4, richardson: true };
    let (mut worst_exact, mut worst_fd, mut worst_printed) = (0.0f64, 0.0f64, 0.0f64);
    for s in [0.0, 0.5, 0.75, 1.0] {
        let expected = sorted(vec![-3.0, -1.0, -1.0 - 2.0 * s, 1.0 - 2.0 * s]);
        let field = MatrixField::raufi_corrected(s).map_err(err)?;
        let exact = curvature_matrix(&field, &[0.0, 0.0]).map_err(err)?.generalized_spectrum();
        let approx = curvature_matrix(&field.with_jet_mode(fd), &[0.0, 0.0]).map_err(err)?.generalized_spectrum();
        worst_exact = worst_exact.max(max_diff(&exact, &expected));
        worst_fd = worst_fd.max(max_diff(&approx, &expected));

        let root = ((s - 1.0) * (s - 1.0) + 1.0).sqrt();
        let printed_expected = sorted(vec![-(s + 1.0) - root, -(s + 1.0) - root, -(s + 1.0) + root, -(s + 1.0) + root]);
        let printed = curvature_matrix(&MatrixField::raufi_printed(s).map_err(err)?, &[0.0, 0.0])
            .map_err(err)?
            .generalized_spectrum();
        worst_printed = worst_printed.max(max_diff(&printed, &printed_expected));
    }
    ensure(worst_exact <= 1e-9, || format!("exact spectrum off by {worst_exact:e}"))?;
    ensure(worst_fd <= 1e-5, || format!("FD spectrum off by {worst_fd:e}"))?;
    ensure(worst_printed <= 1e-9, || format!("printed-field spectrum off by {worst_printed:e}"))?;

    let cfg = RunConfig::from_json(
        r#"{"field": {"builtin": "raufi_printed", "params": {"s": 0.75}}, "checks": [{"name": "nakano", "point": [0, 0]}]}"#,
    )
    .map_err(err)?;
    let outcome = mlcc_cli::execute(&cfg).map_err(err)?;
    let discrepancy = outcome.reports[0].value("spectrum_discrepancy").unwrap_or(0.0);
    ensure(discrepancy > 0.1, || format!("report discrepancy {discrepancy}"))?;
    ensure(outcome.json.contains("raufi_corrected spectrum"), || "report lacks the corrected spectrum".into())?;
    ensure(outcome.json.contains("raufi_printed uses"), || "report lacks the field diagnostic".into())?;
    Ok(format!("exact {worst_exact:.1e}, fd {worst_fd:.1e}, printed {worst_printed:.1e}, discrepancy {discrepancy:.3}"))
}

fn nakano_threshold() -> Outcome {
    let cfg = RunConfig::from_json(
        r#"{"field": {"builtin": "raufi_corrected"},
            "checks": [{"name": "scan", "param": "s", "from": 0, "to": 1, "step": 0.05, "point": [0, 0]}],
            "output": {"csv": "unused.csv"}}"#,
    )
    .map_err(err)?;
    let outcome = mlcc_cli::execute(&cfg).map_err(err)?;
    let csv = String::from_utf8(outcome.csv.ok_or("no CSV rows")?).map_err(err)?;
    let rows: Vec<(f64, f64, bool)> = csv
        .lines()
        .skip(1)
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            (cols[0].parse().unwrap(), cols[1].parse().unwrap(), cols[2] == "nlogconcave")
        })
        .collect();
    ensure(rows.len() == 21, || format!("{} rows", rows.len()))?;
    let flips: Vec<f64> = rows.windows(2).filter(|w| w[0].2 != w[1].2).map(|w| w[1].0).collect();
    ensure(flips.len() == 1 && (flips[0] - 0.5).abs() < 1e-12, || format!("flips at {flips:?}"))?;
    let at_half = rows.iter().find(|r| (r.0 - 0.5).abs() < 1e-12).ok_or("no s = 0.5 row")?;
    ensure(at_half.1.abs() <= 1e-9, || format!("lambda_max(0.5) = {:e}", at_half.1))?;
    ensure(rows.iter().all(|r| r.2 == (r.0 >= 0.5 - 1e-12)), || "verdicts not monotone in s".into())?;
    Ok(format!("single flip at s = 0.5, lambda_max(0.5) = {:.1e}", at_half.1))
}

fn bl_gaussian() -> Outcome {
    let field = MatrixField::gaussian_scalar(1).map_err(err)?;
    let rule = gh(1, 64);
    let linear = bl_gap(&field, &PolyVectorField::parse(1, "y").map_err(err)?, &rule).map_err(err)?;
    let quadratic = bl_gap(&field, &PolyVectorField::parse(1, "y^2").map_err(err)?, &rule).map_err(err)?;
    let g1 = linear.value("gap").ok_or("no gap")?;
    let g2 = quadratic.value("gap").ok_or("no gap")?;
    let expected = 2.0 * (2.0 * PI).sqrt();
    ensure(g1.abs() <= 1e-8, || format!("F=y gap {g1:e}"))?;
    ensure((g2 - expected).abs() <= 1e-6, || format!("F=y^2 gap {g2} vs {expected}"))?;
    Ok(format!("F=y gap {g1:.1e}, F=y^2 gap error {:.1e}", (g2 - expected).abs()))
}

fn logconcave_fixtures() -> Vec<MatrixField> {
    vec![
        MatrixField::gaussian_scalar(1).unwrap(),
        MatrixField::gaussian_scalar(2).unwrap(),
        MatrixField::gaussian_times_spd(1, &spd(&[1.0, 0.0, 0.0, 2.0], 2)).unwrap(),
        MatrixField::gaussian_times_spd(2, &spd(&[2.0, 0.5, 0.5, 1.0], 2)).unwrap(),
        MatrixField::gaussian_outer(2, 0.25, 1.0).unwrap(),
    ]
}

fn bl_nonnegativity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for field in logconcave_fixtures() {
        let rule = gh(field.n(), 32);
        let samples = CurvatureSamples::new(&field, &rule, DEFAULT_REL_NULL_TOL).map_err(err)?;
        for _ in 0..50 {
            let f = PolyVectorField::random(&mut rng, field.n(), field.d(), 3);
            let report = bl_gap_with(&samples, &f).map_err(err)?;
            let gap = report.value("gap").ok_or("no gap")?;
            let rhs = report.value("rhs").ok_or("no rhs")?;
            ensure(gap >= -1e-6 * rhs.max(1.0), || format!("{}: gap {gap:e}, rhs {rhs:e}", field.label()))?;
            worst = worst.min(gap / rhs.max(1.0));
            count += 1;
        }
    }
    Ok(format!("{count} cases, smallest scaled gap {worst:.3e}"))
}

fn prekopa_routes() -> Outcome {
    let cases: Vec<(MatrixField, Vec<f64>, usize)> = vec![
        (MatrixField::gaussian_scalar(2).unwrap(), vec![0.3], 64),
        (MatrixField::gaussian_times_spd(2, &spd(&[1.0, 0.0, 0.0, 2.0], 2)).unwrap(), vec![-0.4], 64),
        (MatrixField::gaussian_times_spd(2, &spd(&[2.0, 0.5, 0.5, 1.0], 2)).unwrap(), vec![0.1], 64),
        (MatrixField::gaussian_outer(2, 0.25, 1.0).unwrap(), vec![0.7], 64),
        (MatrixField::gaussian_outer(3, 0.2, 1.0).unwrap(), vec![0.3, -0.2], 48),
    ];
    let opts = PrekopaOptions { samples: 20, seed: 5, ..Default::default() };
    let (mut worst_route, mut worst_lambda) = (0.0f64, f64::NEG_INFINITY);
    for (field, t, order) in cases {
        let report = prekopa_check(&field, &t, t.len(), &gh(field.n() - t.len(), order), &opts).map_err(err)?;
        let route = report.value("route_diff").ok_or_else(|| format!("{}: {:?}", field.label(), report.notes))?;
        let lambda = report.value("lambda_max_alpha").ok_or("no lambda_max_alpha")?;
        ensure(route <= 1e-4, || format!("{} at {t:?}: route_diff {route:e}", field.label()))?;
        ensure(lambda <= 1e-8, || format!("{} at {t:?}: lambda_max_alpha {lambda:e}", field.label()))?;
        worst_route = worst_route.max(route);
        worst_lambda = worst_lambda.max(lambda);
    }
    Ok(format!("route_diff <= {worst_route:.1e}, lambda_max_alpha <= {worst_lambda:.3}"))
}

fn schur_inequality() -> Outcome {
    let field = MatrixField::raufi_corrected(0.75).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst = f64::INFINITY;
    for i in 0..20u64 {
        let radius = 0.05 * rng.gen::<f64>().sqrt();
        let angle = rng.gen_range(0.0..2.0 * PI);
        let x = [radius * angle.cos(), radius * angle.sin()];
        let split = block_split(&curvature_matrix(&field, &x).map_err(err)?, 1).map_err(err)?;
        for v0 in seeded_blocks(i, 2, 1, 100) {
            let gap = schur_gap(&split, &v0, DEFAULT_REL_NULL_TOL).map_err(err)?.to_f64();
            ensure(gap >= -1e-8, || format!("gap {gap:e} at {x:?}"))?;
            worst = worst.min(gap);
        }
    }
    let split = block_split(&curvature_matrix(&field, &[0.0, 0.0]).map_err(err)?, 1).map_err(err)?;
    let e1 = ColumnBlockMatrix::from_flat(2, 1, &[1.0, 0.0]).map_err(err)?;
    let at_origin = schur_gap(&split, &e1, DEFAULT_REL_NULL_TOL).map_err(err)?.to_f64();
    ensure((at_origin - (1.5 - 2.0 / 3.0)).abs() <= 1e-9, || format!("value at the origin {at_origin}"))?;
    Ok(format!("2000 pairs, smallest gap {worst:.3e}; value at the origin {at_origin:.12}"))
}

fn bochner_and_ipp() -> Outcome {
    let field = MatrixField::gaussian_scalar(1).map_err(err)?;
    let rule = gh(1, 64);
    let root = (2.0 * PI).sqrt();
    let cases = [("y", root, root, 0.0, -root), ("y^2", 8.0 * root, 4.0 * root, 4.0 * root, -4.0 * root)];
    let mut worst = 0.0f64;
    for (expr, lhs, curv, hess, ipp) in cases {
        let psi = PolyVectorField::parse(1, expr).map_err(err)?;
        let b = bochner_residual(&field, &psi, &rule).map_err(err)?;
        let i = ipp_residual(&field, &psi, &psi, &rule).map_err(err)?;
        let errors = [
            (b.value("lhs").unwrap() - lhs).abs(),
            (b.value("term_curv").unwrap() - curv).abs(),
            (b.value("term_hess").unwrap() - hess).abs(),
            (i.value("lhs").unwrap() - ipp).abs(),
            (i.value("rhs").unwrap() - ipp).abs(),
        ];
        let e = errors.iter().cloned().fold(0.0, f64::max);
        ensure(e <= 1e-6, || format!("Psi={expr}: errors {errors:?}"))?;
        worst = worst.max(e);
    }

    let psi = PolyVectorField::parse(1, "y^2 + 0.5*y^3").map_err(err)?;
    let rule = gh(1, 32);
    let mut residuals = Vec::new();
    for h in [0.02, 0.01, 0.005] {
        let fd = field.clone().with_jet_mode(JetMode::FiniteDifference { step: h, richardson: false });
        residuals.push(bochner_residual(&fd, &psi, &rule).map_err(err)?.value("residual").unwrap());
    }
    let ratios: Vec<f64> = residuals.windows(2).map(|w| w[0] / w[1]).collect();
    ensure(ratios.iter().all(|r| (3.5..=4.5).contains(r)), || format!("ratios {ratios:?} from {residuals:?}"))?;
    Ok(format!("closed forms within {worst:.1e}; halving ratios {:.3}, {:.3}", ratios[0], ratios[1]))
}

fn conjugation_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cases = [
        (MatrixField::raufi_corrected(0.25).unwrap(), vec![0.0, 0.0]),
        (MatrixField::raufi_corrected(0.75).unwrap(), vec![0.02, -0.01]),
        (MatrixField::gaussian_outer(2, 0.25, 1.0).unwrap(), vec![0.4, -0.3]),
        (MatrixField::gaussian_outer(2, 1.5, 1.0).unwrap(), vec![0.0, 0.0]),
    ];
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let p = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        for (field, x) in &cases {
            let a = nakano_verdict(&curvature_matrix(field, x).map_err(err)?);
            let b = nakano_verdict(&curvature_matrix(&field.conjugate(&p).map_err(err)?, x).map_err(err)?);
            ensure(a.is_nlogconcave == b.is_nlogconcave, || format!("{}: verdict changed", field.label()))?;
            let diff = (a.lambda_max - b.lambda_max).abs();
            ensure(diff <= 1e-9, || format!("{}: lambda_max differs by {diff:e}", field.label()))?;
            worst = worst.max(diff);
        }
    }
    Ok(format!("10 rotations x 4 fields, lambda_max drift {worst:.1e}"))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// `sup_u 2⟨u,v⟩_M − uᵀCu` via the stationarity system `Cu = Mv`.
fn legendre(metric: &DMatrix<f64>, form: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let eig = SymmetricEigen::new(form.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let rhs = metric * v;
    let mut u = DVector::zeros(v.len());
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 1e-12 * top {
            let q = eig.eigenvectors.column(i);
            u += q * (q.dot(&rhs) / lam);
        }
    }
    2.0 * u.dot(&rhs) - u.dot(&(form * &u))
}

fn legendre_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let dim = 1 + case % 8;
        let a = random_matrix(&mut rng, dim, dim);
        let metric = SpdMatrix::new(&a * a.transpose() + DMatrix::identity(dim, dim) * 0.5).map_err(err)?;
        let rank = rng.gen_range(1..=dim);
        let b = random_matrix(&mut rng, dim, rank);
        let form = &b * b.transpose();
        let z = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        let v = metric.solve_vec(&(&form * z));
        let spec = QuadraticFormSpec::new(metric.clone(), form.clone()).map_err(err)?;
        let polar = PolarForm::new(&spec, DEFAULT_REL_NULL_TOL).map_err(err)?;
        let got = polar.value(&v).map_err(err)?.to_f64();
        let oracle = legendre(metric.matrix(), &form, &v);
        let rel = (got - oracle).abs() / oracle.abs().max(1e-300);
        ensure(rel <= 0.01, || format!("case {case} (dim {dim}, rank {rank}): {got} vs {oracle}"))?;
        worst = worst.max(rel);
        if rank < dim {
            let eig = SymmetricEigen::new(form.clone());
            let kernel = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
            let off = metric.solve_vec(&kernel) + &v;
            ensure(polar.value(&off).map_err(err)? == ExtendedReal::Infinite, || format!("case {case}: finite off range"))?;
        }
    }
    Ok(format!("50 pairs, worst relative error {worst:.1e}"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run_cli(args: &[&str], seed: Option<&str>) -> Result<(i32, Vec<u8>), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mlcc"));
    cmd.args(args).env_remove("MLCC_SEED");
    if let Some(seed) = seed {
        cmd.env("MLCC_SEED", seed);
    }
    let out = cmd.output().map_err(err)?;
    Ok((out.status.code().ok_or("terminated by signal")?, out.stdout))
}

fn cli_contract() -> Outcome {
    for (name, expected) in [("pass.json", 0), ("fail.json", 1), ("input_error.json", 2), ("degenerate.json", 3)] {
        let path = fixture(name);
        let (code, _) = run_cli(&["report", path.to_str().unwrap(), "--no-timestamp"], None)?;
        ensure(code == expected, || format!("{name}: exit {code}, expected {expected}"))?;
    }
    let (code, _) = run_cli(&["nakano", "--field", "raufi_corrected", "--point", "0,0"], None)?;
    ensure(code == 2, || format!("missing parameter: exit {code}"))?;

    let path = fixture("deterministic.json");
    let args = ["report", path.to_str().unwrap(), "--no-timestamp"];
    let (c1, first) = run_cli(&args, None)?;
    let (c2, second) = run_cli(&args, None)?;
    ensure(c1 == 0 && c2 == 0, || format!("exit codes {c1}, {c2}"))?;
    ensure(first == second, || "reports differ between runs".into())?;
    let (_, serial) = run_cli(&[&args[..], &["--parallel", "1"]].concat(), None)?;
    let (_, reseeded) = run_cli(&args, Some("12"))?;
    let text = |bytes: &[u8]| String::from_utf8_lossy(bytes).into_owned();
    let checks_of = |s: &str| s[s.find("\"checks\": [").unwrap()..s.find("\"config\"").unwrap()].to_string();
    ensure(checks_of(&text(&first)) == checks_of(&text(&serial)), || "parallel and serial results differ".into())?;
    ensure(text(&reseeded).contains("\"seed\": 12"), || "MLCC_SEED not applied".into())?;
    Ok(format!("exit codes 0/1/2/3 as configured; {}-byte report reproduced exactly", first.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 raufi spectrum", raufi_spectrum),
        ("2 nakano threshold", nakano_threshold),
        ("3 BL gaussian gap", bl_gaussian),
        ("4 BL nonnegativity", bl_nonnegativity),
        ("5 prekopa two routes", prekopa_routes),
        ("6 schur inequality", schur_inequality),
        ("7 bochner and ipp", bochner_and_ipp),
        ("8 conjugation invariance", conjugation_invariance),
        ("9 polar legendre oracle", legendre_oracle),
        ("10 cli contract", cli_contract),
    ];
    let started = Instant::now();
    let mut failures = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail} ({:.2}s)", t.elapsed().as_secs_f64()),
            Ok(Err(why)) => {
                failures += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failures += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("acceptance: {} of 10 passed in {:.1}s", 10 - failures, started.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
