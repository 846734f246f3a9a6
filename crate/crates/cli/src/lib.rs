//! `mlcc`: runs curvature and inequality certifications and writes JSON reports.
//!
//! Exit codes: 0 all checks pass, 1 some check fails, 2 input or configuration
//! error, 3 no failures but at least one degenerate check.

pub mod checks;
pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mlcc_core::inequalities::{CheckReport, Status};
use mlcc_core::Error;
use rayon::prelude::*;

use crate::checks::{run_check, Executed};
use crate::config::{CheckSpec, FieldSpec, JetKind, JetSpec, OutputSpec, QuadratureSpec, RuleName, RunConfig};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const SEED_ENV: &str = "MLCC_SEED";

const RAUFI_NOTE: &str = "raufi_printed uses the (2,2) entry 1 - s*x1^2 - x2^2; its curvature spectrum at the origin is \
-(s+1) +/- sqrt((s-1)^2+1), each twice. raufi_corrected uses 1 - x1^2 - s*x2^2 and has spectrum {-3, -1, -1-2s, 1-2s}, \
which changes sign exactly at s = 1/2.";

#[derive(Parser, Debug)]
#[command(name = "mlcc", version, about = "Curvature and variance-inequality certification for matrix-valued weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Nakano verdict (sign of the curvature operator) at a point.
    Nakano {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long, allow_hyphen_values = true, value_name = "X1,X2,...")]
        point: String,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Largest curvature value over rank-one directions at a point.
    Griffiths {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long, allow_hyphen_values = true)]
        point: String,
        #[arg(long, default_value_t = 32)]
        starts: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Nakano verdict over a range of one field parameter.
    Scan {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long = "param-range", value_name = "NAME=FROM:TO:STEP", allow_hyphen_values = true)]
        param_range: String,
        #[arg(long, allow_hyphen_values = true)]
        point: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Block Schur inequality for the split after the first n0 variables.
    Schur {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long, allow_hyphen_values = true)]
        point: String,
        #[arg(long, default_value_t = 1)]
        n0: usize,
        /// Fixed V0, column-major d x n0; random directions when absent.
        #[arg(long, allow_hyphen_values = true)]
        v0: Option<String>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Brascamp-Lieb variance gap for a test function.
    Bl {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long = "test-fn", allow_hyphen_values = true)]
        test_fn: String,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Log-concavity of the marginal over the trailing variables, by two routes.
    Prekopa {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        rule: RuleArgs,
        /// Retained coordinates t (their count is n0).
        #[arg(long, allow_hyphen_values = true)]
        t: String,
        #[arg(long)]
        n0: Option<usize>,
        /// Finite-difference step on the marginal.
        #[arg(long, default_value_t = mlcc_core::inequalities::DEFAULT_MARGINAL_STEP)]
        h: f64,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Bochner identity residual for a test function.
    Bochner {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long = "test-fn", allow_hyphen_values = true)]
        test_fn: String,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Integration-by-parts residual for the weighted Laplacian.
    Ipp {
        #[command(flatten)]
        field: FieldArgs,
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long = "test-fn", allow_hyphen_values = true)]
        test_fn: String,
        #[arg(long = "test-fn2", allow_hyphen_values = true)]
        test_fn2: String,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Runs every check of a JSON run configuration.
    Report {
        config: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum JetArg {
    Exact,
    Fd,
}

#[derive(Args, Debug)]
struct FieldArgs {
    /// Builtin field name, or a path to a polynomial field JSON file.
    #[arg(long)]
    field: String,
    #[arg(long = "param", value_name = "NAME=VALUE", allow_hyphen_values = true)]
    params: Vec<String>,
    /// Number of variables of the builtin field.
    #[arg(long)]
    dim: Option<usize>,
    /// Multiply the field by exp(-RATE*|x|^2).
    #[arg(long, value_name = "RATE")]
    envelope: Option<f64>,
    #[arg(long, value_enum, default_value_t = JetArg::Exact)]
    jet: JetArg,
    #[arg(long = "fd-step")]
    fd_step: Option<f64>,
    #[arg(long = "no-richardson")]
    no_richardson: bool,
}

#[derive(Args, Debug)]
struct RuleArgs {
    /// Gauss-Hermite order per axis.
    #[arg(long, default_value_t = mlcc_core::quadrature::DEFAULT_ORDER)]
    order: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    center: f64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Uniform grid box, LO:HI per axis separated by commas (one pair applies to all axes).
    #[arg(long = "box", allow_hyphen_values = true)]
    bounds: Option<String>,
    /// Uniform grid points per axis.
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "no-timestamp")]
    no_timestamp: bool,
    /// Run up to N checks concurrently.
    #[arg(long, value_name = "N")]
    parallel: Option<usize>,
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::Input(format!("{what}: '{p}' is not a number"))))
        .collect()
}

fn parse_pair(text: &str) -> Result<(String, &str), Error> {
    match text.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim())),
        _ => Err(Error::Input(format!("expected NAME=VALUE, got '{text}'"))),
    }
}

impl FieldArgs {
    fn spec(&self) -> Result<(FieldSpec, JetSpec), Error> {
        let mut params = BTreeMap::new();
        for p in &self.params {
            let (k, v) = parse_pair(p)?;
            let v: f64 = v.parse().map_err(|_| Error::Input(format!("parameter {k}: '{v}' is not a number")))?;
            params.insert(k, v);
        }
        let builtin = mlcc_core::BUILTIN_NAMES.contains(&self.field.as_str());
        if let Some(dim) = self.dim {
            let key = match self.field.as_str() {
                "gaussian_scalar" | "gaussian_times_spd" | "constant" => "n",
                "gaussian_outer" => "d",
                other => return Err(Error::Input(format!("--dim does not apply to field '{other}'"))),
            };
            params.insert(key.to_string(), dim as f64);
        }
        let field = FieldSpec {
            builtin: builtin.then(|| self.field.clone()),
            path: (!builtin).then(|| PathBuf::from(&self.field)),
            params,
            polynomial: None,
            envelope: self.envelope,
        };
        let jet = JetSpec {
            mode: match self.jet {
                JetArg::Exact => JetKind::Exact,
                JetArg::Fd => JetKind::Fd,
            },
            h: self.fd_step.unwrap_or(mlcc_core::fields::DEFAULT_FD_STEP),
            richardson: !self.no_richardson,
        };
        Ok((field, jet))
    }
}

impl RuleArgs {
    fn spec(&self) -> Result<QuadratureSpec, Error> {
        let mut spec = QuadratureSpec { order: self.order, center: self.center, scale: self.scale, ..Default::default() };
        if let Some(bounds) = &self.bounds {
            spec.kind = RuleName::UniformGrid;
            spec.bounds = bounds
                .split(',')
                .map(|pair| {
                    let (lo, hi) = pair.split_once(':').ok_or_else(|| Error::Input(format!("box axis '{pair}' is not LO:HI")))?;
                    let lo = lo.trim().parse().map_err(|_| Error::Input(format!("box bound '{lo}'")))?;
                    let hi = hi.trim().parse().map_err(|_| Error::Input(format!("box bound '{hi}'")))?;
                    Ok([lo, hi])
                })
                .collect::<Result<_, Error>>()?;
            spec.resolution = Some(self.resolution.ok_or_else(|| Error::Input("--box needs --resolution".into()))?);
        } else if self.resolution.is_some() {
            return Err(Error::Input("--resolution needs --box".into()));
        }
        Ok(spec)
    }
}

impl OutputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.out.is_some() {
            cfg.output.report = self.out.clone();
        }
        if self.no_timestamp {
            cfg.output.timestamp = false;
        }
        if let Some(n) = self.parallel {
            cfg.parallel = n;
        }
    }
}

fn single(field: &FieldArgs, rule: Option<&RuleArgs>, check: CheckSpec, out: &OutputArgs) -> Result<RunConfig, Error> {
    let (field, jet) = field.spec()?;
    let mut cfg = RunConfig {
        field,
        jet,
        quadrature: rule.map(RuleArgs::spec).transpose()?.unwrap_or_default(),
        checks: vec![check],
        seed: 0,
        parallel: 1,
        output: OutputSpec { report: None, csv: None, timestamp: true },
    };
    out.apply(&mut cfg);
    Ok(cfg)
}

fn into_config(cmd: Command) -> Result<RunConfig, Error> {
    match cmd {
        Command::Nakano { field, point, out } => {
            single(&field, None, CheckSpec::Nakano { point: parse_list(&point, "point")? }, &out)
        }
        Command::Griffiths { field, point, starts, out } => {
            single(&field, None, CheckSpec::Griffiths { point: parse_list(&point, "point")?, starts }, &out)
        }
        Command::Scan { field, param_range, point, csv, out } => {
            let (param, range) = parse_pair(&param_range)?;
            let parts: Vec<&str> = range.split(':').collect();
            let [from, to, step] = parts.as_slice() else {
                return Err(Error::Input(format!("param range '{param_range}' is not NAME=FROM:TO:STEP")));
            };
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Input(format!("param range: '{s}' is not a number")));
            let from = num(from)?;
            let check = CheckSpec::Scan { param, from, to: num(to)?, step: num(step)?, point: parse_list(&point, "point")? };
            let mut cfg = single(&field, None, check, &out)?;
            cfg.output.csv = csv;
            Ok(cfg)
        }
        Command::Schur { field, point, n0, v0, samples, out } => {
            let v0 = v0.map(|v| parse_list(&v, "v0")).transpose()?;
            single(&field, None, CheckSpec::Schur { point: parse_list(&point, "point")?, n0, v0, samples }, &out)
        }
        Command::Bl { field, rule, test_fn, out } => single(&field, Some(&rule), CheckSpec::Bl { test_fn }, &out),
        Command::Prekopa { field, rule, t, n0, h, samples, out } => {
            let t = parse_list(&t, "t")?;
            if n0.is_some_and(|n0| n0 != t.len()) {
                return Err(Error::Input(format!("--n0 {} does not match the {} coordinates of --t", n0.unwrap_or(0), t.len())));
            }
            single(&field, Some(&rule), CheckSpec::Prekopa { t, h, samples }, &out)
        }
        Command::Bochner { field, rule, test_fn, out } => single(&field, Some(&rule), CheckSpec::Bochner { test_fn }, &out),
        Command::Ipp { field, rule, test_fn, test_fn2, out } => {
            single(&field, Some(&rule), CheckSpec::Ipp { test_fn, test_fn2 }, &out)
        }
        Command::Report { config, out } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| Error::Input(format!("cannot read {}: {e}", config.display())))?;
            let mut cfg = RunConfig::from_json(&text)?;
            out.apply(&mut cfg);
            Ok(cfg)
        }
    }
}

/// Result of a full run: the JSON text plus the process exit code.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub json: String,
    pub csv: Option<Vec<u8>>,
    pub exit_code: i32,
    pub reports: Vec<CheckReport>,
}

fn settle_error(check: &CheckSpec, err: Error) -> Result<Executed, Error> {
    match err {
        Error::Input(_) | Error::Budget { .. } => Err(err),
        Error::NotPsd { .. } => Ok(CheckReport::new(check.name()).degenerate(format!("hypothesis not met: {err}")).into()),
        other => {
            let mut r = CheckReport::new(check.name());
            r.status = Status::Fail;
            r.note(other.to_string());
            Ok(r.into())
        }
    }
}

/// Runs every check of `cfg`; `Err` only for input or configuration problems.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, Error> {
    let field = cfg.field()?;
    cfg.validate(&field)?;
    let run_one = |check: &CheckSpec| run_check(cfg, &field, check).or_else(|e| settle_error(check, e));
    let executed: Vec<Executed> = if cfg.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel)
            .build()
            .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
        pool.install(|| cfg.checks.par_iter().map(run_one).collect::<Result<_, _>>())?
    } else {
        cfg.checks.iter().map(run_one).collect::<Result<_, _>>()?
    };

    let mut diagnostics = Vec::new();
    if cfg.field.builtin.as_deref() == Some("raufi_printed") {
        diagnostics.push(RAUFI_NOTE.to_string());
    }
    let reports: Vec<CheckReport> = executed.iter().map(|e| e.report.clone()).collect();
    for r in &reports {
        for note in &r.notes {
            diagnostics.push(format!("{}: {note}", r.name));
        }
    }
    let timestamp = cfg
        .output
        .timestamp
        .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
    let config_value = serde_json::to_value(cfg).map_err(|e| Error::Input(format!("config echo: {e}")))?;
    let json = output::report_json(config_value, &reports, &diagnostics, timestamp);
    let rows: Vec<_> = executed.iter().flat_map(|e| e.scan_rows.iter().cloned()).collect();
    let csv = match cfg.output.csv {
        Some(_) => Some(output::scan_csv(&rows).map_err(|e| Error::Input(format!("csv: {e}")))?),
        None => None,
    };
    let exit_code = if reports.iter().any(|r| r.status == Status::Fail) {
        EXIT_FAIL
    } else if reports.iter().any(|r| r.status == Status::Degenerate) {
        EXIT_DEGENERATE
    } else {
        EXIT_PASS
    };
    Ok(Outcome { json, csv, exit_code, reports })
}

fn write_outputs(cfg: &RunConfig, outcome: &Outcome) -> Result<(), Error> {
    match &cfg.output.report {
        Some(path) => std::fs::write(path, &outcome.json)
            .map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{}", outcome.json),
    }
    if let (Some(path), Some(bytes)) = (&cfg.output.csv, &outcome.csv) {
        std::fs::write(path, bytes).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn seed_override(cfg: &mut RunConfig) -> Result<(), Error> {
    if let Ok(text) = std::env::var(SEED_ENV) {
        cfg.seed = text.trim().parse().map_err(|_| Error::Input(format!("{SEED_ENV}='{text}' is not an unsigned integer")))?;
    }
    Ok(())
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_PASS;
            }
            let text = e.to_string();
            eprintln!("mlcc: {}", text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: "));
            return EXIT_INPUT;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let result = into_config(cli.command).and_then(|mut cfg| {
        seed_override(&mut cfg)?;
        let outcome = execute(&cfg)?;
        write_outputs(&cfg, &outcome)?;
        Ok(outcome.exit_code)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("mlcc: {}", e.to_string().replace('\n', " "));
            EXIT_INPUT
        }
    }
}
