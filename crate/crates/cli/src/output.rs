//! JSON report and scan CSV writers. Every real number is printed with 17
//! significant digits; infinities become the strings `"inf"` / `"-inf"`.

use mlcc_core::inequalities::{Bound, CheckReport};
use mlcc_core::ExtendedReal;
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{Map, Value};
use std::io;

use crate::checks::ScanRow;

pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn real(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else if x.is_nan() {
        Value::String("nan".into())
    } else if x > 0.0 {
        Value::String("inf".into())
    } else {
        Value::String("-inf".into())
    }
}

/// Pretty printer writing floats in `{:.16e}` form.
struct RealFormatter<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for RealFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_real(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

pub fn to_json_string(value: &Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, RealFormatter(PrettyFormatter::new()));
    serde::Serialize::serialize(value, &mut ser).expect("JSON values serialize");
    String::from_utf8(buf).expect("JSON output is UTF-8")
}

fn extended(x: ExtendedReal) -> Value {
    match x {
        ExtendedReal::Finite(v) => real(v),
        ExtendedReal::Infinite => Value::String("inf".into()),
        ExtendedReal::NegInfinite => Value::String("-inf".into()),
    }
}

pub fn check_json(report: &CheckReport) -> Value {
    let metrics: Map<String, Value> = report.metrics.iter().map(|(k, v)| (k.clone(), extended(*v))).collect();
    let tolerances: Map<String, Value> = report
        .tolerances
        .iter()
        .map(|(k, b)| {
            let (key, v) = match b {
                Bound::AtMost(v) => ("max", *v),
                Bound::AtLeast(v) => ("min", *v),
            };
            (k.clone(), Value::Object(Map::from_iter([(key.to_string(), real(v))])))
        })
        .collect();
    let settings: Map<String, Value> =
        report.settings.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
    Value::Object(Map::from_iter([
        ("name".to_string(), Value::String(report.name.clone())),
        ("status".to_string(), Value::String(report.status.to_string())),
        ("metrics".to_string(), Value::Object(metrics)),
        ("tolerances".to_string(), Value::Object(tolerances)),
        ("settings".to_string(), Value::Object(settings)),
        ("notes".to_string(), Value::Array(report.notes.iter().cloned().map(Value::String).collect())),
    ]))
}

pub fn report_json(config: Value, checks: &[CheckReport], diagnostics: &[String], timestamp: Option<u64>) -> String {
    let mut root = Map::new();
    root.insert("config".into(), config);
    root.insert("checks".into(), Value::Array(checks.iter().map(check_json).collect()));
    root.insert("diagnostics".into(), Value::Array(diagnostics.iter().cloned().map(Value::String).collect()));
    if let Some(ts) = timestamp {
        root.insert("timestamp".into(), Value::Number(ts.into()));
    }
    let mut text = to_json_string(&Value::Object(root));
    text.push('\n');
    text
}

pub fn scan_csv(rows: &[ScanRow]) -> std::result::Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["param", "lambda_max", "verdict"])?;
    for row in rows {
        let verdict = if row.nlogconcave { "nlogconcave" } else { "not_nlogconcave" };
        w.write_record([fmt_real(row.param), fmt_real(row.lambda_max), verdict.to_string()])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}
