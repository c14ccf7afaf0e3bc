//! Stable report serialization: sorted keys, floats rounded to six
//! significant digits, so reports can be compared byte-for-byte.

use serde_json::{Map, Value};

use super::EvalReport;

const SIG_DIGITS: usize = 6;

/// Rounds to `digits` significant digits (round-half-even on the exact
/// binary value, as done by the standard float formatter).
pub fn format_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x)
        .parse()
        .expect("formatter output is a valid float")
}

fn canonicalize(value: Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            let mut out = Map::new();
            for (k, v) in entries {
                out.insert(k, canonicalize(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Number(n) if n.is_f64() => {
            let x = format_sig(n.as_f64().unwrap_or_default(), SIG_DIGITS);
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        other => other,
    }
}

/// Pretty JSON (two-space indent, sorted keys, trailing newline).
pub fn report_to_json(report: &EvalReport) -> String {
    let value = serde_json::to_value(report).expect("report is always serializable");
    let mut text =
        serde_json::to_string_pretty(&canonicalize(value)).expect("value is always serializable");
    text.push('\n');
    text
}

/// Flat per-class table for charting.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "precision", "recall", "f1", "ap", "support", "tp", "fp", "fn"])
        .expect("in-memory write");
    let f = |x: f64| format_sig(x, SIG_DIGITS).to_string();
    for c in &report.per_class {
        w.write_record([
            c.label.clone(),
            f(c.precision),
            f(c.recall),
            f(c.f1),
            c.ap.map(f).unwrap_or_default(),
            c.support.to_string(),
            c.counts.tp.to_string(),
            c.counts.fp.to_string(),
            c.counts.fn_.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}
