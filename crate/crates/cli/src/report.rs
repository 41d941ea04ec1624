//! Report rendering: deterministic JSON documents, CSV tables and the
//! check table printed on stdout.
//!
//! Objects serialize with sorted keys and floats in shortest round-trip
//! form, so a report is a pure function of its inputs, byte for byte.

use metastab_core::verify::Check;
use serde_json::{json, Value};
use std::fmt::Write as _;

/// JSON number; non-finite values become null so documents stay valid.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

pub fn nums(vs: &[f64]) -> Value {
    Value::Array(vs.iter().map(|&v| num(v)).collect())
}

pub fn matrix(m: &[Vec<f64>]) -> Value {
    Value::Array(m.iter().map(|row| nums(row)).collect())
}

pub fn to_pretty(value: &Value) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("report serializes");
    out.push('\n');
    out
}

/// RFC 4180 quoting, applied only when the field needs it.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn band(c: &Check) -> String {
    match (c.low.is_finite(), c.high.is_finite()) {
        (false, false) => String::new(),
        (false, true) => format!("<= {:.3e}", c.high),
        (true, false) => format!(">= {:.3e}", c.low),
        (true, true) => format!("in [{:.3e}, {:.3e}]", c.low, c.high),
    }
}

pub fn print_checks(checks: &[Check]) {
    for c in checks {
        let band = band(c);
        let status = if band.is_empty() {
            "info"
        } else if c.pass {
            "pass"
        } else {
            "FAIL"
        };
        println!("  {:<44} {:>13.6e}  {:<24} {}", c.name, c.observed, band, status);
    }
}

pub fn checks_json(checks: &[Check]) -> Value {
    Value::Array(
        checks
            .iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "observed": num(c.observed),
                    "low": num(c.low),
                    "high": num(c.high),
                    "pass": c.pass,
                })
            })
            .collect(),
    )
}

pub fn checks_csv(checks: &[Check]) -> String {
    let mut out = String::from("name,observed,low,high,pass\n");
    for c in checks {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&c.name),
            c.observed,
            c.low,
            c.high,
            c.pass
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quoting_kicks_in_only_when_needed() {
        assert_eq!(csv_field("rate (0,1)"), "\"rate (0,1)\"");
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a\"b"), "\"a\"\"b\"");
    }

    #[test]
    fn non_finite_numbers_become_null() {
        assert_eq!(num(f64::INFINITY), Value::Null);
        assert_eq!(num(1.5), json!(1.5));
    }

    #[test]
    fn check_rows_render_their_bands() {
        let rows = vec![
            Check::at_most("a", 0.5, 1.0),
            Check::at_least("b", 0.5, 0.0),
            Check::info("c", 2.0),
        ];
        let csv = checks_csv(&rows);
        assert!(csv.starts_with("name,observed,low,high,pass\n"));
        assert!(csv.contains("a,0.5,-inf,1,true"));
        let doc = checks_json(&rows);
        assert_eq!(doc[0]["pass"], json!(true));
        assert_eq!(doc[2]["low"], Value::Null);
    }
}
