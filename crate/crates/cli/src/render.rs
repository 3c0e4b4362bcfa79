use std::io::Write;

use serde_json::{json, Map, Value};

use crate::args::Format;

/// Plot-ready numeric table carried alongside the document body.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub struct Document {
    pub body: Map<String, Value>,
    pub table: Option<Table>,
}

/// Non-finite values become `null`.
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

pub fn matrix(m: &epd::nalgebra::DMatrix<f64>) -> Value {
    Value::Array((0..m.nrows()).map(|i| nums(&m.row(i).iter().copied().collect::<Vec<_>>())).collect())
}

pub fn named(names: &[String], xs: &[f64]) -> Value {
    Value::Object(names.iter().cloned().zip(xs.iter().map(|&x| num(x))).collect())
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

pub fn write(doc: Document, format: Format, out: &mut dyn Write) -> std::io::Result<()> {
    match format {
        Format::Json => {
            let mut body = doc.body;
            if let Some(t) = doc.table {
                let rows: Vec<Value> = t.rows.iter().map(|r| nums(r)).collect();
                body.insert("table".into(), json!({ "columns": t.columns, "rows": rows }));
            }
            serde_json::to_writer_pretty(&mut *out, &Value::Object(body))?;
            writeln!(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            match doc.table {
                // tables stand alone so any plotter can read them directly
                Some(t) => {
                    w.write_record(&t.columns)?;
                    for r in &t.rows {
                        w.write_record(r.iter().map(|x| x.to_string()))?;
                    }
                }
                None => {
                    let mut pairs = Vec::new();
                    flatten("", &Value::Object(doc.body), &mut pairs);
                    w.write_record(["key", "value"])?;
                    for (k, v) in pairs {
                        w.write_record([k, v])?;
                    }
                }
            }
            w.flush()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_paths() {
        let mut out = Vec::new();
        flatten("", &json!({"a": {"b": [1.5, null]}, "c": "x"}), &mut out);
        assert_eq!(
            out,
            vec![
                ("a.b.0".to_string(), "1.5".to_string()),
                ("a.b.1".to_string(), String::new()),
                ("c".to_string(), "x".to_string())
            ]
        );
    }

    #[test]
    fn non_finite_is_null() {
        assert_eq!(num(f64::INFINITY), Value::Null);
        assert_eq!(num(0.1), json!(0.1));
    }
}
