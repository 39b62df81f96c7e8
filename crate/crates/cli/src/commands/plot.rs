use std::io::{BufRead, Write};

use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};

use crate::config;
use crate::PlotArgs;

fn column(names: &[String], want: Option<&str>, fallback: usize) -> Result<usize> {
    match want {
        Some(w) => names
            .iter()
            .position(|n| n == w)
            .with_context(|| format!("no column '{w}' (have {})", names.join(", "))),
        None if fallback < names.len() => Ok(fallback),
        None => bail!("need at least {} columns", fallback + 1),
    }
}

fn csv_rows(a: &PlotArgs) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_reader(config::open(&a.input)?);
    let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let (xi, yi) = (column(&names, a.x.as_deref(), 0)?, column(&names, a.y.as_deref(), 1)?);
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((rec[xi].to_string(), rec[yi].to_string()))
        })
        .collect()
}

/// The first array of objects inside `v`, searched depth first.
fn find_rows(v: &Value) -> Option<&Vec<Value>> {
    match v {
        Value::Array(a) if a.first().is_some_and(Value::is_object) => Some(a),
        Value::Array(a) => a.iter().find_map(find_rows),
        Value::Object(m) => m.values().find_map(find_rows),
        _ => None,
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn object_rows(objects: &[Map<String, Value>], a: &PlotArgs) -> Result<Vec<(String, String)>> {
    let first = objects.first().context("no records")?;
    let names: Vec<String> = first
        .iter()
        .filter(|(_, v)| scalar(v).is_some())
        .map(|(k, _)| k.clone())
        .collect();
    let x = names[column(&names, a.x.as_deref(), 0)?].clone();
    let y = names[column(&names, a.y.as_deref(), 1)?].clone();
    objects
        .iter()
        .map(|o| {
            let get = |k: &str| o.get(k).and_then(scalar).with_context(|| format!("record lacks scalar '{k}'"));
            Ok((get(&x)?, get(&y)?))
        })
        .collect()
}

pub fn plot(a: PlotArgs) -> Result<()> {
    let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let rows = match ext {
        "csv" => csv_rows(&a)?,
        "jsonl" => {
            let objects = config::open(&a.input)?
                .lines()
                .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
                .map(|l| match serde_json::from_str(&l?)? {
                    Value::Object(m) => Ok(m),
                    _ => bail!("JSON-lines record is not an object"),
                })
                .collect::<Result<Vec<_>>>()?;
            object_rows(&objects, &a)?
        }
        "json" => {
            let v: Value = serde_json::from_reader(config::open(&a.input)?)?;
            let rows = find_rows(&v).context("no array of records in the file")?;
            let objects: Vec<_> = rows.iter().filter_map(|r| r.as_object().cloned()).collect();
            object_rows(&objects, &a)?
        }
        other => bail!("cannot plot '.{other}' files; expected csv, json or jsonl"),
    };
    let mut out = config::output(a.out.as_deref())?;
    for (x, y) in rows {
        writeln!(out, "{x} {y}")?;
    }
    out.flush()?;
    Ok(())
}
