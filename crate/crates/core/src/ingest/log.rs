//! JSONL usage logs.
//!
//! The first line carries the schema, `{"schema": [["hour", "numeric"], ...]}`;
//! every following line is one launch:
//! `{"user": "u1", "ts_min": 12.5, "app": "Maps", "sensors": {"hour": 9.0}}`.
//! `ts_sec` (epoch seconds) is accepted in place of `ts_min`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{Dataset, FeatureSpec, RawEvent, RawValue};
use crate::error::{Error, Result};
use crate::types::{FeatureKind, SensorValue};

pub fn load_log(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    parse_log(BufReader::new(file))
}

fn parse_schema(line: &str) -> Result<Vec<FeatureSpec>> {
    let header: Value =
        serde_json::from_str(line).map_err(|e| Error::Parse { line: 1, msg: format!("bad schema header: {e}") })?;
    let entries = header
        .get("schema")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema("first line must be {\"schema\": [...]}".into()))?;
    let mut schema = Vec::with_capacity(entries.len());
    for entry in entries {
        let pair = entry.as_array().filter(|p| p.len() == 2);
        let (name, kind) = match pair.map(|p| (p[0].as_str(), p[1].as_str())) {
            Some((Some(name), Some(kind))) => (name, kind),
            _ => return Err(Error::Schema(format!("bad schema entry {entry}"))),
        };
        if schema.iter().any(|s: &FeatureSpec| s.name == name) {
            return Err(Error::Schema(format!("duplicate feature `{name}`")));
        }
        schema.push(FeatureSpec::new(name, FeatureKind::parse(kind)?));
    }
    Ok(schema)
}

fn parse_row(text: &str, line: usize, schema: &[FeatureSpec]) -> Result<RawEvent> {
    let err = |msg: String| Error::Parse { line, msg };
    let row: Value = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    let obj = row.as_object().ok_or_else(|| err("row is not an object".into()))?;

    let user = obj
        .get("user")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| err("missing `user`".into()))?;
    let app =
        obj.get("app").and_then(Value::as_str).filter(|s| !s.is_empty()).ok_or_else(|| err("missing `app`".into()))?;
    let ts = match (obj.get("ts_min"), obj.get("ts_sec")) {
        (Some(v), _) => v.as_f64().ok_or_else(|| err("`ts_min` is not a number".into()))?,
        (None, Some(v)) => v.as_f64().ok_or_else(|| err("`ts_sec` is not a number".into()))? / 60.0,
        (None, None) => return Err(err("missing `ts_min`".into())),
    };
    if !ts.is_finite() {
        return Err(err("timestamp is not finite".into()));
    }

    let empty = Map::new();
    let sensors = match obj.get("sensors") {
        None | Some(Value::Null) => &empty,
        Some(Value::Object(m)) => m,
        Some(_) => return Err(err("`sensors` is not an object".into())),
    };
    if let Some(unknown) = sensors.keys().find(|k| !schema.iter().any(|s| &s.name == *k)) {
        return Err(err(format!("sensor `{unknown}` is not in the schema")));
    }
    let values = schema
        .iter()
        .map(|spec| match (sensors.get(&spec.name), spec.kind) {
            (None | Some(Value::Null), _) => Ok(RawValue::Missing),
            (Some(Value::Number(n)), FeatureKind::Numeric) => Ok(RawValue::Number(n.as_f64().unwrap_or(f64::NAN))),
            (Some(Value::String(s)), FeatureKind::Categorical) if !s.is_empty() => Ok(RawValue::Text(s.clone())),
            (Some(v), kind) => Err(err(format!("`{}` expects a {} value, got {v}", spec.name, kind.as_str()))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RawEvent { user: user.to_string(), ts, app: app.to_string(), sensors: values })
}

pub fn parse_log<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| Error::Schema("empty log".into()))??;
    let schema = parse_schema(&header)?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        records.push(parse_row(&text, line_no, &schema)?);
    }
    Dataset::from_records(schema, records)
}

pub fn write_log_to<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let schema: Vec<Value> = dataset.schema.iter().map(|s| json!([s.name, s.kind.as_str()])).collect();
    writeln!(out, "{}", json!({ "schema": schema }))?;
    for trace in &dataset.users {
        for event in &trace.events {
            let mut sensors = Map::new();
            for (spec, value) in dataset.schema.iter().zip(&event.sensors) {
                let v = match value {
                    SensorValue::Numeric(x) => json!(x),
                    SensorValue::Categorical(s) => json!(dataset.symbols.resolve(*s)),
                    SensorValue::Missing => Value::Null,
                };
                sensors.insert(spec.name.clone(), v);
            }
            let row = json!({
                "user": trace.user,
                "ts_min": event.ts,
                "app": dataset.app_name(event.app),
                "sensors": sensors,
            });
            writeln!(out, "{row}")?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_log(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    write_log_to(dataset, BufWriter::new(file))
}
