//! JSON run reports and the interpretability-gap table built from a pair of
//! them.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::intervention::interpretability_delta;

pub const SCHEMA_VERSION: u32 = 1;

/// Keys whose contents are per-point or per-task detail rather than metrics.
const DETAIL_KEYS: &[&str] = &["points", "accuracies"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    /// Fully resolved configuration of the run.
    pub config: Value,
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_hash: String,
    pub results: Value,
}

/// Hex SHA-256 of a JSON value's compact encoding (object keys sorted).
pub fn config_hash(config: &Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

fn to_value(what: &str, v: &impl Serialize) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::invalid(what, e.to_string()))
}

impl Report {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, results: &impl Serialize) -> Result<Self> {
        let config = to_value("config", config)?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            seed,
            config_hash: config_hash(&config),
            config,
            results: to_value("results", results)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.into(),
                found: r.schema_version,
            });
        }
        if config_hash(&r.config) != r.config_hash {
            return Err(Error::invalid("config_hash", format!("does not match the embedded config in {}", path.display())));
        }
        Ok(r)
    }

    /// Floating-point metrics of `results`, keyed by dotted path.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        flatten(&self.results, String::new(), &mut out);
        out
    }
}

fn flatten(v: &Value, prefix: String, out: &mut Vec<(String, f64)>) {
    let join = |key: &str| {
        if prefix.is_empty() {
            key.to_string()
        } else {
            format!("{prefix}.{key}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                if !DETAIL_KEYS.contains(&k.as_str()) {
                    flatten(child, join(k), out);
                }
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                // label curve entries by their k when present
                let key = match child.get("k").and_then(Value::as_u64) {
                    Some(k) => format!("k{k}"),
                    None => i.to_string(),
                };
                flatten(child, join(&key), out);
            }
        }
        Value::Number(n) if n.is_f64() => out.push((prefix, n.as_f64().unwrap_or(f64::NAN))),
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub metric: String,
    pub oracle: f64,
    pub predicted: f64,
    pub delta: f64,
}

/// Δ for every metric present in both reports: the oracle run's value minus
/// the run on predicted primitives evaluated with true primitives.
pub fn delta_table(oracle: &Report, predicted: &Report) -> Result<Vec<DeltaRow>> {
    if oracle.command != predicted.command {
        return Err(Error::invalid(
            "reports",
            format!("cannot compare a `{}` report with a `{}` report", oracle.command, predicted.command),
        ));
    }
    let pred: std::collections::BTreeMap<String, f64> = predicted.metrics().into_iter().collect();
    let rows: Vec<DeltaRow> = oracle
        .metrics()
        .into_iter()
        .filter_map(|(metric, o)| {
            pred.get(&metric).map(|&p| DeltaRow {
                delta: interpretability_delta(o, p),
                oracle: o,
                predicted: p,
                metric,
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid("reports", "no metrics in common"));
    }
    Ok(rows)
}

pub fn write_delta_csv<W: Write>(rows: &[DeltaRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::invalid("csv", e.to_string());
    w.write_record(["metric", "oracle", "predicted", "delta"]).map_err(wrap)?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            r.oracle.to_string(),
            r.predicted.to_string(),
            r.delta.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::invalid("csv", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn report(auc: f64) -> Report {
        Report::new(
            "eval-czsl",
            3,
            &json!({"world": "closed", "topk": [1, 2]}),
            &json!({"curves": [{"k": 1, "auc": auc, "points": [{"bias": 0.5}]}, {"k": 2, "auc": 1.0}], "samples": 40}),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_and_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let r = report(0.9);
        r.write(&path).unwrap();
        assert_eq!(Report::read(&path).unwrap(), r);
        assert_eq!(r.config_hash.len(), 64);
        assert_eq!(r.config_hash, report(0.1).config_hash);

        let mut tampered = r.clone();
        tampered.config = json!({"world": "open"});
        tampered.write(&path).unwrap();
        assert!(Report::read(&path).is_err());
    }

    #[test]
    fn metrics_skip_detail_and_counts() {
        let m = report(0.9).metrics();
        assert_eq!(m, vec![("curves.k1.auc".to_string(), 0.9), ("curves.k2.auc".to_string(), 1.0)]);
    }

    #[test]
    fn deltas() {
        let rows = delta_table(&report(0.999), &report(0.3)).unwrap();
        assert!((rows[0].delta - 0.699).abs() < 1e-12);
        assert!(delta_table(&report(0.5), &report(0.5)).unwrap().iter().all(|r| r.delta == 0.0));
        let mut other = report(0.5);
        other.command = "eval-fewshot".into();
        assert!(delta_table(&report(0.5), &other).is_err());

        let mut buf = Vec::new();
        write_delta_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
