//! CSV/JSON artifact writers and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::harness::ModelReport;
use crate::predict::{AttSeries, EffectSummary};

/// Output directory that remembers what was written for the manifest.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<(String, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl OutputDir {
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(OutputDir {
            root: root.as_ref().to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.path(name), bytes)?;
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        self.write_bytes(name, &bytes)
    }

    /// Writes `manifest.json` listing every file written so far.
    pub fn finish(mut self, command: &str, config: Value, seed: u64, timings: Value) -> Result<PathBuf> {
        let files: Vec<Value> = self
            .files
            .iter()
            .map(|(n, h)| json!({ "file": n, "sha256": h }))
            .collect();
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": seed,
            "config": config,
            "files": files,
            "timings": timings,
        });
        let s = serde_json::to_string_pretty(&manifest)? + "\n";
        let path = self.path("manifest.json");
        fs::write(&path, s)?;
        self.files.clear();
        Ok(path)
    }
}

#[derive(Serialize)]
pub struct EffectRow<'a> {
    pub unit: &'a str,
    pub time: i64,
    pub observed: f64,
    pub counterfactual: f64,
    pub effect: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn effect_rows(summaries: &[EffectSummary]) -> Vec<EffectRow<'_>> {
    summaries
        .iter()
        .flat_map(|s| {
            s.per_time.iter().map(move |p| EffectRow {
                unit: &s.unit,
                time: p.time,
                observed: p.observed,
                counterfactual: p.counterfactual,
                effect: p.effect.estimate,
                sd: p.effect.sd,
                lower: p.effect.lower,
                upper: p.effect.upper,
            })
        })
        .collect()
}

#[derive(Serialize)]
pub struct AggregateRow<'a> {
    pub unit: &'a str,
    pub quantity: &'static str,
    pub estimate: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn aggregate_rows(summaries: &[EffectSummary]) -> Vec<AggregateRow<'_>> {
    let mut out = Vec::new();
    for s in summaries {
        for (q, i) in [("cumulative", &s.cumulative), ("average", &s.average)] {
            out.push(AggregateRow {
                unit: &s.unit,
                quantity: q,
                estimate: i.estimate,
                sd: i.sd,
                lower: i.lower,
                upper: i.upper,
            });
        }
    }
    out
}

#[derive(Serialize)]
pub struct AttRow {
    pub time: i64,
    pub n: usize,
    pub att: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn att_rows(att: &AttSeries) -> Vec<AttRow> {
    att.per_time
        .iter()
        .map(|p| AttRow {
            time: p.time,
            n: p.n,
            att: p.att.estimate,
            sd: p.att.sd,
            lower: p.att.lower,
            upper: p.att.upper,
        })
        .collect()
}

#[derive(Serialize)]
pub struct ModelRow<'a> {
    pub model: &'a str,
    pub rho: Option<f64>,
    pub rho_time: Option<f64>,
    pub mape: f64,
    pub rmse: f64,
    pub bias: f64,
    pub coverage: f64,
    pub pi_width: f64,
    pub n: usize,
    pub n_units: usize,
    pub failures: usize,
}

pub fn model_rows(reports: &[ModelReport]) -> Vec<ModelRow<'_>> {
    reports
        .iter()
        .map(|r| ModelRow {
            model: &r.model,
            rho: r.rho,
            rho_time: r.rho_time,
            mape: r.metrics.mape,
            rmse: r.metrics.rmse,
            bias: r.metrics.bias,
            coverage: r.metrics.coverage,
            pi_width: r.metrics.pi_width,
            n: r.metrics.n,
            n_units: r.n_units,
            failures: r.failures.len(),
        })
        .collect()
}

#[derive(Serialize)]
pub struct BreakdownCsvRow<'a> {
    pub model: &'a str,
    pub key: i64,
    pub n: usize,
    pub rmse: f64,
    pub bias: f64,
    pub coverage: f64,
}

pub fn horizon_rows(reports: &[ModelReport], by_time: bool) -> Vec<BreakdownCsvRow<'_>> {
    reports
        .iter()
        .flat_map(|r| {
            let rows = if by_time { &r.per_time } else { &r.per_horizon };
            rows.iter().map(move |b| BreakdownCsvRow {
                model: &r.model,
                key: b.key,
                n: b.n,
                rmse: b.rmse,
                bias: b.bias,
                coverage: b.coverage,
            })
        })
        .collect()
}
