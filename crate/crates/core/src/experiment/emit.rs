//! Writes a results bundle to disk.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/bundle.json          full bundle, read back by `report`
//! <dir>/config.toml          canonical config
//! <dir>/tables/results_accuracy_time.csv
//! <dir>/tables/results_metrics.csv
//! <dir>/curves/curves.csv
//! <dir>/curves/{accuracy,loss,build_time,classification_time}.svg
//! <dir>/confusion/<paradigm>.{csv,svg}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::svg::{self, Series};
use super::ResultsBundle;
use crate::metrics::ConfusionMatrix;

pub const ACCURACY_TIME_HEADER: &str =
    "environment,dataset,training_acc,testing_acc,build_time_s,classification_time_s";
pub const METRICS_HEADER: &str = "environment,dataset,precision,recall,f1,accuracy";
pub const CURVES_HEADER: &str = "round,paradigm,train_acc,train_loss,test_acc";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmitError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("bundle has no results")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{path}: malformed bundle: {message}")]
    Format { path: String, message: String },
}

fn io_err(path: &Path, e: std::io::Error) -> EmitError {
    EmitError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write(path: PathBuf, content: &str) -> Result<PathBuf, EmitError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(&path, content).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn finite(v: f64, what: impl FnOnce() -> String) -> Result<f64, EmitError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EmitError::NonFinite(what()))
    }
}

/// Upper-case short name used in tables and legends.
fn env_name(p: crate::Paradigm) -> String {
    p.key().to_uppercase()
}

/// Accuracy/time and metrics tables, one row per paradigm.
pub fn emit_tables(bundle: &ResultsBundle, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    if bundle.results.is_empty() {
        return Err(EmitError::Empty);
    }
    let dataset = bundle.manifest.dataset.as_str();
    let mut acc = format!("{ACCURACY_TIME_HEADER}\n");
    let mut met = format!("{METRICS_HEADER}\n");
    for r in &bundle.results {
        let env = env_name(r.paradigm);
        let rep = &r.report;
        let cells = [
            r.train_accuracy,
            rep.accuracy,
            rep.build_time_s,
            rep.classification_time_s,
            rep.macro_precision,
            rep.macro_recall,
            rep.macro_f1,
        ];
        for (i, v) in cells.iter().enumerate() {
            finite(*v, || format!("{env} table column {i}"))?;
        }
        let _ = writeln!(
            acc,
            "{env},{dataset},{:.2},{:.2},{:.2},{:.2}",
            cells[0], cells[1], cells[2], cells[3]
        );
        let _ = writeln!(
            met,
            "{env},{dataset},{:.2},{:.2},{:.2},{:.2}",
            cells[4], cells[5], cells[6], cells[1]
        );
    }
    let tables = dir.join("tables");
    Ok(vec![
        write(tables.join("results_accuracy_time.csv"), &acc)?,
        write(tables.join("results_metrics.csv"), &met)?,
    ])
}

/// Per-round curve data plus accuracy/loss line charts and timing bar charts.
pub fn emit_curves_and_plots(bundle: &ResultsBundle, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    if bundle.results.is_empty() || bundle.results.iter().any(|r| r.rounds.is_empty()) {
        return Err(EmitError::Empty);
    }
    let mut csv = format!("{CURVES_HEADER}\n");
    for r in &bundle.results {
        for l in &r.rounds {
            for v in [l.train_accuracy, l.train_loss, l.test_accuracy] {
                finite(v, || format!("{} round {}", r.paradigm, l.round))?;
            }
            let _ = writeln!(
                csv,
                "{},{},{:.6},{:.6},{:.6}",
                l.round,
                r.paradigm.key(),
                l.train_accuracy,
                l.train_loss,
                l.test_accuracy
            );
        }
    }
    let series = |f: fn(&crate::RoundLog) -> f64| -> Vec<Series> {
        bundle
            .results
            .iter()
            .map(|r| Series {
                label: env_name(r.paradigm),
                points: r.rounds.iter().map(|l| (l.round as f64, f(l))).collect(),
            })
            .collect()
    };
    let bars = |f: fn(&crate::MetricsReport) -> f64| -> Vec<(String, f64)> {
        bundle
            .results
            .iter()
            .map(|r| (env_name(r.paradigm), f(&r.report)))
            .collect()
    };
    let curves = dir.join("curves");
    Ok(vec![
        write(curves.join("curves.csv"), &csv)?,
        write(
            curves.join("accuracy.svg"),
            &svg::line_chart("Test accuracy per round", "round", "accuracy", &series(|l| l.test_accuracy)),
        )?,
        write(
            curves.join("loss.svg"),
            &svg::line_chart("Training loss per round", "round", "loss", &series(|l| l.train_loss)),
        )?,
        write(
            curves.join("build_time.svg"),
            &svg::bar_chart("Build time", "seconds", &bars(|m| m.build_time_s)),
        )?,
        write(
            curves.join("classification_time.svg"),
            &svg::bar_chart("Classification time", "seconds", &bars(|m| m.classification_time_s)),
        )?,
    ])
}

/// 10x10 count grid, rows are true classes.
pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let mut out = String::new();
    for row in &m.counts {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn emit_confusion(bundle: &ResultsBundle, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    if bundle.results.is_empty() {
        return Err(EmitError::Empty);
    }
    let dir = dir.join("confusion");
    let mut paths = Vec::new();
    for r in &bundle.results {
        let key = r.paradigm.key();
        paths.push(write(dir.join(format!("{key}.csv")), &confusion_csv(&r.confusion))?);
        let title = format!("Confusion matrix, {}", r.paradigm.title());
        paths.push(write(dir.join(format!("{key}.svg")), &svg::heatmap(&title, &r.confusion))?);
    }
    Ok(paths)
}

/// Everything above plus manifest, bundle and config.
pub fn emit_all(bundle: &ResultsBundle, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    let mut paths = vec![
        write(dir.join("manifest.json"), &to_json(&bundle.manifest))?,
        write(dir.join("bundle.json"), &to_json(bundle))?,
        write(dir.join("config.toml"), &bundle.config)?,
    ];
    paths.extend(emit_tables(bundle, dir)?);
    paths.extend(emit_curves_and_plots(bundle, dir)?);
    paths.extend(emit_confusion(bundle, dir)?);
    Ok(paths)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("bundle types serialize");
    s.push('\n');
    s
}

/// Reads `bundle.json` from a run directory.
pub fn read_bundle(dir: &Path) -> Result<ResultsBundle, EmitError> {
    let path = dir.join("bundle.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| EmitError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
