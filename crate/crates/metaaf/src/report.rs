//! Text tables and line-delimited JSON records.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use metaaf_core::eval::{MetricsReport, SwapMatrix};
use metaaf_core::train::EpochRecord;
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Left-aligned first column, right-aligned others.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(headers.to_vec());
    out += &line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

pub fn f1_cell(macro_f1: f64, micro_f1: f64) -> String {
    format!("{macro_f1:.3} ({micro_f1:.3})")
}

pub fn opt_db(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}

pub fn metrics_record(r: &MetricsReport) -> Value {
    json!({
        "canceller": r.canceller,
        "macro_f1": r.macro_f1,
        "micro_f1": r.micro_f1,
        "erle_db": r.mean_erle_db,
        "meta_loss": r.mean_meta_loss,
        "scenes": r.scenes.len(),
        "confusion": r.confusion.counts(),
    })
}

pub fn epoch_record(r: &EpochRecord) -> Value {
    json!({
        "epoch": r.epoch,
        "split": r.split.as_str(),
        "loss": r.loss,
        "macro_f1": r.macro_f1,
        "erle_db": r.erle_db,
        "lr": r.lr,
    })
}

pub fn swap_table(names: &[String], m: &SwapMatrix) -> String {
    let mut headers = vec!["model \\ head"];
    headers.extend(names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = names
        .iter()
        .enumerate()
        .map(|(r, n)| {
            let mut row = vec![n.clone()];
            for c in 0..names.len() {
                let rep = &m.reports[r][c];
                let mark = if r == c { "*" } else { " " };
                row.push(format!("{}{mark}", f1_cell(rep.macro_f1, rep.micro_f1)));
            }
            row
        })
        .collect();
    table(&headers, &rows)
}

/// Appends one JSON object per line.
pub struct JsonLines {
    path: PathBuf,
    file: std::io::BufWriter<std::fs::File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), file: std::io::BufWriter::new(file) })
    }

    pub fn write(&mut self, v: &Value) -> Result<()> {
        serde_json::to_writer(&mut self.file, v).map_err(|e| Error::io(&self.path, e.into()))?;
        self.file.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
