//! Manifest CSV and label vocabulary files.

use std::path::Path;

use metaaf_core::scene::{check_rows, Fold, ManifestRow, Source};

use crate::error::{Error, Result};

pub const HEADER: [&str; 8] = ["id", "u_path|u_seed", "s_path|s_seed", "class", "fold", "ser_db", "shift", "len_s"];

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::format(path, format!("manifest header must be `{}`", HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let bad = |what: &str| Error::format(path, format!("line {line}: invalid {what}"));
        let num = |j: usize, what: &str| rec[j].trim().parse::<f64>().map_err(|_| bad(what));
        rows.push(ManifestRow {
            id: rec[0].to_string(),
            playback: Source::parse(&rec[1]),
            keyword: Source::parse(&rec[2]),
            class: rec[3].trim().parse().map_err(|_| bad("class"))?,
            fold: Fold::parse(rec[4].trim()).map_err(|_| bad("fold"))?,
            ser_db: num(5, "ser_db")?,
            shift: rec[6].trim().parse().map_err(|_| bad("shift"))?,
            len_s: num(7, "len_s")?,
        });
    }
    check_rows(&rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([
            r.id.clone(),
            r.playback.to_string(),
            r.keyword.to_string(),
            r.class.to_string(),
            r.fold.as_str().to_string(),
            r.ser_db.to_string(),
            r.shift.to_string(),
            r.len_s.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One label per line; blank lines are ignored.
pub fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if labels.is_empty() {
        return Err(Error::format(path, "empty label vocabulary"));
    }
    Ok(labels)
}

pub fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let mut text = labels.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}
