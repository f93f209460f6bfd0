//! On-disk corpus layout: a `manifest.csv` indexing per-sample feature
//! files, plus an optional `severity.csv` sidecar for synthetic data.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{LabeledSample, Split, MOS_MAX, MOS_MIN};
use crate::error::{Error, ParseIssue, Result};
use crate::numerics::Matrix;

pub const MANIFEST_HEADER: &str = "id,split,degradation,mos,features_path";
pub const SEVERITY_FILE: &str = "severity.csv";

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `manifest.csv`, `features/<id>.csv` and, when any sample carries a
/// severity, `severity.csv` under `dir`.
pub fn write_corpus(dir: &Path, samples: &[LabeledSample]) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    let mut severity = String::from("id,severity\n");
    for s in samples {
        if s.id.contains([',', '/', '\\', '\n']) || s.id.is_empty() {
            return Err(Error::Config(format!("sample id {:?} is not file-safe", s.id)));
        }
        let rel = format!("features/{}.csv", s.id);
        let mut text = String::new();
        for r in 0..s.features.rows() {
            let row: Vec<String> = s.features.row(r).iter().map(|v| v.to_string()).collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        write_file(&dir.join(&rel), &text)?;
        let _ = writeln!(
            manifest,
            "{},{},{},{},{}",
            s.id,
            s.split.as_str(),
            s.degradation,
            s.mos,
            rel
        );
        if let Some(v) = s.severity {
            let _ = writeln!(severity, "{},{}", s.id, v);
        }
    }
    let path = dir.join("manifest.csv");
    write_file(&path, &manifest)?;
    if samples.iter().any(|s| s.severity.is_some()) {
        write_file(&dir.join(SEVERITY_FILE), &severity)?;
    }
    Ok(path)
}

fn read_features(path: &Path) -> std::result::Result<Matrix, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| format!("{} row {}: {e}", path.display(), i + 1))?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(format!("{} row {}: non-finite value", path.display(), i + 1));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(format!("{} has no frames", path.display()));
    }
    Matrix::from_rows(&rows).map_err(|e| format!("{}: {e}", path.display()))
}

/// Loads every sample listed in a manifest. All problems are collected and
/// reported together with their 1-based line numbers.
pub fn load_manifest(path: &Path) -> Result<Vec<LabeledSample>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Serde(format!("{other:?}")),
        })?;
    let parse_err = |errors| Error::Parse {
        path: path.to_path_buf(),
        errors,
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(vec![ParseIssue { line: 1, message: e.to_string() }]))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.join(",") != MANIFEST_HEADER {
        return Err(parse_err(vec![ParseIssue {
            line: 1,
            message: format!("expected header `{MANIFEST_HEADER}`, found `{}`", header.join(",")),
        }]));
    }

    let mut issues = Vec::new();
    let mut samples = Vec::new();
    let mut seen = HashMap::new();
    let mut width = None;
    for (idx, rec) in reader.records().enumerate() {
        let line = idx + 2;
        let mut fail = |message: String| issues.push(ParseIssue { line, message });
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                fail(e.to_string());
                continue;
            }
        };
        if rec.len() != 5 {
            fail(format!("expected 5 fields, found {}", rec.len()));
            continue;
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            fail("empty id".into());
            continue;
        }
        if let Some(prev) = seen.insert(id.clone(), line) {
            fail(format!("duplicate id {id:?} (first seen on line {prev})"));
            continue;
        }
        let split = match rec[1].trim().parse::<Split>() {
            Ok(s) => s,
            Err(e) => {
                fail(e.to_string());
                continue;
            }
        };
        let mos = match rec[3].trim().parse::<f64>() {
            Ok(m) if (MOS_MIN..=MOS_MAX).contains(&m) => m,
            Ok(m) => {
                fail(format!("mos {m} outside [{MOS_MIN}, {MOS_MAX}]"));
                continue;
            }
            Err(e) => {
                fail(format!("mos {:?}: {e}", &rec[3]));
                continue;
            }
        };
        let features = match read_features(&base.join(rec[4].trim())) {
            Ok(f) => f,
            Err(e) => {
                fail(e);
                continue;
            }
        };
        match width {
            None => width = Some(features.cols()),
            Some(w) if w != features.cols() => {
                fail(format!("feature width {} differs from {w}", features.cols()));
                continue;
            }
            _ => {}
        }
        samples.push(LabeledSample {
            id,
            features,
            mos,
            degradation: rec[2].trim().to_string(),
            severity: None,
            split,
        });
    }
    if !issues.is_empty() {
        return Err(parse_err(issues));
    }
    let sidecar = base.join(SEVERITY_FILE);
    if sidecar.exists() {
        load_severities(&sidecar, &mut samples)?;
    }
    Ok(samples)
}

/// Attaches severities from an `id,severity` CSV to matching samples.
pub fn load_severities(path: &Path, samples: &mut [LabeledSample]) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    let mut issues = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match line.split_once(',').map(|(id, v)| (id, v.trim().parse::<f64>())) {
            Some((id, Ok(v))) if v.is_finite() => {
                map.insert(id.trim().to_string(), v);
            }
            _ => issues.push(ParseIssue {
                line: i + 1,
                message: format!("expected `id,severity`, found {line:?}"),
            }),
        }
    }
    if !issues.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            errors: issues,
        });
    }
    for s in samples {
        if let Some(&v) = map.get(&s.id) {
            s.severity = Some(v);
        }
    }
    Ok(())
}
