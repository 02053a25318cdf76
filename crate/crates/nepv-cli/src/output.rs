//! CSV and JSON writers. Every file carries the config hash, seed and
//! tolerances; floats are written with 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

/// `{:.16e}`, or an empty field for missing and non-finite values.
pub fn fmt_f64(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.16e}"),
        Some(x) if x.is_nan() => "nan".into(),
        Some(x) if x > 0.0 => "inf".into(),
        Some(_) => "-inf".into(),
        None => String::new(),
    }
}

/// Finite floats as JSON numbers, everything else as `null`.
pub fn json_f64(v: Option<f64>) -> Value {
    match v {
        Some(x) if x.is_finite() => json!(x),
        _ => Value::Null,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub config_sha256: String,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
    pub fd_tol: f64,
}

impl Meta {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            tol: cfg.tol,
            max_iters: cfg.max_iters,
            fd_tol: cfg.fd_tol,
        }
    }

    fn header(&self) -> String {
        format!(
            "# config_sha256={} seed={} tol={:e} max_iters={} fd_tol={:e}\n",
            self.config_sha256, self.seed, self.tol, self.max_iters, self.fd_tol
        )
    }
}

pub struct Output {
    dir: PathBuf,
    meta: Meta,
}

impl Output {
    pub fn new(dir: &Path, meta: Meta) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
        })
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `rows` under `columns`, after the `#` metadata line.
    pub fn csv(&self, name: &str, columns: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(name);
        let file =
            File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.meta.header().as_bytes())?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(columns)?;
        for row in rows {
            csv.write_record(row)?;
        }
        csv.flush()?;
        Ok(path)
    }

    /// Writes `body` with a `meta` member added.
    pub fn json(&self, name: &str, mut body: Value) -> Result<PathBuf> {
        if let Value::Object(map) = &mut body {
            map.insert("meta".into(), serde_json::to_value(&self.meta)?);
        }
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(&body)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}

/// Reads a CSV written by [`Output::csv`], skipping the metadata line.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let body: String = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| Ok(rec?.iter().map(String::from).collect()))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}
