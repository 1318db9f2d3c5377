use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use super::config::Resolved;

/// `v` with 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Also emit a whitespace-separated `.dat` copy for plotting.
    pub dat: bool,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            dat: false,
        }
    }

    pub fn with_dat(mut self) -> Self {
        self.dat = true;
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub foliate_version: String,
    pub status: String,
    pub exit_code: i32,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub summary: BTreeMap<String, toml::Value>,
    pub error: Option<ErrorRecord>,
    pub config: Option<Resolved>,
}

impl Manifest {
    pub fn new(config: Option<Resolved>) -> Self {
        Manifest {
            foliate_version: env!("CARGO_PKG_VERSION").to_string(),
            status: "ok".into(),
            exit_code: 0,
            outputs: Vec::new(),
            warnings: Vec::new(),
            summary: BTreeMap::new(),
            error: None,
            config,
        }
    }
}

pub fn write_table(dir: &Path, t: &Table) -> anyhow::Result<Vec<String>> {
    let csv_path = dir.join(format!("{}.csv", t.name));
    let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    w.write_record(&t.header)?;
    for r in &t.rows {
        w.write_record(r)?;
    }
    w.flush()?;
    let mut written = vec![format!("{}.csv", t.name)];
    if t.dat {
        let mut s = format!("# {}\n", t.header.join(" "));
        for r in &t.rows {
            s.push_str(&r.join(" "));
            s.push('\n');
        }
        let p = dir.join(format!("{}.dat", t.name));
        fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
        written.push(format!("{}.dat", t.name));
    }
    Ok(written)
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join("manifest.toml");
    let text = toml::to_string(m).context("serializing the manifest")?;
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    Ok(p)
}
