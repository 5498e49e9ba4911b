//! Experiment reports: CSV tables, named verdicts and a JSON manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::Result;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A named CSV table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Formats a float so it parses back to the same value.
pub fn cell(v: f64) -> String {
    format!("{v:?}")
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| cell(*v)).collect());
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }
}

/// A named boolean check with its measured value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    /// Human-readable pass condition.
    pub condition: String,
    /// `table.column` the measurement is computed from.
    pub source: String,
}

impl Verdict {
    pub fn new(name: &str, passed: bool, measured: f64, condition: &str, source: &str) -> Self {
        Self {
            name: name.into(),
            passed,
            measured,
            condition: condition.into(),
            source: source.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    /// Canonical TOML of the full config.
    pub config: String,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            version: CODE_VERSION.into(),
            kind: cfg.kind.name().into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.to_canonical(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub manifest: Manifest,
    pub tables: Vec<Table>,
    pub verdicts: Vec<Verdict>,
}

impl ExperimentReport {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            manifest: Manifest::new(cfg),
            tables: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    #[serde(flatten)]
    manifest: &'a Manifest,
    tables: Vec<String>,
    verdicts: &'a [Verdict],
    passed: bool,
}

/// Writes `<name>.csv` per table and `manifest.json` into `dir`; returns
/// the manifest path.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for t in &report.tables {
        let file = format!("{}.csv", t.name);
        fs::write(dir.join(&file), t.to_csv())?;
        names.push(file);
    }
    let mf = ManifestFile {
        manifest: &report.manifest,
        tables: names,
        verdicts: &report.verdicts,
        passed: report.passed(),
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&mf)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Warns when a manifest was produced by a different code version.
pub fn check_manifest_version(path: &Path) -> Result<Option<String>> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let found = v.get("version").and_then(|x| x.as_str()).unwrap_or("unknown");
    Ok((found != CODE_VERSION).then(|| {
        format!("manifest written by version {found}, running {CODE_VERSION}; results may differ")
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::config::parse_config;

    fn cfg() -> ExperimentConfig {
        parse_config(
            "kind = \"singularity\"\nfamily = \"constant-h\"\ntheta_true = [0.5]\n",
            &[],
        )
        .unwrap()
    }

    #[test]
    fn verdict_only_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ExperimentReport::new(&cfg());
        r.verdicts.push(Verdict::new("x", true, 1.0, "x > 0", "none"));
        let p = write_report(&r, dir.path()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(v["tables"].as_array().unwrap().len(), 0);
        assert_eq!(v["verdicts"][0]["name"], "x");
        assert_eq!(v["seed"], 0);
        assert!(check_manifest_version(&p).unwrap().is_none());
    }

    #[test]
    fn table_csv() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push_f64(&[0.1, 2.0]);
        assert_eq!(t.to_csv(), "a,b\n0.1,2.0\n");
        assert_eq!(t.column("b").unwrap(), vec!["2.0"]);
    }
}
