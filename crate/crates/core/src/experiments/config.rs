//! TOML experiment configuration with dotted-key overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::filter::InitialLaw;
use crate::model::{Metric, ModelFamily, ParameterPoint, ParameterSpace};
use crate::{Error, Result};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_N: usize = 128;
pub const DEFAULT_REPLICAS: usize = 100;

/// Every key a config file may contain, as dotted paths.
pub const ALLOWED_KEYS: [&str; 12] = [
    "kind",
    "family",
    "space.points",
    "space.metric",
    "theta_true",
    "nu",
    "grid.n",
    "dt",
    "horizons",
    "replicas",
    "seed",
    "out",
];

const REQUIRED_KEYS: [&str; 3] = ["kind", "family", "theta_true"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Contraction,
    Stability,
    Robustness,
    Lambda,
    Consistency,
    Coupling,
    Singularity,
    EngineXcheck,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Contraction,
        Kind::Stability,
        Kind::Robustness,
        Kind::Lambda,
        Kind::Consistency,
        Kind::Coupling,
        Kind::Singularity,
        Kind::EngineXcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Contraction => "contraction",
            Kind::Stability => "stability",
            Kind::Robustness => "robustness",
            Kind::Lambda => "lambda",
            Kind::Consistency => "consistency",
            Kind::Coupling => "coupling",
            Kind::Singularity => "singularity",
            Kind::EngineXcheck => "engine-xcheck",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub points: Vec<Vec<f64>>,
    pub metric: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
}

/// A validated experiment configuration. Field order is the canonical
/// emission order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub family: String,
    pub theta_true: Vec<f64>,
    pub nu: Vec<String>,
    pub dt: f64,
    pub horizons: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub space: SpaceConfig,
    pub grid: GridConfig,
}

impl ExperimentConfig {
    pub fn family(&self) -> Result<ModelFamily> {
        ModelFamily::by_name(&self.family)
    }

    pub fn theta_true(&self) -> Result<ParameterPoint> {
        ParameterPoint::new(self.theta_true.clone())
    }

    pub fn space(&self) -> Result<ParameterSpace> {
        let pts = self
            .space
            .points
            .iter()
            .map(|p| ParameterPoint::new(p.clone()))
            .collect::<Result<_>>()?;
        ParameterSpace::new(pts, Metric::by_name(&self.space.metric)?)
    }

    pub fn initial_laws(&self) -> Result<Vec<InitialLaw>> {
        self.nu.iter().map(|s| InitialLaw::parse(s)).collect()
    }

    /// Canonical TOML text; loading it back yields an identical config.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.to_canonical().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<()> {
        let family = self.family()?;
        let theta = self.theta_true()?;
        if theta.dim() != family.param_dim() {
            return Err(Error::Config(format!(
                "theta_true has {} coordinates, family '{}' needs {}",
                theta.dim(),
                family.name(),
                family.param_dim()
            )));
        }
        let space = self.space()?;
        if space.dim() != theta.dim() {
            return Err(Error::Config("space.points and theta_true differ in dimension".into()));
        }
        if space.index_of(&theta).is_none() {
            return Err(Error::Config(format!("theta_true {theta} is not in space.points")));
        }
        self.initial_laws()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.grid.n < 8 {
            return Err(Error::Config(format!("grid.n must be at least 8, got {}", self.grid.n)));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Config("horizons must be a nonempty list of positive times".into()));
        }
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be positive".into()));
        }
        Ok(())
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) if !ALLOWED_KEYS.contains(&key.as_str()) => flatten(&key, t, out),
            _ => out.push(key),
        }
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut cur = table;
    while let Some(p) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(p.to_string(), value);
            return Ok(());
        }
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}': '{p}' is not a table")))?;
    }
    Err(Error::Config("empty override key".into()))
}

/// Parses `key=value`; the value is read as a TOML value, falling back to a
/// bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{s}' is not key=value")))?;
    let k = k.trim();
    if !ALLOWED_KEYS.contains(&k) {
        return Err(Error::Config(format!("unknown key '{k}' in override")));
    }
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn table_to_config(mut table: toml::Table) -> Result<ExperimentConfig> {
    let mut keys = Vec::new();
    flatten("", &table, &mut keys);
    if let Some(bad) = keys.iter().find(|k| !ALLOWED_KEYS.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown key '{bad}'")));
    }
    if let Some(missing) = REQUIRED_KEYS.iter().find(|k| !keys.iter().any(|x| x == *k)) {
        return Err(Error::Config(format!("missing required key '{missing}'")));
    }
    let theta = table["theta_true"].clone();
    let mut defaults: Vec<(&str, toml::Value)> = vec![
        ("nu", toml::Value::Array(vec![toml::Value::String("uniform".into())])),
        ("dt", toml::Value::Float(DEFAULT_DT)),
        ("horizons", toml::Value::Array(vec![toml::Value::Float(10.0)])),
        ("replicas", toml::Value::Integer(DEFAULT_REPLICAS as i64)),
        ("seed", toml::Value::Integer(0)),
        ("space.points", toml::Value::Array(vec![theta])),
        ("space.metric", toml::Value::String("euclidean".into())),
        ("grid.n", toml::Value::Integer(DEFAULT_N as i64)),
    ];
    if !keys.iter().any(|k| k == "out") {
        let kind = table["kind"].as_str().unwrap_or("experiment").to_string();
        defaults.push(("out", toml::Value::String(format!("out/{kind}"))));
    }
    for (k, v) in defaults {
        if !keys.iter().any(|x| x == k) {
            set_dotted(&mut table, k, v)?;
        }
    }
    coerce_floats(&mut table);
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Integers written where floats are expected (`dt = 1`, `horizons = [25]`,
/// `theta_true = [0, 1]`) are accepted.
fn coerce_floats(table: &mut toml::Table) {
    fn to_f(v: &mut toml::Value) {
        match v {
            toml::Value::Integer(i) => *v = toml::Value::Float(*i as f64),
            toml::Value::Array(a) => a.iter_mut().for_each(to_f),
            _ => {}
        }
    }
    for k in ["dt", "horizons", "theta_true"] {
        if let Some(v) = table.get_mut(k) {
            to_f(v);
        }
    }
    if let Some(toml::Value::Table(s)) = table.get_mut("space") {
        if let Some(v) = s.get_mut("points") {
            to_f(v);
        }
    }
}

/// Parses config text, applies overrides (in order), fills defaults and
/// validates.
pub fn parse_config(text: &str, overrides: &[(String, toml::Value)]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let at = e
            .span()
            .map(|s| {
                let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                format!(" (line {line})")
            })
            .unwrap_or_default();
        Error::Config(format!("{}{at}", e.message()))
    })?;
    for (k, v) in overrides {
        set_dotted(&mut table, k, v.clone())?;
    }
    table_to_config(table)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    load_config_with(path, &[])
}

pub fn load_config_with(path: &Path, overrides: &[(String, toml::Value)]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    parse_config(&text, overrides)
}
