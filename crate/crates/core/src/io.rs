//! CSV and binary serialization of records, filter trajectories, density
//! snapshots and audit tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::filter::FilterRun;
use crate::metrics::AuditReport;
use crate::numerics::grid::{GridDensity, TorusGrid};
use crate::sde::ObservationRecord;
use crate::{Error, Result};

const RECORD_MAGIC: &[u8; 4] = b"TPOR";
const RECORD_VERSION: u32 = 1;

/// Shortest representation that round-trips through `parse::<f64>`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.display().to_string()),
        _ => Error::Io(e),
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.display().to_string()),
        _ => Error::Io(e),
    })
}

/// Columns `t, dY_1..m[, X_1..q]`. Row `k` holds the increment over
/// `[t_{k-1}, t_k]` (zero on the first row) and `X_{t_k}`.
pub fn record_to_csv(obs: &ObservationRecord) -> String {
    let mut s = String::from("t");
    for j in 0..obs.m {
        let _ = write!(s, ",dY_{}", j + 1);
    }
    if obs.hidden_x.is_some() {
        for j in 0..obs.q {
            let _ = write!(s, ",X_{}", j + 1);
        }
    }
    s.push('\n');
    for (k, t) in obs.times.iter().enumerate() {
        s.push_str(&num(*t));
        for j in 0..obs.m {
            let v = if k == 0 { 0.0 } else { obs.dy[(k - 1) * obs.m + j] };
            s.push(',');
            s.push_str(&num(v));
        }
        if let Some(x) = &obs.hidden_x {
            for j in 0..obs.q {
                s.push(',');
                s.push_str(&num(x[k * obs.q + j]));
            }
        }
        s.push('\n');
    }
    s
}

/// Parses [`record_to_csv`] output. `q` is taken from the `X_` columns when
/// present, otherwise from `q`.
pub fn record_from_csv(text: &str, q: usize) -> Result<ObservationRecord> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Config("empty record file".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    if header.first() != Some(&"t") {
        return Err(Error::Config("record header must start with t".into()));
    }
    let m = header.iter().filter(|h| h.starts_with("dY_")).count();
    let qx = header.iter().filter(|h| h.starts_with("X_")).count();
    if m == 0 || 1 + m + qx != header.len() {
        return Err(Error::Config("record header must be t, dY_*, X_*".into()));
    }
    let mut times = Vec::new();
    let mut dy = Vec::new();
    let mut xs = Vec::new();
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("line {}: bad number {v:?}", i + 2)))
            })
            .collect::<Result<_>>()?;
        if vals.len() != header.len() {
            return Err(Error::Config(format!("line {}: expected {} columns", i + 2, header.len())));
        }
        times.push(vals[0]);
        if i > 0 {
            dy.extend_from_slice(&vals[1..=m]);
        }
        xs.extend_from_slice(&vals[1 + m..]);
    }
    if times.len() < 2 {
        return Err(Error::RecordTooShort("record has no increments".into()));
    }
    let dt = times[1] - times[0];
    let mut obs = ObservationRecord::from_increments(dt, m, if qx > 0 { qx } else { q }, dy)?;
    obs.times = times;
    if qx > 0 {
        obs.hidden_x = Some(xs);
    }
    Ok(obs)
}

/// Little-endian container: magic, version, `q, m, dt, seed, K`, flag for
/// hidden states, then increments and optional states.
pub fn record_to_bytes(obs: &ObservationRecord) -> Vec<u8> {
    let mut b = Vec::with_capacity(48 + 8 * (obs.dy.len() + obs.hidden_x.as_ref().map_or(0, Vec::len)));
    b.extend_from_slice(RECORD_MAGIC);
    b.extend_from_slice(&RECORD_VERSION.to_le_bytes());
    b.extend_from_slice(&(obs.q as u64).to_le_bytes());
    b.extend_from_slice(&(obs.m as u64).to_le_bytes());
    b.extend_from_slice(&obs.dt.to_le_bytes());
    b.extend_from_slice(&obs.seed.to_le_bytes());
    b.extend_from_slice(&(obs.len() as u64).to_le_bytes());
    b.push(obs.hidden_x.is_some() as u8);
    for v in &obs.dy {
        b.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(x) = &obs.hidden_x {
        for v in x {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    b
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .b
            .get(self.at..self.at + N)
            .ok_or_else(|| Error::Config("truncated record container".into()))?;
        self.at += N;
        Ok(s.try_into().expect("length checked"))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn record_from_bytes(bytes: &[u8]) -> Result<ObservationRecord> {
    let mut c = Cursor { b: bytes, at: 0 };
    if &c.take::<4>()? != RECORD_MAGIC {
        return Err(Error::Config("not a record container".into()));
    }
    let version = u32::from_le_bytes(c.take()?);
    if version != RECORD_VERSION {
        return Err(Error::Config(format!("unsupported record version {version}")));
    }
    let q = c.u64()? as usize;
    let m = c.u64()? as usize;
    let dt = c.f64()?;
    let seed = c.u64()?;
    let k = c.u64()? as usize;
    let hidden = c.take::<1>()?[0] != 0;
    let dy = (0..k * m).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
    let mut obs = ObservationRecord::from_increments(dt, m, q, dy)?;
    obs.seed = seed;
    if hidden {
        obs.hidden_x = Some((0..(k + 1) * q).map(|_| c.f64()).collect::<Result<_>>()?);
    }
    if c.at != bytes.len() {
        return Err(Error::Config("trailing bytes in record container".into()));
    }
    Ok(obs)
}

pub fn write_record(obs: &ObservationRecord, path: &Path) -> Result<()> {
    let is_bin = path.extension().is_some_and(|e| e == "bin");
    if is_bin {
        fs::write(path, record_to_bytes(obs))?;
    } else {
        fs::write(path, record_to_csv(obs))?;
    }
    Ok(())
}

/// Reads a `.bin` container or a CSV record.
pub fn read_record(path: &Path, q: usize) -> Result<ObservationRecord> {
    if path.extension().is_some_and(|e| e == "bin") {
        record_from_bytes(&read_bytes(path)?)
    } else {
        record_from_csv(&read_text(path)?, q)
    }
}

/// Columns `t, pi_h_1..m, logL`.
pub fn trajectory_to_csv(run: &FilterRun) -> String {
    let mut s = String::from("t");
    for j in 0..run.m {
        let _ = write!(s, ",pi_h_{}", j + 1);
    }
    s.push_str(",logL\n");
    for (i, t) in run.times.iter().enumerate() {
        s.push_str(&num(*t));
        for v in run.pi_h_at(i) {
            s.push(',');
            s.push_str(&num(*v));
        }
        s.push(',');
        s.push_str(&num(run.log_likelihood[i]));
        s.push('\n');
    }
    s
}

/// Writes `values` as raw little-endian f64 to `path` and `{n, q, t}` to
/// `path` with a `.json` extension appended.
pub fn write_density_snapshot(p: &GridDensity, t: f64, path: &Path) -> Result<()> {
    let mut b = Vec::with_capacity(8 * p.values().len());
    for v in p.values() {
        b.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, b)?;
    let side = serde_json::json!({ "n": p.grid().n(), "q": p.grid().q(), "t": t });
    fs::write(sidecar(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

pub fn read_density_snapshot(path: &Path) -> Result<(GridDensity, f64)> {
    let side: serde_json::Value = serde_json::from_str(&read_text(&sidecar(path))?)?;
    let field = |k: &str| {
        side.get(k)
            .ok_or_else(|| Error::Config(format!("snapshot sidecar missing {k}")))
    };
    let n = field("n")?.as_u64().ok_or_else(|| Error::Config("bad n".into()))? as usize;
    let q = field("q")?.as_u64().ok_or_else(|| Error::Config("bad q".into()))? as usize;
    let t = field("t")?.as_f64().ok_or_else(|| Error::Config("bad t".into()))?;
    let grid = TorusGrid::new(q, n)?;
    let bytes = read_bytes(path)?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::GridMismatch(format!(
            "snapshot has {} bytes, grid needs {}",
            bytes.len(),
            8 * grid.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((GridDensity::new(grid, values)?, t))
}

/// Columns `window, H_before, H_after, gamma_hat, osc` (empty `gamma_hat`
/// when undefined).
pub fn audit_to_csv(report: &AuditReport) -> String {
    let mut s = String::from("window,H_before,H_after,gamma_hat,osc\n");
    for w in &report.windows {
        let g = w.gamma_hat.map(num).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            w.index,
            num(w.h_before),
            num(w.h_after),
            g,
            num(w.osc)
        );
    }
    s
}
