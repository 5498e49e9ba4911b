//! Hilbert projective distance, total variation and path oscillation, and
//! the per-window contraction audit of two filters sharing one record.

use serde::Serialize;

use crate::filter::{apply_kernel_with_mass, RobustFilter};
use crate::model::DiffusionModel;
use crate::numerics::grid::GridDensity;
use crate::sde::ObservationRecord;
use crate::{Error, Result};

/// Hilbert distance `(1 - r) / (1 + r)`, `r = inf(f/g) / sup(f/g)` over
/// `{g > 0}`, computed as `tanh(d / 2)` with `d` the spread of `ln(f/g)`.
/// Infinite when `f` charges a cell where `g` vanishes.
pub fn hilbert_metric_values(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() {
        return Err(Error::GridMismatch(format!("{} vs {} values", f.len(), g.len())));
    }
    if f.iter().chain(g).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "Hilbert metric needs finite nonnegative inputs".into(),
        ));
    }
    if f.iter().all(|v| *v == 0.0) || g.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidArgument("input is identically zero".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (a, b) in f.iter().zip(g) {
        if *b == 0.0 {
            if *a > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        let l = if *a == 0.0 { f64::NEG_INFINITY } else { a.ln() - b.ln() };
        lo = lo.min(l);
        hi = hi.max(l);
    }
    if lo == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    Ok((0.5 * (hi - lo)).tanh())
}

pub fn hilbert_metric(f: &GridDensity, g: &GridDensity) -> Result<f64> {
    if f.grid() != g.grid() {
        return Err(Error::GridMismatch("Hilbert metric on different grids".into()));
    }
    hilbert_metric_values(f.values(), g.values())
}

/// `1/2 sum |mu - nu| dx^q`.
pub fn tv_distance(mu: &GridDensity, nu: &GridDensity) -> Result<f64> {
    if mu.grid() != nu.grid() {
        return Err(Error::GridMismatch("total variation on different grids".into()));
    }
    let s: f64 = mu
        .values()
        .iter()
        .zip(nu.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(0.5 * s * mu.grid().cell_volume())
}

/// Euclidean norm of the componentwise ranges of a sampled path
/// (`samples * m` values).
pub fn oscillation(path: &[f64], m: usize) -> Result<f64> {
    if path.is_empty() || m == 0 || path.len() % m != 0 {
        return Err(Error::InvalidArgument("empty or ragged path".into()));
    }
    let mut sq = 0.0;
    for j in 0..m {
        let (lo, hi) = path
            .iter()
            .skip(j)
            .step_by(m)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        sq += (hi - lo) * (hi - lo);
    }
    Ok(sq.sqrt())
}

/// Below this the second filter is restarted before the next window.
pub const AUDIT_RESET_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditWindow {
    pub index: usize,
    pub t_start: f64,
    pub h_before: f64,
    pub h_after: f64,
    /// `-ln(H_after / H_before)` when both are positive.
    pub gamma_hat: Option<f64>,
    pub osc: f64,
    pub kernel_min: f64,
    pub kernel_max: f64,
    /// The second filter was restarted from its initial law before this window.
    pub reset: bool,
    pub increased: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub windows: Vec<AuditWindow>,
}

impl AuditReport {
    pub fn flags(&self) -> usize {
        self.windows.iter().filter(|w| w.increased).count()
    }

    pub fn kernels_positive(&self) -> bool {
        self.windows.iter().all(|w| w.kernel_min > 0.0)
    }

    /// `(gamma_hat, osc)` pairs of windows where a factor is defined.
    pub fn factor_pairs(&self) -> (Vec<f64>, Vec<f64>) {
        self.windows
            .iter()
            .filter_map(|w| w.gamma_hat.map(|g| (g, w.osc)))
            .unzip()
    }
}

/// Runs two filters from `nu` and `nu2` on the same record, advancing both
/// through each window of `window_steps` steps with the window's extracted
/// kernel, and records the Hilbert distance before and after.
///
/// When the distance has collapsed below [`AUDIT_RESET_THRESHOLD`] the
/// second filter restarts from `nu2` so that later windows still measure a
/// contraction; such windows are marked `reset`.
pub fn contraction_audit(
    model: &DiffusionModel,
    obs: &ObservationRecord,
    nu: &GridDensity,
    nu2: &GridDensity,
    window_steps: usize,
) -> Result<AuditReport> {
    if nu.grid() != nu2.grid() {
        return Err(Error::GridMismatch("audit initial laws on different grids".into()));
    }
    if window_steps == 0 {
        return Err(Error::InvalidArgument("empty audit window".into()));
    }
    let rf = RobustFilter::new(model, nu.grid(), obs.dt)?;
    let y = obs.cumulative();
    let m = obs.m;
    let mut p = nu.clone();
    let mut p2 = nu2.clone();
    let mut windows = Vec::new();
    let n_windows = obs.len() / window_steps;
    for w in 0..n_windows {
        let (k0, k1) = (w * window_steps, (w + 1) * window_steps);
        let mut h_before = hilbert_metric(&p, &p2)?;
        let mut reset = false;
        if h_before < AUDIT_RESET_THRESHOLD && nu != nu2 {
            p2 = nu2.clone();
            h_before = hilbert_metric(&p, &p2)?;
            reset = true;
        }
        let k = rf.extract_kernel(obs.window(k0, k1), obs.times[k0])?;
        p = apply_kernel_with_mass(&k, &p)?.0;
        p2 = apply_kernel_with_mass(&k, &p2)?.0;
        let h_after = hilbert_metric(&p, &p2)?;
        let gamma_hat = (h_before > 0.0 && h_after > 0.0 && h_before.is_finite())
            .then(|| -(h_after / h_before).ln());
        windows.push(AuditWindow {
            index: w,
            t_start: obs.times[k0],
            h_before,
            h_after,
            gamma_hat,
            osc: oscillation(&y[k0 * m..(k1 + 1) * m], m)?,
            kernel_min: k.lower_bound,
            kernel_max: k.upper_bound,
            reset,
            increased: h_after > h_before,
        });
    }
    Ok(AuditReport { windows })
}
