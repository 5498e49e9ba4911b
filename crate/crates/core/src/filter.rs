//! The nonlinear filter on the torus grid, in two numerical forms.
//!
//! * [`SplittingFilter`]: predict with one Fokker–Planck step, then correct by
//!   `exp(h^T dY - 1/2 |h|^2 dt)` and normalize.
//! * [`RobustFilter`]: over a window `[t, t+T]` evolve the gauge-transformed
//!   density `v` (drift `b + g`, source `f`) forward and divide by
//!   `E_{t,T}` at the end. The observation enters only through the
//!   cumulative increment `Y_{t+s} - Y_t`.
//!
//! The robust window map is linear in the initial density, which gives the
//! window kernel [`KernelMatrix`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::DiffusionModel;
use crate::numerics::fokker_planck::{
    Direction, FokkerPlanckPropagator, NodeCoefficients, Scheme, StepTelemetry,
};
use crate::numerics::gauge::GaugeGeometry;
use crate::numerics::grid::{project_to_torus, GridDensity, TorusGrid};
use crate::sde::ObservationRecord;
use crate::{Error, Result};

/// Values below this are raised to it after each correction.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Initial law of the filter.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    Uniform,
    /// All mass at one point of `R^q`.
    Point(Vec<f64>),
    /// Weighted atoms in `R^q`; weights need not be normalized.
    Atoms(Vec<(Vec<f64>, f64)>),
    Density(GridDensity),
    /// Stationary density of the model's signal.
    Stationary,
}

impl InitialLaw {
    /// Torus projection of the law onto `grid`.
    pub fn density(&self, model: &DiffusionModel, grid: &TorusGrid) -> Result<GridDensity> {
        match self {
            Self::Uniform => Ok(GridDensity::uniform(*grid)),
            Self::Point(x) => GridDensity::point_mass(*grid, x),
            Self::Atoms(atoms) => {
                let mut v = vec![0.0; grid.len()];
                for (x, w) in atoms {
                    if x.len() != grid.q() {
                        return Err(Error::DimensionMismatch {
                            expected: grid.q(),
                            got: x.len(),
                        });
                    }
                    if !(*w >= 0.0) {
                        return Err(Error::InvalidArgument(format!("negative atom weight {w}")));
                    }
                    v[grid.cell_of(&project_to_torus(x)?)] += w;
                }
                GridDensity::from_unnormalized(*grid, v)
            }
            Self::Density(p) => {
                if p.grid() != grid {
                    return Err(Error::GridMismatch("initial density grid".into()));
                }
                Ok(p.clone())
            }
            Self::Stationary => crate::sde::stationary_density(model, grid, 1e-12),
        }
    }

    /// Parses `uniform`, `stationary` or `point:x[,y]`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "uniform" => Ok(Self::Uniform),
            "stationary" => Ok(Self::Stationary),
            _ => {
                let Some(rest) = s.strip_prefix("point:") else {
                    return Err(Error::Config(format!("unknown initial law '{s}'")));
                };
                let x = rest
                    .split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Config(format!("bad point '{rest}': {e}")))?;
                Ok(Self::Point(x))
            }
        }
    }

    /// Inverse of [`InitialLaw::parse`] where defined.
    pub fn label(&self) -> String {
        match self {
            Self::Uniform => "uniform".into(),
            Self::Stationary => "stationary".into(),
            Self::Point(x) => format!(
                "point:{}",
                x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            ),
            Self::Atoms(_) => "atoms".into(),
            Self::Density(_) => "density".into(),
        }
    }
}

/// Filter density, time and running log-likelihood.
#[derive(Clone, Debug)]
pub struct FilterState {
    pub density: GridDensity,
    pub t: f64,
    pub log_likelihood: f64,
    pub model: Arc<DiffusionModel>,
}

/// Filter state at time 0 started from `nu`.
pub fn filter_init(model: Arc<DiffusionModel>, nu: &GridDensity) -> FilterState {
    FilterState {
        density: nu.clone(),
        t: 0.0,
        log_likelihood: 0.0,
        model,
    }
}

/// `pi[h]` by grid quadrature.
pub fn filter_mean(state: &FilterState) -> Vec<f64> {
    let grid = state.density.grid();
    let h = observation_on_grid(&state.model, grid);
    state.density.expectation(&h, state.model.m())
}

fn observation_on_grid(model: &DiffusionModel, grid: &TorusGrid) -> Vec<f64> {
    let m = model.m();
    let mut h = vec![0.0; grid.len() * m];
    let mut x = vec![0.0; grid.q()];
    for idx in 0..grid.len() {
        grid.node_into(idx, &mut x);
        model.observation(&x, &mut h[idx * m..(idx + 1) * m]);
    }
    h
}

fn weighted_mean(p: &[f64], h: &[f64], m: usize, vol: f64, out: &mut [f64]) {
    out.fill(0.0);
    for (pi, hi) in p.iter().zip(h.chunks(m)) {
        for (o, hk) in out.iter_mut().zip(hi) {
            *o += pi * hk;
        }
    }
    out.iter_mut().for_each(|o| *o *= vol);
}

/// How the log-likelihood increment is accumulated by the splitting filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodMode {
    /// `ln` of the mass of the corrected density.
    #[default]
    NormalizationMass,
    /// `pi_t[h]^T dY - 1/2 |pi_t[h]|^2 dt` with the pre-update filter.
    Quadrature,
}

/// Accumulated numerical diagnostics of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterTelemetry {
    pub fp: StepTelemetry,
    pub floor_events: usize,
    pub steps: usize,
}

impl FilterTelemetry {
    fn floor(&mut self, p: &mut [f64]) {
        for v in p.iter_mut() {
            if *v < DENSITY_FLOOR {
                *v = DENSITY_FLOOR;
                self.floor_events += 1;
            }
        }
    }
}

/// Predict–correct filter with a prefactored propagator.
pub struct SplittingFilter {
    model: Arc<DiffusionModel>,
    grid: TorusGrid,
    dt: f64,
    mode: LikelihoodMode,
    prop: FokkerPlanckPropagator,
    h: Vec<f64>,
    half_h2: Vec<f64>,
}

impl SplittingFilter {
    pub fn new(
        model: Arc<DiffusionModel>,
        grid: &TorusGrid,
        dt: f64,
        scheme: Scheme,
        mode: LikelihoodMode,
    ) -> Result<Self> {
        let coeffs = NodeCoefficients::from_model(&model, grid)?;
        let prop = FokkerPlanckPropagator::new(&coeffs, dt, scheme, Direction::Forward)?;
        let h = observation_on_grid(&model, grid);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation function on the grid".into()));
        }
        let m = model.m();
        let half_h2 = h
            .chunks(m)
            .map(|hi| 0.5 * hi.iter().map(|v| v * v).sum::<f64>())
            .collect();
        Ok(Self {
            model,
            grid: *grid,
            dt,
            mode,
            prop,
            h,
            half_h2,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Node values of `h` (`len * m`).
    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn mean(&self, p: &[f64], out: &mut [f64]) {
        weighted_mean(p, &self.h, self.model.m(), self.grid.cell_volume(), out);
    }

    /// Advances the normalized density `p` by one step with increment `dy`.
    /// Returns the log-likelihood increment.
    pub fn step(&self, p: &mut [f64], dy: &[f64], tel: &mut FilterTelemetry) -> Result<f64> {
        let m = self.model.m();
        let vol = self.grid.cell_volume();
        let mut quad = 0.0;
        if self.mode == LikelihoodMode::Quadrature {
            let mut pih = vec![0.0; m];
            self.mean(p, &mut pih);
            quad = pih
                .iter()
                .zip(dy)
                .map(|(a, y)| a * y - 0.5 * a * a * self.dt)
                .sum();
        }
        let t = self.prop.step(p);
        tel.fp.merge(&t);
        let mut mass = 0.0;
        if m == 1 {
            let y = dy[0];
            for ((pi, hi), c) in p.iter_mut().zip(&self.h).zip(&self.half_h2) {
                *pi *= (hi * y - c * self.dt).exp();
                mass += *pi;
            }
        } else {
            for (i, pi) in p.iter_mut().enumerate() {
                let e: f64 = self.h[i * m..(i + 1) * m].iter().zip(dy).map(|(h, y)| h * y).sum();
                *pi *= (e - self.half_h2[i] * self.dt).exp();
                mass += *pi;
            }
        }
        mass *= vol;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::MassUnderflow(mass));
        }
        let inv = 1.0 / mass;
        p.iter_mut().for_each(|v| *v *= inv);
        tel.floor(p);
        tel.steps += 1;
        Ok(match self.mode {
            LikelihoodMode::NormalizationMass => mass.ln(),
            LikelihoodMode::Quadrature => quad,
        })
    }

    /// Advances a [`FilterState`] in place.
    pub fn step_state(&self, state: &mut FilterState, dy: &[f64]) -> Result<FilterTelemetry> {
        if state.density.grid() != &self.grid {
            return Err(Error::GridMismatch("filter state grid".into()));
        }
        let mut tel = FilterTelemetry::default();
        let mut p = std::mem::replace(&mut state.density, GridDensity::uniform(self.grid)).into_values();
        let dl = self.step(&mut p, dy, &mut tel)?;
        state.density = GridDensity::from_unnormalized(self.grid, p)?;
        state.log_likelihood += dl;
        state.t += self.dt;
        Ok(tel)
    }
}

/// One splitting step of `state` (implicit Fokker–Planck predictor,
/// normalization-mass likelihood).
pub fn filter_step(state: &FilterState, dy: &[f64], dt: f64) -> Result<FilterState> {
    let f = SplittingFilter::new(
        state.model.clone(),
        state.density.grid(),
        dt,
        Scheme::Implicit,
        LikelihoodMode::NormalizationMass,
    )?;
    let mut next = state.clone();
    f.step_state(&mut next, dy)?;
    Ok(next)
}

/// Gauge-transformed window filter.
pub struct RobustFilter {
    geom: GaugeGeometry,
    dt: f64,
    m: usize,
}

/// Result of one robust window.
#[derive(Clone, Debug)]
pub struct WindowOutput {
    /// Normalized `v_T / E_T`.
    pub density: Vec<f64>,
    /// `ln` of the mass of `v_T / E_T` for a unit-mass start.
    pub log_mass: f64,
}

impl RobustFilter {
    pub fn new(model: &DiffusionModel, grid: &TorusGrid, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            geom: GaugeGeometry::new(model, grid)?,
            dt,
            m: model.m(),
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.geom.grid
    }

    /// Evolves every column of `cols` (`B` vectors of `len` values, each
    /// contiguous) through the window with increments `dy` (`K * m`).
    /// Columns are rescaled each step; the returned logs restore the scale.
    /// On return each column holds `v_T / E_T` up to `exp(log_scale)`.
    fn evolve(&self, cols: &mut [f64], dy: &[f64], tel: &mut FilterTelemetry) -> Result<Vec<f64>> {
        let len = self.geom.grid.len();
        let b = cols.len() / len;
        let m = self.m;
        let k_total = dy.len() / m;
        let vol = self.geom.grid.cell_volume();
        let mut log_scale = vec![0.0; b];
        let mut cum = vec![0.0; m];
        let mut expf = vec![0.0; len];
        for k in 0..k_total {
            let s = k as f64 * self.dt;
            let fields = self.geom.fields(s, &cum);
            let coeffs = self.geom.coeffs.with_extra_drift(&fields.g);
            let prop = FokkerPlanckPropagator::new(&coeffs, self.dt, Scheme::Implicit, Direction::Forward)?;
            for (e, f) in expf.iter_mut().zip(&fields.f) {
                *e = (f * self.dt).exp();
            }
            for (c, col) in cols.chunks_mut(len).enumerate() {
                let t = prop.step(col);
                tel.fp.merge(&t);
                let mut mass = 0.0;
                for (v, e) in col.iter_mut().zip(&expf) {
                    *v *= e;
                    mass += *v;
                }
                mass *= vol;
                if !(mass > 0.0 && mass.is_finite()) {
                    return Err(Error::MassUnderflow(mass));
                }
                col.iter_mut().for_each(|v| *v /= mass);
                log_scale[c] += mass.ln();
            }
            for (c, y) in cum.iter_mut().zip(&dy[k * m..(k + 1) * m]) {
                *c += y;
            }
            tel.steps += 1;
        }
        let end = self.geom.fields(k_total as f64 * self.dt, &cum);
        for (c, col) in cols.chunks_mut(len).enumerate() {
            let mut mass = 0.0;
            for (v, le) in col.iter_mut().zip(&end.log_e) {
                *v *= (-le).exp();
                mass += *v;
            }
            mass *= vol;
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(Error::MassUnderflow(mass));
            }
            col.iter_mut().for_each(|v| *v /= mass);
            log_scale[c] += mass.ln();
        }
        Ok(log_scale)
    }

    /// One window update of the normalized density `p` (window increments `dy`).
    pub fn window_update(&self, p: &[f64], dy: &[f64], tel: &mut FilterTelemetry) -> Result<WindowOutput> {
        let mut col = p.to_vec();
        let ls = self.evolve(&mut col, dy, tel)?;
        tel.floor(&mut col);
        Ok(WindowOutput {
            density: col,
            log_mass: ls[0],
        })
    }

    /// Kernel of the window starting at time `t0`.
    pub fn extract_kernel(&self, dy: &[f64], t0: f64) -> Result<KernelMatrix> {
        let grid = self.geom.grid;
        let len = grid.len();
        let vol = grid.cell_volume();
        let mut cols = vec![0.0; len * len];
        for j in 0..len {
            cols[j * len + j] = 1.0 / vol;
        }
        let mut tel = FilterTelemetry::default();
        let ls = self.evolve(&mut cols, dy, &mut tel)?;
        for (col, l) in cols.chunks_mut(len).zip(&ls) {
            let s = l.exp();
            col.iter_mut().for_each(|v| *v *= s);
        }
        let lower = cols.iter().cloned().fold(f64::INFINITY, f64::min);
        let upper = cols.iter().cloned().fold(0.0, f64::max);
        if !(lower > 0.0) || !upper.is_finite() {
            return Err(Error::NonPositiveKernel(lower));
        }
        let t1 = t0 + (dy.len() / self.m) as f64 * self.dt;
        Ok(KernelMatrix {
            grid,
            entries: cols,
            window: (t0, t1),
            lower_bound: lower,
            upper_bound: upper,
        })
    }
}

/// Robust window update of a filter state over `obs` steps `k0..k1`.
pub fn robust_window_update(
    state: &FilterState,
    obs: &ObservationRecord,
    k0: usize,
    k1: usize,
) -> Result<FilterState> {
    if k1 > obs.len() || k0 > k1 {
        return Err(Error::RecordTooShort(format!(
            "window {k0}..{k1} beyond record of {} steps",
            obs.len()
        )));
    }
    let rf = RobustFilter::new(&state.model, state.density.grid(), obs.dt)?;
    let mut tel = FilterTelemetry::default();
    let out = rf.window_update(state.density.values(), obs.window(k0, k1), &mut tel)?;
    Ok(FilterState {
        density: GridDensity::from_unnormalized(*state.density.grid(), out.density)?,
        t: state.t + (k1 - k0) as f64 * obs.dt,
        log_likelihood: state.log_likelihood + out.log_mass,
        model: state.model.clone(),
    })
}

/// Dense window kernel: `entries[x * N + z] = K(x, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix {
    pub grid: TorusGrid,
    pub entries: Vec<f64>,
    pub window: (f64, f64),
    pub lower_bound: f64,
    pub upper_bound: f64,
}

impl KernelMatrix {
    pub fn size(&self) -> usize {
        self.grid.len()
    }

    pub fn entry(&self, x: usize, z: usize) -> f64 {
        self.entries[x * self.size() + z]
    }

    /// `z -> sum_x K(x, z) mu(x) dx^q` without normalization.
    pub fn apply_unnormalized(&self, mu: &[f64]) -> Vec<f64> {
        let n = self.size();
        let vol = self.grid.cell_volume();
        let mut out = vec![0.0; n];
        for (x, row) in self.entries.chunks(n).enumerate() {
            let w = mu[x] * vol;
            if w == 0.0 {
                continue;
            }
            for (o, k) in out.iter_mut().zip(row) {
                *o += w * k;
            }
        }
        out
    }
}

/// Kernel of the window `obs` steps `k0..k1` under `model`.
pub fn extract_kernel(
    model: &DiffusionModel,
    grid: &TorusGrid,
    obs: &ObservationRecord,
    k0: usize,
    k1: usize,
) -> Result<KernelMatrix> {
    if k1 > obs.len() || k0 >= k1 {
        return Err(Error::RecordTooShort(format!(
            "window {k0}..{k1} beyond record of {} steps",
            obs.len()
        )));
    }
    RobustFilter::new(model, grid, obs.dt)?.extract_kernel(obs.window(k0, k1), obs.times[k0])
}

/// Normalized `K mu`, with the log of its mass.
pub fn apply_kernel_with_mass(k: &KernelMatrix, mu: &GridDensity) -> Result<(GridDensity, f64)> {
    if mu.grid() != &k.grid {
        return Err(Error::DimensionMismatch {
            expected: k.size(),
            got: mu.values().len(),
        });
    }
    let out = k.apply_unnormalized(mu.values());
    let mass = out.iter().sum::<f64>() * k.grid.cell_volume();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::MassUnderflow(mass));
    }
    Ok((GridDensity::from_unnormalized(k.grid, out)?, mass.ln()))
}

/// Normalized `z -> sum_x K(x, z) mu(x) dx^q`.
pub fn apply_kernel(k: &KernelMatrix, mu: &GridDensity) -> Result<GridDensity> {
    apply_kernel_with_mass(k, mu).map(|(d, _)| d)
}

/// Numerical realization used by [`run_filter`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Engine {
    Splitting,
    Robust { window_steps: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOptions {
    pub engine: Engine,
    pub scheme: Scheme,
    pub mode: LikelihoodMode,
    /// Times at which density snapshots are kept (nearest recorded time).
    pub snapshot_times: Vec<f64>,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            engine: Engine::Splitting,
            scheme: Scheme::Implicit,
            mode: LikelihoodMode::NormalizationMass,
            snapshot_times: Vec::new(),
        }
    }
}

/// Trajectory of one filter run.
#[derive(Clone, Debug)]
pub struct FilterRun {
    /// Recorded times (every step for splitting, window ends for robust).
    pub times: Vec<f64>,
    /// `pi_t[h]` at `times`, `len * m`.
    pub pi_h: Vec<f64>,
    pub log_likelihood: Vec<f64>,
    pub snapshots: Vec<(f64, GridDensity)>,
    pub final_state: FilterState,
    pub telemetry: FilterTelemetry,
    pub m: usize,
}

impl FilterRun {
    pub fn pi_h_at(&self, i: usize) -> &[f64] {
        &self.pi_h[i * self.m..(i + 1) * self.m]
    }

    pub fn final_log_likelihood(&self) -> f64 {
        self.final_state.log_likelihood
    }
}

fn wants_snapshot(times: &[f64], t: f64, dt: f64) -> bool {
    times.iter().any(|s| (s - t).abs() <= 0.5 * dt)
}

/// Folds the chosen engine over the whole record from `nu`.
pub fn run_filter(
    model: Arc<DiffusionModel>,
    nu: &GridDensity,
    obs: &ObservationRecord,
    opts: &FilterOptions,
) -> Result<FilterRun> {
    if obs.m != model.m() {
        return Err(Error::DimensionMismatch {
            expected: model.m(),
            got: obs.m,
        });
    }
    let grid = *nu.grid();
    let m = model.m();
    let vol = grid.cell_volume();
    let h = observation_on_grid(&model, &grid);
    let mut p = nu.values().to_vec();
    let mut tel = FilterTelemetry::default();
    let mut times = vec![0.0];
    let mut pi_h = vec![0.0; m];
    weighted_mean(&p, &h, m, vol, &mut pi_h);
    let mut logl = vec![0.0];
    let mut ll = 0.0;
    let mut snaps = Vec::new();
    if wants_snapshot(&opts.snapshot_times, 0.0, obs.dt) {
        snaps.push((0.0, nu.clone()));
    }
    let mut buf = vec![0.0; m];
    match opts.engine {
        Engine::Splitting => {
            let f = SplittingFilter::new(model.clone(), &grid, obs.dt, opts.scheme, opts.mode)?;
            times.reserve(obs.len());
            pi_h.reserve(obs.len() * m);
            logl.reserve(obs.len());
            for k in 0..obs.len() {
                ll += f.step(&mut p, obs.increment(k), &mut tel)?;
                let t = obs.times[k + 1];
                f.mean(&p, &mut buf);
                times.push(t);
                pi_h.extend_from_slice(&buf);
                logl.push(ll);
                if wants_snapshot(&opts.snapshot_times, t, obs.dt) {
                    snaps.push((t, GridDensity::from_unnormalized(grid, p.clone())?));
                }
            }
        }
        Engine::Robust { window_steps } => {
            if window_steps == 0 {
                return Err(Error::InvalidArgument("window must contain at least one step".into()));
            }
            let rf = RobustFilter::new(&model, &grid, obs.dt)?;
            let mut k0 = 0;
            while k0 < obs.len() {
                let k1 = (k0 + window_steps).min(obs.len());
                let out = rf.window_update(&p, obs.window(k0, k1), &mut tel)?;
                p = out.density;
                ll += out.log_mass;
                let t = obs.times[k1];
                weighted_mean(&p, &h, m, vol, &mut buf);
                times.push(t);
                pi_h.extend_from_slice(&buf);
                logl.push(ll);
                if wants_snapshot(&opts.snapshot_times, t, obs.dt) {
                    snaps.push((t, GridDensity::from_unnormalized(grid, p.clone())?));
                }
                k0 = k1;
            }
        }
    }
    let final_state = FilterState {
        density: GridDensity::from_unnormalized(grid, p)?,
        t: obs.horizon(),
        log_likelihood: ll,
        model,
    };
    Ok(FilterRun {
        times,
        pi_h,
        log_likelihood: logl,
        snapshots: snaps,
        final_state,
        telemetry: tel,
        m,
    })
}

/// Innovation increments `dY_k - pi_{t_k}[h] dt` of a splitting run.
pub fn innovation_path(run: &FilterRun, obs: &ObservationRecord) -> Result<Vec<f64>> {
    let m = obs.m;
    if run.times.len() != obs.len() + 1 || run.m != m {
        return Err(Error::InvalidArgument(format!(
            "run has {} recorded times, record needs {}",
            run.times.len(),
            obs.len() + 1
        )));
    }
    let mut out = Vec::with_capacity(obs.dy.len());
    for k in 0..obs.len() {
        for j in 0..m {
            out.push(obs.dy[k * m + j] - run.pi_h[k * m + j] * obs.dt);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_model, ModelFamily, ParameterPoint};

    fn model(c: &[f64], fam: ModelFamily) -> Arc<DiffusionModel> {
        Arc::new(make_model(&fam, &ParameterPoint::new(c.to_vec()).unwrap()).unwrap())
    }

    #[test]
    fn init_examples() {
        let m = model(&[0.5, 1.0, 0.0, 1.0], ModelFamily::GradientSine);
        let g = TorusGrid::new(1, 16).unwrap();
        let s = filter_init(m.clone(), &InitialLaw::Uniform.density(&m, &g).unwrap());
        assert_eq!(s.log_likelihood, 0.0);
        assert!(s.density.values().iter().all(|v| *v == 1.0));
        let atoms = InitialLaw::Atoms(vec![(vec![0.2], 1.0), (vec![1.2], 1.0)]);
        let d = atoms.density(&m, &g).unwrap();
        assert_eq!(d, GridDensity::point_mass(g, &[0.2]).unwrap());
    }

    #[test]
    fn mean_examples() {
        let g = TorusGrid::new(1, 32).unwrap();
        let m = model(&[0.5, 1.0, 0.0, 1.0], ModelFamily::GradientSine);
        let s = filter_init(m.clone(), &GridDensity::uniform(g));
        assert!(filter_mean(&s)[0].abs() < 1e-12);
        let x0 = g.node(5);
        let s = filter_init(m.clone(), &GridDensity::point_mass(g, &x0).unwrap());
        assert!((filter_mean(&s)[0] - (2.0 * std::f64::consts::PI * x0[0]).cos()).abs() < 1e-12);
        let c = model(&[0.4], ModelFamily::ConstantH);
        let s = filter_init(c, &GridDensity::point_mass(g, &x0).unwrap());
        assert!((filter_mean(&s)[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn zero_sensor_keeps_likelihood_flat() {
        let g = TorusGrid::new(1, 32).unwrap();
        let m = model(&[0.5, 0.0, 0.0, 1.0], ModelFamily::GradientSine);
        let obs = ObservationRecord::from_increments(1e-2, 1, 1, vec![0.3, -0.1, 0.2, 0.05]).unwrap();
        let run = run_filter(m, &GridDensity::point_mass(g, &[0.3]).unwrap(), &obs, &FilterOptions::default()).unwrap();
        assert!(run.log_likelihood.iter().all(|l| l.abs() < 1e-13));
    }

    #[test]
    fn empty_record_returns_initial_state() {
        let g = TorusGrid::new(1, 16).unwrap();
        let m = model(&[0.5, 1.0, 0.0, 1.0], ModelFamily::GradientSine);
        let obs = ObservationRecord::from_increments(1e-2, 1, 1, vec![]).unwrap();
        let nu = GridDensity::point_mass(g, &[0.3]).unwrap();
        let run = run_filter(m, &nu, &obs, &FilterOptions::default()).unwrap();
        assert_eq!(run.times, vec![0.0]);
        assert_eq!(run.final_state.density, nu);
    }

    #[test]
    fn constant_sensor_likelihood_closed_form() {
        let g = TorusGrid::new(1, 16).unwrap();
        let c = 0.7;
        let m = model(&[c], ModelFamily::ConstantH);
        let dy: Vec<f64> = (0..200).map(|k| 0.01 * (k as f64).sin()).collect();
        let obs = ObservationRecord::from_increments(1e-2, 1, 1, dy.clone()).unwrap();
        let y: f64 = dy.iter().sum();
        let want = c * y - 0.5 * c * c * 2.0;
        for mode in [LikelihoodMode::NormalizationMass, LikelihoodMode::Quadrature] {
            let opts = FilterOptions { mode, ..Default::default() };
            let run = run_filter(m.clone(), &GridDensity::uniform(g), &obs, &opts).unwrap();
            assert!((run.final_log_likelihood() - want).abs() < 1e-10);
        }
        let opts = FilterOptions { engine: Engine::Robust { window_steps: 50 }, ..Default::default() };
        let run = run_filter(m, &GridDensity::uniform(g), &obs, &opts).unwrap();
        assert!((run.final_log_likelihood() - want).abs() < 1e-10);
    }

    #[test]
    fn kernel_point_mass_column() {
        let g = TorusGrid::new(1, 16).unwrap();
        let m = model(&[0.5, 1.0, 0.2, 0.8], ModelFamily::GradientSine);
        let dy: Vec<f64> = (0..100).map(|k| 0.03 * ((k as f64) * 0.7).cos()).collect();
        let obs = ObservationRecord::from_increments(1e-2, 1, 1, dy).unwrap();
        let k = extract_kernel(&m, &g, &obs, 0, 100).unwrap();
        assert!(k.lower_bound > 0.0);
        let mu = GridDensity::point_mass(g, &g.node(3)).unwrap();
        let out = apply_kernel(&k, &mu).unwrap();
        let row: Vec<f64> = (0..16).map(|z| k.entry(3, z)).collect();
        let s: f64 = row.iter().sum::<f64>() * g.dx();
        for (a, b) in out.values().iter().zip(&row) {
            assert!((a - b / s).abs() < 1e-12 * (1.0 + a));
        }
        assert!((out.mass() - 1.0).abs() < 1e-12);
    }
}
