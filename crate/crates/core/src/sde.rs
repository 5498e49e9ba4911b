//! Simulation of the signal and observation, stationary densities and the
//! reflection coupling of two signal copies.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::DiffusionModel;
use crate::numerics::fokker_planck::{Direction, FokkerPlanckPropagator, NodeCoefficients, Scheme};
use crate::numerics::grid::{wrap_unit, GridDensity, TorusGrid};
use crate::rng::{self, tag, Rng};
use crate::stats::{self, LinearFit};
use crate::{Error, Result};

/// Initial law of a simulation.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialCondition {
    Point(Vec<f64>),
    Density(GridDensity),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Replica index; selects an independent random stream.
    pub stream: u64,
    pub initial: InitialCondition,
    pub record_hidden: bool,
}

impl SimulationConfig {
    pub fn new(dt: f64, horizon: f64, seed: u64, initial: InitialCondition) -> Self {
        Self {
            dt,
            horizon,
            seed,
            stream: 0,
            initial,
            record_hidden: false,
        }
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_hidden(mut self, record: bool) -> Self {
        self.record_hidden = record;
        self
    }

    fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be nonnegative, got {}",
                self.horizon
            )));
        }
        Ok((self.horizon / self.dt).round() as usize)
    }
}

/// Observation increments on a uniform time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub dt: f64,
    pub m: usize,
    pub q: usize,
    pub seed: u64,
    /// `K + 1` times `t_k = k dt`.
    pub times: Vec<f64>,
    /// `K * m`; row `k` is `Y_{t_{k+1}} - Y_{t_k}`.
    pub dy: Vec<f64>,
    /// `(K + 1) * q` signal points, if recorded.
    pub hidden_x: Option<Vec<f64>>,
}

impl ObservationRecord {
    /// Record from raw increments (`K * m`) on the grid `k dt`.
    pub fn from_increments(dt: f64, m: usize, q: usize, dy: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || m == 0 || dy.len() % m != 0 {
            return Err(Error::InvalidArgument("malformed observation increments".into()));
        }
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation increment".into()));
        }
        let k = dy.len() / m;
        Ok(Self {
            dt,
            m,
            q,
            seed: 0,
            times: (0..=k).map(|i| i as f64 * dt).collect(),
            dy,
            hidden_x: None,
        })
    }

    /// Number of increments `K`.
    pub fn len(&self) -> usize {
        self.dy.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.dy.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.dy[k * self.m..(k + 1) * self.m]
    }

    /// Increments of steps `k0..k1`.
    pub fn window(&self, k0: usize, k1: usize) -> &[f64] {
        &self.dy[k0 * self.m..k1 * self.m]
    }

    /// `Y_{t_k}` for `k = 0..=K`, flattened `(K + 1) * m`, with `Y_0 = 0`.
    pub fn cumulative(&self) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; (self.len() + 1) * m];
        for k in 0..self.len() {
            for j in 0..m {
                out[(k + 1) * m + j] = out[k * m + j] + self.dy[k * m + j];
            }
        }
        out
    }

    /// First `k` increments.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len());
        Self {
            dt: self.dt,
            m: self.m,
            q: self.q,
            seed: self.seed,
            times: self.times[..=k].to_vec(),
            dy: self.dy[..k * self.m].to_vec(),
            hidden_x: self.hidden_x.as_ref().map(|x| x[..(k + 1) * self.q].to_vec()),
        }
    }
}

/// Inverse-CDF sampler for a grid density (uniform within each cell).
#[derive(Clone, Debug)]
pub struct DensitySampler {
    grid: TorusGrid,
    cdf: Vec<f64>,
}

impl DensitySampler {
    pub fn new(p: &GridDensity) -> Self {
        let mut acc = 0.0;
        let cdf = p
            .values()
            .iter()
            .map(|v| {
                acc += v;
                acc
            })
            .collect::<Vec<_>>();
        let total = acc;
        Self {
            grid: *p.grid(),
            cdf: cdf.into_iter().map(|c| c / total).collect(),
        }
    }

    /// Draws with `q + 1` uniforms; the same uniforms give the same point.
    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        let u: f64 = rng.random();
        let cell = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        // Skip zero-mass cells hit through rounding.
        let cell = if cell > 0 && self.cdf[cell] == self.cdf[cell - 1] {
            self.cdf[..cell].partition_point(|&c| c < self.cdf[cell])
        } else {
            cell
        };
        let n = self.grid.n();
        let dx = self.grid.dx();
        let mut rest = cell;
        for c in out.iter_mut().take(self.grid.q()) {
            let i = rest % n;
            rest /= n;
            *c = (i as f64 + rng.random::<f64>()) * dx;
        }
    }
}

fn initial_point(init: &InitialCondition, q: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    match init {
        InitialCondition::Point(x) => {
            if x.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: x.len(),
                });
            }
            Ok(x.clone())
        }
        InitialCondition::Density(p) => {
            if p.grid().q() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: p.grid().q(),
                });
            }
            let mut x = vec![0.0; q];
            DensitySampler::new(p).sample_into(rng, &mut x);
            Ok(x)
        }
    }
}

/// One Euler–Maruyama step `x += b dt + sigma dw` with `dw` already scaled by `sqrt(dt)`.
fn em_step(model: &DiffusionModel, x: &mut [f64], dt: f64, dw: &[f64], b: &mut [f64], s: &mut [f64]) {
    let (q, d) = (model.q(), model.d());
    model.drift(x, b);
    model.sigma(x, s);
    for i in 0..q {
        let mut noise = 0.0;
        for k in 0..d {
            noise += s[i * d + k] * dw[k];
        }
        x[i] += b[i] * dt + noise;
    }
}

/// Euler–Maruyama simulation of the signal and the observation increments
/// `dY_k = h(X_{t_k}) dt + sqrt(dt) xi_k`.
pub fn simulate_signal_observation(
    model: &DiffusionModel,
    cfg: &SimulationConfig,
) -> Result<ObservationRecord> {
    let k_total = cfg.steps()?;
    let (q, d, m) = (model.q(), model.d(), model.m());
    let dt = cfg.dt;
    let sq = dt.sqrt();
    let mut rng_init = rng::stream(cfg.seed, cfg.stream, tag::INITIAL);
    let mut rng_x = rng::stream(cfg.seed, cfg.stream, tag::SIGNAL);
    let mut rng_y = rng::stream(cfg.seed, cfg.stream, tag::OBSERVATION);
    let mut x = initial_point(&cfg.initial, q, &mut rng_init)?;
    let mut dy = vec![0.0; k_total * m];
    let mut hidden = cfg.record_hidden.then(|| {
        let mut v = Vec::with_capacity((k_total + 1) * q);
        v.extend_from_slice(&x);
        v
    });
    let mut h = vec![0.0; m];
    let mut b = vec![0.0; q];
    let mut s = vec![0.0; q * d];
    let mut dw = vec![0.0; d];
    for k in 0..k_total {
        model.observation(&x, &mut h);
        for j in 0..m {
            let xi: f64 = rng_y.sample(StandardNormal);
            dy[k * m + j] = h[j] * dt + sq * xi;
        }
        for w in dw.iter_mut() {
            *w = sq * rng_x.sample::<f64, _>(StandardNormal);
        }
        em_step(model, &mut x, dt, &dw, &mut b, &mut s);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(k));
        }
        if let Some(hx) = hidden.as_mut() {
            hx.extend_from_slice(&x);
        }
    }
    Ok(ObservationRecord {
        dt,
        m,
        q,
        seed: cfg.seed,
        times: (0..=k_total).map(|i| i as f64 * dt).collect(),
        dy,
        hidden_x: hidden,
    })
}

/// Observation under the reference measure: `dY` is pure Brownian noise.
pub fn simulate_reference_record(
    m: usize,
    q: usize,
    dt: f64,
    horizon: f64,
    seed: u64,
    stream: u64,
) -> Result<ObservationRecord> {
    let k_total = (horizon / dt).round() as usize;
    let sq = dt.sqrt();
    let mut r = rng::stream(seed, stream, tag::REFERENCE);
    let dy = (0..k_total * m)
        .map(|_| sq * r.sample::<f64, _>(StandardNormal))
        .collect();
    let mut rec = ObservationRecord::from_increments(dt, m, q, dy)?;
    rec.seed = seed;
    Ok(rec)
}

/// Pseudo-time step for the stationary power iteration.
fn stationary_pseudo_step(grid: &TorusGrid) -> f64 {
    if grid.q() == 1 {
        100.0
    } else {
        10.0 * grid.dx() * grid.dx()
    }
}

/// Maximum number of power iterations in [`stationary_density`].
pub const STATIONARY_MAX_ITER: usize = 100_000;

/// Stationary density of the projected signal: the fixed point of the
/// implicit Fokker–Planck map found by power iteration, stopped once the L1
/// change between iterates drops below `tol`. For `q = 1` the fixed point is
/// the null vector of the discrete generator, independent of the step.
pub fn stationary_density(model: &DiffusionModel, grid: &TorusGrid, tol: f64) -> Result<GridDensity> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let coeffs = NodeCoefficients::from_model(model, grid)?;
    let prop = FokkerPlanckPropagator::new(
        &coeffs,
        stationary_pseudo_step(grid),
        Scheme::Implicit,
        Direction::Forward,
    )?;
    let vol = grid.cell_volume();
    let mut p = vec![1.0; grid.len()];
    for _ in 0..STATIONARY_MAX_ITER {
        let mut next = p.clone();
        prop.step(&mut next);
        let mass: f64 = next.iter().sum::<f64>() * vol;
        next.iter_mut().for_each(|v| *v /= mass);
        let change: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>() * vol;
        p = next;
        if change < tol {
            let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(min > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "stationary density not strictly positive (min {min})"
                )));
            }
            return GridDensity::from_unnormalized(*grid, p);
        }
    }
    Err(Error::NonConvergence(STATIONARY_MAX_ITER))
}

/// Outcome of one coupled run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingResult {
    /// Coupling time; infinite when not coupled by the horizon.
    pub tau: f64,
    /// Lattice vector `l` with `X~_tau - X-_tau = l`.
    pub integer_offset: Option<Vec<i64>>,
    pub x_tilde_end: Vec<f64>,
    pub x_bar_end: Vec<f64>,
    /// Time integral of `|h(X~) - h(X-)|` (Euclidean norm) over the run.
    pub h_gap_integral: f64,
    /// Full paths `(K + 1) * q` when `record_hidden` is set.
    pub paths: Option<(Vec<f64>, Vec<f64>)>,
}

/// Orthonormal basis of the complement of `y` (`q - 1` vectors of length `q`):
/// Gram–Schmidt on the coordinate axes with the largest-|component| axis
/// of `y` left out.
pub fn complement_frame(y: &[f64]) -> Vec<Vec<f64>> {
    let q = y.len();
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = y.iter().map(|v| v / norm).collect();
    let pivot = (0..q)
        .max_by(|&a, &b| y[a].abs().total_cmp(&y[b].abs()))
        .unwrap_or(0);
    let mut basis: Vec<Vec<f64>> = vec![u];
    for axis in (0..q).filter(|&i| i != pivot) {
        let mut e = vec![0.0; q];
        e[axis] = 1.0;
        for b in &basis {
            let dot: f64 = e.iter().zip(b).map(|(x, y)| x * y).sum();
            for (ei, bi) in e.iter_mut().zip(b) {
                *ei -= dot * bi;
            }
        }
        let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        e.iter_mut().for_each(|v| *v /= n);
        basis.push(e);
    }
    basis.remove(0);
    basis
}

/// Solves `sigma z = r` for square `sigma` (row-major `q x q`, `q <= 2`).
fn solve_sigma(s: &[f64], r: &[f64], out: &mut [f64]) -> bool {
    match r.len() {
        1 => {
            if s[0] == 0.0 {
                return false;
            }
            out[0] = r[0] / s[0];
            true
        }
        2 => {
            let det = s[0] * s[3] - s[1] * s[2];
            if det.abs() < 1e-14 {
                return false;
            }
            out[0] = (s[3] * r[0] - s[1] * r[1]) / det;
            out[1] = (-s[2] * r[0] + s[0] * r[1]) / det;
            true
        }
        _ => false,
    }
}

fn check_coupling_model(model: &DiffusionModel, grid: &TorusGrid) -> Result<()> {
    if model.d() != model.q() {
        return Err(Error::InvalidArgument(format!(
            "coupling needs a square diffusion (d = q), got d={} q={}",
            model.d(),
            model.q()
        )));
    }
    if model.q() > 2 {
        return Err(Error::InvalidArgument("coupling supports q <= 2".into()));
    }
    let q = model.q();
    let mut s = vec![0.0; q * q];
    let mut z = vec![0.0; q];
    let mut x = vec![0.0; q];
    let probe = vec![1.0; q];
    for idx in 0..grid.len() {
        grid.node_into(idx, &mut x);
        model.sigma(&x, &mut s);
        if !solve_sigma(&s, &probe, &mut z) {
            return Err(Error::SingularDiffusion(x.clone()));
        }
    }
    Ok(())
}

/// Reflection-coupled pair started from `nu` and `nu2`.
///
/// The two initial points are drawn with common uniforms, so identical
/// initial laws start coupled. Coupling is declared when the torus distance
/// drops below half a cell of `nu`'s grid; from then on `X-` is `X~` minus
/// the frozen lattice offset.
pub fn simulate_coupled_pair(
    model: &DiffusionModel,
    nu: &GridDensity,
    nu2: &GridDensity,
    cfg: &SimulationConfig,
) -> Result<CouplingResult> {
    check_coupling_model(model, nu.grid())?;
    run_coupled(model, nu, nu2, cfg, false)
}

fn run_coupled(
    model: &DiffusionModel,
    nu: &GridDensity,
    nu2: &GridDensity,
    cfg: &SimulationConfig,
    stop_at_coupling: bool,
) -> Result<CouplingResult> {
    let q = model.q();
    if nu.grid().q() != q || nu2.grid().q() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: nu.grid().q(),
        });
    }
    let k_total = cfg.steps()?;
    let dt = cfg.dt;
    let sq = dt.sqrt();
    let radius = 0.5 * nu.grid().dx();
    let mut rng_init = rng::stream(cfg.seed, cfg.stream, tag::INITIAL);
    let mut rng_w = rng::stream(cfg.seed, cfg.stream, tag::COUPLING);
    let mut xt = vec![0.0; q];
    let mut xb = vec![0.0; q];
    {
        let mut r2 = rng_init.clone();
        DensitySampler::new(nu).sample_into(&mut rng_init, &mut xt);
        DensitySampler::new(nu2).sample_into(&mut r2, &mut xb);
    }
    let mut paths = cfg
        .record_hidden
        .then(|| (xt.clone(), xb.clone()));
    let m = model.m();
    let (mut ht, mut hb) = (vec![0.0; m], vec![0.0; m]);
    let (mut bt, mut bb) = (vec![0.0; q], vec![0.0; q]);
    let (mut st, mut sb) = (vec![0.0; q * q], vec![0.0; q * q]);
    let mut z = vec![0.0; q];
    let mut yt = vec![0.0; q];
    let mut yb = vec![0.0; q];
    let mut dwt = vec![0.0; q];
    let mut dwb = vec![0.0; q];
    let mut gap_integral = 0.0;

    let torus_gap = |xt: &[f64], xb: &[f64], z: &mut [f64]| -> (f64, Vec<i64>) {
        let mut l = vec![0i64; xt.len()];
        let mut d2 = 0.0;
        for i in 0..xt.len() {
            let diff = xt[i] - xb[i];
            let li = diff.round();
            l[i] = li as i64;
            z[i] = diff - li;
            d2 += z[i] * z[i];
        }
        (d2.sqrt(), l)
    };

    let mut tau = f64::INFINITY;
    let mut offset = None;
    let (dist, l) = torus_gap(&xt, &xb, &mut z);
    if dist < radius {
        tau = 0.0;
        offset = Some(l.clone());
        for i in 0..q {
            xb[i] = xt[i] - l[i] as f64;
        }
    }

    for k in 0..k_total {
        model.observation(&xt, &mut ht);
        model.observation(&xb, &mut hb);
        gap_integral += dt * ht.iter().zip(&hb).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if let Some(l) = &offset {
            if stop_at_coupling {
                break;
            }
            for w in dwt.iter_mut() {
                *w = sq * rng_w.sample::<f64, _>(StandardNormal);
            }
            em_step(model, &mut xt, dt, &dwt, &mut bt, &mut st);
            for i in 0..q {
                xb[i] = xt[i] - l[i] as f64;
            }
        } else {
            torus_gap(&xt, &xb, &mut z);
            model.sigma(&xt, &mut st);
            model.sigma(&xb, &mut sb);
            if !solve_sigma(&st, &z, &mut yt) || !solve_sigma(&sb, &z, &mut yb) {
                return Err(Error::SingularDiffusion(xt.clone()));
            }
            let radial: f64 = sq * rng_w.sample::<f64, _>(StandardNormal);
            let shared: Vec<f64> = (0..q.saturating_sub(1))
                .map(|_| sq * rng_w.sample::<f64, _>(StandardNormal))
                .collect();
            let nt = yt.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = yb.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ft = complement_frame(&yt);
            let fb = complement_frame(&yb);
            for i in 0..q {
                dwt[i] = yt[i] / nt * radial;
                dwb[i] = -yb[i] / nb * radial;
                for (j, w) in shared.iter().enumerate() {
                    dwt[i] += ft[j][i] * w;
                    dwb[i] += fb[j][i] * w;
                }
            }
            em_step(model, &mut xt, dt, &dwt, &mut bt, &mut st);
            em_step(model, &mut xb, dt, &dwb, &mut bb, &mut sb);
            let (dist, l) = torus_gap(&xt, &xb, &mut z);
            if dist < radius {
                tau = (k + 1) as f64 * dt;
                for i in 0..q {
                    xb[i] = xt[i] - l[i] as f64;
                }
                offset = Some(l);
            }
        }
        if xt.iter().chain(&xb).any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(k));
        }
        if let Some((pt, pb)) = paths.as_mut() {
            pt.extend_from_slice(&xt);
            pb.extend_from_slice(&xb);
        }
    }
    Ok(CouplingResult {
        tau,
        integer_offset: offset,
        x_tilde_end: xt,
        x_bar_end: xb,
        h_gap_integral: gap_integral,
        paths,
    })
}

/// Empirical survival curve of the coupling time with a log-linear fit.
#[derive(Clone, Debug, Serialize)]
pub struct CouplingTail {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub taus: Vec<f64>,
    /// Fit of `ln survival` against `t` over the region where
    /// `survival <= 0.8` and at least ten runs survive.
    pub fit: Option<TailFit>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_se: f64,
    /// Bootstrap standard error of the slope (runs resampled).
    pub bootstrap_se: f64,
    pub points: usize,
}

/// Number of time points in the survival curve.
pub const TAIL_POINTS: usize = 200;
const TAIL_BOOTSTRAP: usize = 200;

fn survival_curve(taus: &[f64], times: &[f64]) -> Vec<f64> {
    let mut sorted = taus.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = taus.len() as f64;
    times
        .iter()
        .map(|&t| (sorted.len() - sorted.partition_point(|&x| x <= t)) as f64 / n)
        .collect()
}

fn tail_fit(taus: &[f64], times: &[f64]) -> Option<LinearFit> {
    let surv = survival_curve(taus, times);
    let n = taus.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&surv)
        .filter(|(_, &s)| s <= 0.8 && s * n >= 10.0)
        .map(|(&t, &s)| (t, s.ln()))
        .unzip();
    (xs.len() >= 3).then(|| stats::linear_fit(&xs, &ys))
}

/// Survival curve `t -> P(tau > t)` over `n_runs` coupled runs up to `horizon`.
pub fn coupling_tail(
    model: &DiffusionModel,
    nu: &GridDensity,
    nu2: &GridDensity,
    n_runs: usize,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<CouplingTail> {
    if n_runs < 100 {
        return Err(Error::InvalidArgument(format!(
            "coupling tail needs at least 100 runs, got {n_runs}"
        )));
    }
    check_coupling_model(model, nu.grid())?;
    let taus: Vec<f64> = (0..n_runs as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = SimulationConfig::new(dt, horizon, seed, InitialCondition::Point(vec![]))
                .with_stream(r);
            run_coupled(model, nu, nu2, &cfg, true).map(|c| c.tau)
        })
        .collect::<Result<_>>()?;
    let times: Vec<f64> = (0..=TAIL_POINTS)
        .map(|i| horizon * i as f64 / TAIL_POINTS as f64)
        .collect();
    let survival = survival_curve(&taus, &times);
    let fit = tail_fit(&taus, &times).map(|f| {
        let mut rng = rng::stream(seed, 0, tag::BOOTSTRAP);
        let mut slopes = Vec::with_capacity(TAIL_BOOTSTRAP);
        let mut sample = vec![0.0; taus.len()];
        for _ in 0..TAIL_BOOTSTRAP {
            for s in sample.iter_mut() {
                *s = taus[rng.random_range(0..taus.len())];
            }
            if let Some(bf) = tail_fit(&sample, &times) {
                slopes.push(bf.slope);
            }
        }
        TailFit {
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
            slope_se: f.slope_se,
            bootstrap_se: stats::variance(&slopes).sqrt(),
            points: f.n,
        }
    });
    Ok(CouplingTail {
        times,
        survival,
        taus,
        fit,
    })
}

/// End point at `horizon` of an independently simulated signal from `nu`.
pub fn simulate_signal_endpoint(
    model: &DiffusionModel,
    nu: &GridDensity,
    dt: f64,
    horizon: f64,
    seed: u64,
    stream: u64,
) -> Result<Vec<f64>> {
    let q = model.q();
    let k_total = (horizon / dt).round() as usize;
    let sq = dt.sqrt();
    let mut rng_init = rng::stream(seed, stream, tag::INITIAL);
    let mut rng_x = rng::stream(seed, stream, tag::SIGNAL);
    let mut x = vec![0.0; q];
    DensitySampler::new(nu).sample_into(&mut rng_init, &mut x);
    let mut b = vec![0.0; q];
    let mut s = vec![0.0; q * model.d()];
    let mut dw = vec![0.0; model.d()];
    for k in 0..k_total {
        for w in dw.iter_mut() {
            *w = sq * rng_x.sample::<f64, _>(StandardNormal);
        }
        em_step(model, &mut x, dt, &dw, &mut b, &mut s);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(k));
        }
    }
    Ok(x)
}

/// Torus projection of a scalar.
pub fn torus(x: f64) -> f64 {
    wrap_unit(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_model, ModelFamily, ParameterPoint};
    use std::f64::consts::PI;

    fn sine(c: [f64; 4]) -> DiffusionModel {
        make_model(&ModelFamily::GradientSine, &ParameterPoint::new(c.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn deterministic_given_seed() {
        let m = sine([0.5, 1.0, 0.0, 1.0]);
        let cfg = SimulationConfig::new(1e-2, 5.0, 42, InitialCondition::Point(vec![0.1])).with_hidden(true);
        let a = simulate_signal_observation(&m, &cfg).unwrap();
        let b = simulate_signal_observation(&m, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        assert_eq!(a.hidden_x.as_ref().unwrap().len(), 501);
        let c = simulate_signal_observation(&m, &cfg.clone().with_stream(1)).unwrap();
        assert_ne!(a.dy, c.dy);
    }

    #[test]
    fn zero_sensor_gives_pure_noise() {
        let m = sine([0.5, 0.0, 0.0, 1.0]);
        let cfg = SimulationConfig::new(1e-2, 400.0, 3, InitialCondition::Point(vec![0.0]));
        let r = simulate_signal_observation(&m, &cfg).unwrap();
        let y_t: f64 = r.dy.iter().sum();
        // Y_T / T ~ N(0, 1/T): 3 sigma band.
        assert!((y_t / 400.0).abs() < 3.0 / 400f64.sqrt());
    }

    #[test]
    fn stationary_matches_gibbs() {
        let (tb, s0) = (0.8, 0.7);
        let m = sine([tb, 1.0, 0.0, s0]);
        let n = 128;
        let g = TorusGrid::new(1, n).unwrap();
        let p = stationary_density(&m, &g, 1e-13).unwrap();
        let w: Vec<f64> = (0..n)
            .map(|i| (-tb * (2.0 * PI * g.node(i)[0]).cos() / (PI * s0 * s0)).exp())
            .collect();
        let z: f64 = w.iter().sum::<f64>() * g.dx();
        let err = w
            .iter()
            .zip(p.values())
            .map(|(a, b)| (a / z - b).abs())
            .fold(0.0, f64::max);
        let dx = g.dx();
        assert!(err <= 10.0 * dx * dx, "sup error {err}");
    }

    #[test]
    fn stationary_zero_drift_is_uniform() {
        let m = sine([0.0, 1.0, 0.0, 0.6]);
        let g = TorusGrid::new(1, 32).unwrap();
        let p = stationary_density(&m, &g, 1e-13).unwrap();
        assert!(p.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn frame_is_orthonormal_complement() {
        let y = [0.3, -1.2];
        let f = complement_frame(&y);
        assert_eq!(f.len(), 1);
        let dot = f[0][0] * y[0] + f[0][1] * y[1];
        assert!(dot.abs() < 1e-14);
        assert!((f[0][0].powi(2) + f[0][1].powi(2) - 1.0).abs() < 1e-14);
        assert!(complement_frame(&[2.0]).is_empty());
    }

    #[test]
    fn identical_point_masses_couple_at_zero() {
        let m = sine([0.5, 1.0, 0.0, 1.0]);
        let g = TorusGrid::new(1, 64).unwrap();
        let nu = GridDensity::point_mass(g, &[0.3]).unwrap();
        let cfg = SimulationConfig::new(1e-3, 1.0, 1, InitialCondition::Point(vec![]));
        let r = simulate_coupled_pair(&m, &nu, &nu, &cfg).unwrap();
        assert_eq!(r.tau, 0.0);
        assert_eq!(r.integer_offset, Some(vec![0]));
        assert_eq!(r.x_tilde_end, r.x_bar_end);
    }

    #[test]
    fn coupled_difference_frozen_after_tau() {
        let m = sine([0.5, 1.0, 0.0, 1.0]);
        let g = TorusGrid::new(1, 64).unwrap();
        let nu = GridDensity::point_mass(g, &[0.1]).unwrap();
        let nu2 = GridDensity::point_mass(g, &[0.6]).unwrap();
        let cfg = SimulationConfig::new(1e-3, 20.0, 5, InitialCondition::Point(vec![])).with_hidden(true);
        let r = simulate_coupled_pair(&m, &nu, &nu2, &cfg).unwrap();
        assert!(r.tau.is_finite());
        let k0 = (r.tau / 1e-3).round() as usize;
        let (pt, pb) = r.paths.unwrap();
        let l = r.integer_offset.unwrap()[0] as f64;
        for k in k0..pt.len() {
            assert!((pt[k] - pb[k] - l).abs() < 1e-9);
        }
    }
}
