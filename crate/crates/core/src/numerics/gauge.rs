//! Gauge transformation of the filter by `E_{t,s}(x) = exp(1/2 |h|^2 s - h^T (Y_{t+s} - Y_t))`
//! and the backward PDE `du/dt + L u + g^T grad u + f u = 0`.

use super::fokker_planck::{Direction, FokkerPlanckPropagator, NodeCoefficients, Scheme};
use super::grid::{GridField, TorusGrid};
use crate::model::DiffusionModel;
use crate::{Error, Result};

/// Largest step count accepted by the time-stepping routines.
pub const MAX_STEPS: usize = 100_000_000;

/// Model quantities at the grid nodes that the gauge needs.
#[derive(Clone, Debug)]
pub struct GaugeGeometry {
    pub grid: TorusGrid,
    pub m: usize,
    pub coeffs: NodeCoefficients,
    /// `len * m`.
    pub h: Vec<f64>,
    /// `len * m * q`.
    pub grad_h: Vec<f64>,
    /// `len * m * q * q`.
    pub hess_h: Vec<f64>,
}

impl GaugeGeometry {
    pub fn new(model: &DiffusionModel, grid: &TorusGrid) -> Result<Self> {
        let coeffs = NodeCoefficients::from_model(model, grid)?;
        let (q, m, len) = (grid.q(), model.m(), grid.len());
        let mut h = vec![0.0; len * m];
        let mut grad_h = vec![0.0; len * m * q];
        let mut hess_h = vec![0.0; len * m * q * q];
        let mut x = vec![0.0; q];
        for idx in 0..len {
            grid.node_into(idx, &mut x);
            model.observation(&x, &mut h[idx * m..(idx + 1) * m]);
            model.observation_derivatives(
                &x,
                &mut grad_h[idx * m * q..(idx + 1) * m * q],
                &mut hess_h[idx * m * q * q..(idx + 1) * m * q * q],
            );
        }
        if h.iter().chain(&grad_h).chain(&hess_h).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation function or derivatives".into()));
        }
        Ok(Self {
            grid: *grid,
            m,
            coeffs,
            h,
            grad_h,
            hess_h,
        })
    }

    /// `log E`, `f` and `g` at elapsed window time `s` with cumulative
    /// increment `dy_cum = Y_{t+s} - Y_t`.
    pub fn fields(&self, s: f64, dy_cum: &[f64]) -> GaugeFields {
        let (q, m) = (self.grid.q(), self.m);
        let len = self.grid.len();
        let mut log_e = vec![0.0; len];
        let mut f = vec![0.0; len];
        let mut g = vec![0.0; len * q];
        let mut grad = [0.0; 2];
        let mut hess = [0.0; 4];
        for idx in 0..len {
            grad[..q].fill(0.0);
            hess[..q * q].fill(0.0);
            let mut le = 0.0;
            for k in 0..m {
                let hk = self.h[idx * m + k];
                let w = s * hk - dy_cum[k];
                le += 0.5 * hk * hk * s - hk * dy_cum[k];
                let gh = &self.grad_h[(idx * m + k) * q..(idx * m + k + 1) * q];
                let hh = &self.hess_h[(idx * m + k) * q * q..(idx * m + k + 1) * q * q];
                for i in 0..q {
                    grad[i] += w * gh[i];
                    for j in 0..q {
                        hess[i * q + j] += s * gh[i] * gh[j] + w * hh[i * q + j];
                    }
                }
            }
            let a = &self.coeffs.a[idx * q * q..(idx + 1) * q * q];
            let b = &self.coeffs.b[idx * q..(idx + 1) * q];
            let mut fi = 0.0;
            for i in 0..q {
                let mut agi = 0.0;
                for j in 0..q {
                    agi += a[i * q + j] * grad[j];
                    fi += 0.5 * a[i * q + j] * hess[j * q + i];
                }
                g[idx * q + i] = agi;
                fi += b[i] * grad[i] + 0.5 * grad[i] * agi;
            }
            log_e[idx] = le;
            f[idx] = fi;
        }
        GaugeFields { log_e, f, g }
    }
}

/// Gauge quantities at one time on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeFields {
    pub log_e: Vec<f64>,
    pub f: Vec<f64>,
    /// `len * q`.
    pub g: Vec<f64>,
}

/// `(E, f, g)` at elapsed time `s` of a window whose increments (`K x m`,
/// step `dt`) are `dy`. `s` is rounded to the step grid.
pub fn gauge_coefficients(
    model: &DiffusionModel,
    grid: &TorusGrid,
    dy: &[f64],
    dt: f64,
    s: f64,
) -> Result<(GridField, GridField, GridField)> {
    let m = model.m();
    let k_total = dy.len() / m;
    let window = k_total as f64 * dt;
    if !(0.0..=window * (1.0 + 1e-12)).contains(&s) {
        return Err(Error::InvalidArgument(format!(
            "time {s} outside window [0, {window}]"
        )));
    }
    let steps = ((s / dt).round() as usize).min(k_total);
    let mut cum = vec![0.0; m];
    for row in dy.chunks(m).take(steps) {
        for (c, v) in cum.iter_mut().zip(row) {
            *c += v;
        }
    }
    let geom = GaugeGeometry::new(model, grid)?;
    let fl = geom.fields(s, &cum);
    let e: Vec<f64> = fl.log_e.iter().map(|l| l.exp()).collect();
    Ok((
        GridField::new(*grid, 1, e)?,
        GridField::new(*grid, 1, fl.f)?,
        GridField::new(*grid, grid.q(), fl.g)?,
    ))
}

fn step_count(t: f64, dt: f64) -> Result<usize> {
    if !(t > 0.0 && dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon and step must be positive, got T={t}, dt={dt}"
        )));
    }
    let k = (t / dt).round();
    if !(k <= MAX_STEPS as f64) {
        return Err(Error::InvalidArgument(format!("step count {k} exceeds {MAX_STEPS}")));
    }
    Ok((k as usize).max(1))
}

/// Backward solve of `du/dt + L u + g^T grad u + f u = 0`, `u(T) = phi`.
///
/// `f` and `g` hold one field per step (`f[k]` acts on `[t_k, t_{k+1}]`);
/// a single entry is treated as time independent. Each step is
/// `u_k = (I - dt A_{b+g_k})^{-T} (exp(f_k dt) u_{k+1})`, the exact discrete
/// adjoint of the forward gauge flow. Returns `u(t_k)` for `k = 0..=K`.
pub fn solve_gauge_pde(
    model: &DiffusionModel,
    f: &[GridField],
    g: &[GridField],
    phi: &GridField,
    t: f64,
    dt: f64,
) -> Result<Vec<GridField>> {
    let grid = *phi.grid();
    let k_total = step_count(t, dt)?;
    let dt = t / k_total as f64;
    if f.is_empty() || g.is_empty() {
        return Err(Error::InvalidArgument("empty coefficient sequence".into()));
    }
    for fld in f.iter().chain(g).chain(std::iter::once(phi)) {
        if *fld.grid() != grid {
            return Err(Error::GridMismatch("gauge fields on different grids".into()));
        }
    }
    let base = NodeCoefficients::from_model(model, &grid)?;
    let mut u = phi.values().to_vec();
    let mut out = vec![phi.clone(); k_total + 1];
    for k in (0..k_total).rev() {
        let fk = &f[k.min(f.len() - 1)];
        let gk = &g[k.min(g.len() - 1)];
        for (ui, fi) in u.iter_mut().zip(fk.values()) {
            *ui *= (fi * dt).exp();
        }
        let coeffs = base.with_extra_drift(gk.values());
        let prop = FokkerPlanckPropagator::new(&coeffs, dt, Scheme::Implicit, Direction::Adjoint)?;
        prop.step(&mut u);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp(k));
        }
        out[k] = GridField::new(grid, 1, u.clone())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_model, ModelFamily, ParameterPoint};
    use std::f64::consts::PI;

    fn sine(tb: f64, th: f64, tc: f64, s0: f64) -> DiffusionModel {
        make_model(
            &ModelFamily::GradientSine,
            &ParameterPoint::new(vec![tb, th, tc, s0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn constant_h_kills_gradients() {
        let g = TorusGrid::new(1, 32).unwrap();
        let m = sine(0.5, 0.0, 0.8, 1.0);
        let (_, f, gg) = gauge_coefficients(&m, &g, &[0.1, -0.3, 0.2], 0.1, 0.3).unwrap();
        assert!(f.values().iter().all(|v| v.abs() < 1e-9));
        assert!(gg.values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn zero_increment_gives_quadratic_log_e() {
        let g = TorusGrid::new(1, 32).unwrap();
        let m = sine(0.5, 1.3, 0.2, 1.0);
        let (e, _, _) = gauge_coefficients(&m, &g, &[0.0; 10], 0.1, 0.7).unwrap();
        for (i, v) in e.values().iter().enumerate() {
            let x = g.node(i)[0];
            let h = 1.3 * (2.0 * PI * x).cos() + 0.2;
            assert!((v.ln() - 0.5 * h * h * 0.7).abs() < 1e-12);
        }
        assert!(gauge_coefficients(&m, &g, &[0.0; 10], 0.1, 1.5).is_err());
    }

    #[test]
    fn trivial_solutions() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let m = sine(0.7, 1.0, 0.0, 0.8);
        let zero = GridField::constant(grid, 0.0);
        let one = GridField::constant(grid, 1.0);
        let u = solve_gauge_pde(&m, &[zero.clone()], &[zero.clone()], &one, 0.5, 0.01).unwrap();
        for uk in &u {
            assert!(uk.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
        let c = 0.6;
        let fc = GridField::constant(grid, c);
        let u = solve_gauge_pde(&m, &[fc], &[zero], &one, 0.5, 0.01).unwrap();
        for (k, uk) in u.iter().enumerate() {
            let want = (c * (0.5 - k as f64 * 0.01)).exp();
            assert!(uk.values().iter().all(|v| (v - want).abs() < 1e-12 * want));
        }
    }
}
