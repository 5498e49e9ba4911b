//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Gradient-sine coefficients `[theta_b, theta_h, theta_c, sigma0]`.
#[derive(Clone, Copy, Debug)]
pub struct Sine {
    pub tb: f64,
    pub th: f64,
    pub tc: f64,
    pub s0: f64,
}

impl Sine {
    pub fn from(c: &[f64]) -> Self {
        Self { tb: c[0], th: c[1], tc: c[2], s0: c[3] }
    }
    pub fn b(&self, x: f64) -> f64 {
        self.tb * (2.0 * PI * x).sin()
    }
    pub fn h(&self, x: f64) -> f64 {
        self.th * (2.0 * PI * x).cos() + self.tc
    }
}

/// Bootstrap particle filter for the Euler–Maruyama chain observed through
/// `dY_k = h(X_{k+1}) dt + dW_k`: move, weight by `dY_k`, resample
/// systematically when the effective sample size drops below half.
/// Returns `E[h(X_k) | dY_0..dY_{k-1}]` at every `k` in `at`.
pub fn particle_filter(
    m: Sine,
    x0: &[f64],
    dy: &[f64],
    dt: f64,
    at: &[usize],
    seed: u64,
) -> Vec<f64> {
    let n = x0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let mut logw = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut next = vec![0.0; n];
    let sq = dt.sqrt();
    let mut out = Vec::with_capacity(at.len());
    for k in 0..=dy.len() {
        if at.contains(&k) {
            let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (mut s, mut z) = (0.0, 0.0);
            for (xi, lw) in x.iter().zip(&logw) {
                let e = (lw - mx).exp();
                s += e * m.h(*xi);
                z += e;
            }
            out.push(s / z);
        }
        if k == dy.len() {
            break;
        }
        for (xi, lw) in x.iter_mut().zip(logw.iter_mut()) {
            let z: f64 = rng.sample(StandardNormal);
            *xi += m.b(*xi) * dt + m.s0 * sq * z;
            let h = m.h(*xi);
            *lw += h * dy[k] - 0.5 * h * h * dt;
        }
        let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (wi, lw) in w.iter_mut().zip(&logw) {
            *wi = (lw - mx).exp();
            z += *wi;
        }
        let ess = z * z / w.iter().map(|v| v * v).sum::<f64>();
        if ess < 0.5 * n as f64 {
            let step = z / n as f64;
            let mut u = rng.random::<f64>() * step;
            let mut cum = w[0];
            let mut j = 0;
            for slot in next.iter_mut() {
                while cum < u && j + 1 < n {
                    j += 1;
                    cum += w[j];
                }
                *slot = x[j];
                u += step;
            }
            std::mem::swap(&mut x, &mut next);
            logw.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    out
}

/// Wrapped Gaussian density on the unit circle with mean `mu`, variance `v`.
pub fn wrapped_gaussian(x: f64, mu: f64, v: f64) -> f64 {
    let norm = 1.0 / (2.0 * PI * v).sqrt();
    (-20..=20)
        .map(|k| {
            let d = x - mu + k as f64;
            norm * (-d * d / (2.0 * v)).exp()
        })
        .sum()
}

/// Gibbs density `exp(-theta_b cos(2 pi x) / (pi sigma0^2))` normalized by
/// adaptive-free trapezoid quadrature on a fine grid.
pub fn gibbs_density(tb: f64, s0: f64, x: f64) -> f64 {
    let u = |y: f64| (-(tb * (2.0 * PI * y).cos()) / (PI * s0 * s0)).exp();
    let m = 20_000;
    let z: f64 = (0..m).map(|i| u((i as f64 + 0.5) / m as f64)).sum::<f64>() / m as f64;
    u(x) / z
}
