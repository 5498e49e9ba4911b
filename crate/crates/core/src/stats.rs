//! Small statistics toolkit used by the experiment drivers and tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

/// Pairwise (cascade) summation; deterministic and accurate for long vectors.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 32 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(x) / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return f64::NAN;
    }
    let m = mean(x);
    let sq: Vec<f64> = x.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&sq) / (x.len() - 1) as f64
}

/// Standard error of the mean.
pub fn std_err(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Ordinary least squares `y = intercept + slope * x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_se: f64,
    pub n: usize,
}

impl LinearFit {
    /// Two-sided confidence interval for the slope at `level` (e.g. 0.99).
    pub fn slope_ci(&self, level: f64) -> (f64, f64) {
        let dof = self.n.saturating_sub(2).max(1) as f64;
        let t = StudentsT::new(0.0, 1.0, dof)
            .map(|d| d.inverse_cdf(0.5 + level / 2.0))
            .unwrap_or(f64::INFINITY);
        (self.slope - t * self.slope_se, self.slope + t * self.slope_se)
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = (syy - slope * sxy).max(0.0);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = if n > 2 {
        (sse / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
        slope_se,
        n,
    }
}

/// Average ranks (ties share the mean rank), 1-based.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with its one-sided p-value for `rho < 0`
/// (t approximation with `n - 2` degrees of freedom).
#[derive(Clone, Copy, Debug)]
pub struct Spearman {
    pub rho: f64,
    pub p_negative: f64,
    pub p_two_sided: f64,
    pub n: usize,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Spearman {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    let rho = pearson(&ranks(x), &ranks(y));
    let dof = n as f64 - 2.0;
    let t = rho * (dof / (1.0 - rho * rho).max(1e-300)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof.max(1.0)).expect("valid dof");
    let p_negative = dist.cdf(t);
    let p_two_sided = 2.0 * dist.cdf(-t.abs());
    Spearman {
        rho,
        p_negative,
        p_two_sided,
        n,
    }
}

/// Kolmogorov distribution survival `P(K > x)`.
fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        s += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test; returns `(D, asymptotic p-value)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let p = kolmogorov_sf((en + 0.12 + 0.11 / en) * d);
    (d, p)
}

/// Pearson chi-square goodness of fit. Cells with expected count below 5
/// are pooled into their neighbour. Returns `(statistic, dof, p-value)`.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> (f64, usize, f64) {
    let mut obs_pooled = Vec::new();
    let mut exp_pooled = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            obs_pooled.push(o_acc);
            exp_pooled.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 {
        if let (Some(lo), Some(le)) = (obs_pooled.last_mut(), exp_pooled.last_mut()) {
            *lo += o_acc;
            *le += e_acc;
        } else {
            obs_pooled.push(o_acc);
            exp_pooled.push(e_acc);
        }
    }
    let stat: f64 = obs_pooled
        .iter()
        .zip(&exp_pooled)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = obs_pooled.len().saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(stat);
    (stat, dof, p)
}

/// Ljung–Box portmanteau test on `lags` autocorrelations; `(Q, p-value)`.
pub fn ljung_box(x: &[f64], lags: usize) -> (f64, f64) {
    let n = x.len() as f64;
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0: f64 = pairwise_sum(&c.iter().map(|v| v * v).collect::<Vec<_>>());
    let mut q = 0.0;
    for k in 1..=lags {
        let ck: f64 = c.iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
        let r = ck / c0;
        q += r * r / (n - k as f64);
    }
    q *= n * (n + 2.0);
    let p = 1.0 - ChiSquared::new(lags as f64).expect("lags > 0").cdf(q);
    (q, p)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Two-sided normal confidence interval `mean ± z * se`.
pub fn confidence_interval(x: &[f64], level: f64) -> (f64, f64) {
    let z = normal_quantile(0.5 + level / 2.0);
    let m = mean(x);
    let se = std_err(x);
    (m - z * se, m + z * se)
}

/// Confidence interval for the mean of a dependent sequence from
/// `batches` contiguous batch means and a Student-t quantile.
pub fn batch_means_ci(x: &[f64], batches: usize, level: f64) -> (f64, f64) {
    assert!(batches >= 2 && x.len() >= batches);
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&x[b * size..(b + 1) * size]))
        .collect();
    let t = StudentsT::new(0.0, 1.0, (batches - 1) as f64)
        .expect("positive dof")
        .inverse_cdf(0.5 + level / 2.0);
    let m = mean(&means);
    let half = t * std_err(&means);
    (m - half, m + half)
}
