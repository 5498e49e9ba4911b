//! Likelihood surfaces over a finite hypothesis bank, the maximum likelihood
//! estimator, the normalized likelihood-ratio statistic and the contrast
//! function.

use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::filter::{FilterRun, InitialLaw, LikelihoodMode, SplittingFilter, FilterTelemetry};
use crate::model::{make_model, DiffusionModel, ModelFamily, ParameterPoint, ParameterSpace};
use crate::numerics::fokker_planck::Scheme;
use crate::numerics::grid::{GridDensity, TorusGrid};
use crate::rng::{self, tag};
use crate::sde::{self, InitialCondition, ObservationRecord, SimulationConfig};
use crate::stats;
use crate::{Error, Result};

/// Grid and step shared by the Monte Carlo routines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Numerics {
    pub n: usize,
    pub dt: f64,
}

impl Numerics {
    pub fn grid(&self, q: usize) -> Result<TorusGrid> {
        TorusGrid::new(q, self.n)
    }
}

/// Log-likelihood of every hypothesis at each checkpoint.
#[derive(Clone, Debug, Serialize)]
pub struct LikelihoodSurface {
    pub space: ParameterSpace,
    pub times: Vec<f64>,
    /// Row-major `checkpoint x hypothesis`.
    pub log_l: Vec<f64>,
}

impl LikelihoodSurface {
    pub fn column(&self, j: usize) -> Vec<f64> {
        let h = self.space.len();
        (0..self.times.len()).map(|i| self.log_l[i * h + j]).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let h = self.space.len();
        &self.log_l[i * h..(i + 1) * h]
    }
}

/// Step indices of `checkpoints` on a record with step `dt`.
fn checkpoint_steps(checkpoints: &[f64], dt: f64, len: usize) -> Result<Vec<usize>> {
    checkpoints
        .iter()
        .map(|&t| {
            let k = (t / dt).round();
            if !(k >= 0.0) || k as usize > len {
                return Err(Error::RecordTooShort(format!(
                    "checkpoint {t} beyond record horizon {}",
                    len as f64 * dt
                )));
            }
            Ok(k as usize)
        })
        .collect()
}

/// Filter output kept by bank runs.
#[derive(Clone, Debug)]
pub struct BankColumn {
    /// `log L` at each checkpoint.
    pub log_l: Vec<f64>,
    /// `pi_{t_k}[h]` for `k = 0..=K` (`(K + 1) * m`), when requested.
    pub pi_h: Option<Vec<f64>>,
    pub telemetry: FilterTelemetry,
}

/// Runs one splitting filter over `obs` from `nu`, recording `log L` at the
/// given step indices and optionally the whole filter-mean path.
pub fn run_column(
    model: Arc<DiffusionModel>,
    nu: &GridDensity,
    obs: &ObservationRecord,
    steps: &[usize],
    keep_path: bool,
) -> Result<BankColumn> {
    let f = SplittingFilter::new(
        model.clone(),
        nu.grid(),
        obs.dt,
        Scheme::Implicit,
        LikelihoodMode::NormalizationMass,
    )?;
    let m = model.m();
    let mut p = nu.values().to_vec();
    let mut tel = FilterTelemetry::default();
    let mut path = keep_path.then(|| Vec::with_capacity((obs.len() + 1) * m));
    let mut buf = vec![0.0; m];
    let mut log_l = vec![0.0; steps.len()];
    let mut ll = 0.0;
    let record = |k: usize, ll: f64, log_l: &mut Vec<f64>| {
        for (slot, s) in log_l.iter_mut().zip(steps) {
            if *s == k {
                *slot = ll;
            }
        }
    };
    record(0, 0.0, &mut log_l);
    if let Some(pp) = path.as_mut() {
        f.mean(&p, &mut buf);
        pp.extend_from_slice(&buf);
    }
    let last = steps.iter().cloned().max().unwrap_or(0);
    let k_end = if keep_path { obs.len() } else { last.min(obs.len()) };
    for k in 0..k_end {
        ll += f.step(&mut p, obs.increment(k), &mut tel)?;
        record(k + 1, ll, &mut log_l);
        if let Some(pp) = path.as_mut() {
            f.mean(&p, &mut buf);
            pp.extend_from_slice(&buf);
        }
    }
    Ok(BankColumn {
        log_l,
        pi_h: path,
        telemetry: tel,
    })
}

/// Runs one filter per hypothesis (in parallel) on the shared record.
pub fn likelihood_surface(
    family: &ModelFamily,
    space: &ParameterSpace,
    nu: &GridDensity,
    obs: &ObservationRecord,
    checkpoints: &[f64],
) -> Result<LikelihoodSurface> {
    let steps = checkpoint_steps(checkpoints, obs.dt, obs.len())?;
    let cols: Vec<BankColumn> = space
        .points()
        .par_iter()
        .enumerate()
        .map(|(j, p)| {
            let model = make_model(family, p)?;
            run_column(Arc::new(model), nu, obs, &steps, false).map_err(|e| {
                Error::InvalidArgument(format!("hypothesis {j} {p}: {e}"))
            })
        })
        .collect::<Result<_>>()?;
    let h = space.len();
    let mut log_l = vec![0.0; checkpoints.len() * h];
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.log_l.iter().enumerate() {
            log_l[i * h + j] = *v;
        }
    }
    Ok(LikelihoodSurface {
        space: space.clone(),
        times: checkpoints.to_vec(),
        log_l,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MleEstimate {
    pub index: usize,
    pub point: ParameterPoint,
    /// All indices attaining the maximum (exact equality), ascending.
    pub ties: Vec<usize>,
}

/// Argmax of the surface row at checkpoint index `i`; ties go to the
/// lowest hypothesis index.
pub fn mle_estimate(surface: &LikelihoodSurface, i: usize) -> Result<MleEstimate> {
    if i >= surface.times.len() {
        return Err(Error::InvalidArgument(format!("checkpoint index {i} out of range")));
    }
    let row = surface.row(i);
    argmax_with_ties(row).map(|(index, ties)| MleEstimate {
        index,
        point: surface.space.points()[index].clone(),
        ties,
    })
}

fn argmax_with_ties(row: &[f64]) -> Result<(usize, Vec<usize>)> {
    let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(Error::NonFinite("likelihood surface row".into()));
    }
    let ties: Vec<usize> = (0..row.len()).filter(|&j| row[j] == best).collect();
    Ok((ties[0], ties))
}

/// `(1/T) int_0^T |pi_a[h_a] - pi_b[h_b]|^2 dt` by left-point quadrature
/// over two splitting runs on the same record.
pub fn normalized_ratio_statistic(a: &FilterRun, b: &FilterRun, t: f64) -> Result<f64> {
    if a.times.len() != b.times.len() || a.m != b.m {
        return Err(Error::InvalidArgument("runs are not on the same record".into()));
    }
    if a.times.len() < 2 {
        return Err(Error::RecordTooShort("runs have no steps".into()));
    }
    let dt = a.times[1] - a.times[0];
    gap_average(&a.pi_h, &b.pi_h, a.m, dt, 0.0, t)
}

/// `(1/(t1 - t0)) int_{t0}^{t1} |x - y|^2` with left points on paths
/// sampled every `dt` from time 0.
pub fn gap_average(x: &[f64], y: &[f64], m: usize, dt: f64, t0: f64, t1: f64) -> Result<f64> {
    let k0 = (t0 / dt).round() as usize;
    let k1 = (t1 / dt).round() as usize;
    let available = x.len().min(y.len()) / m;
    if k1 == 0 || k1 > available.saturating_sub(1) || k0 >= k1 {
        return Err(Error::RecordTooShort(format!(
            "need filter means up to t={t1}, have {}",
            available.saturating_sub(1) as f64 * dt
        )));
    }
    let sq: Vec<f64> = (k0..k1)
        .map(|k| {
            (0..m)
                .map(|j| {
                    let d = x[k * m + j] - y[k * m + j];
                    d * d
                })
                .sum()
        })
        .collect();
    Ok(stats::pairwise_sum(&sq) / (k1 - k0) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContrastEstimate {
    pub theta: ParameterPoint,
    pub theta2: ParameterPoint,
    pub lambda_hat: f64,
    pub std_err: f64,
    pub horizon: f64,
    pub replicas: Vec<f64>,
}

/// Filter initialization used by the Monte Carlo routines.
#[derive(Clone, Debug, PartialEq)]
pub enum FilterInit {
    /// Each hypothesis starts from its own stationary density.
    Stationary,
    /// Every hypothesis starts from the same law.
    Law(InitialLaw),
}

/// Per-replica filter-mean paths for a set of hypotheses on records
/// simulated under `theta` with the signal started from its stationary law.
struct ReplicaPaths {
    obs: ObservationRecord,
    truth: Vec<f64>,
    others: Vec<Vec<f64>>,
}

fn replica_paths(
    family: &ModelFamily,
    theta: &ParameterPoint,
    others: &[ParameterPoint],
    init: &FilterInit,
    horizon: f64,
    num: Numerics,
    seed: u64,
    replica: u64,
) -> Result<ReplicaPaths> {
    let truth_model = Arc::new(make_model(family, theta)?);
    let grid = num.grid(truth_model.q())?;
    let psi = sde::stationary_density(&truth_model, &grid, 1e-12)?;
    let cfg = SimulationConfig::new(num.dt, horizon, seed, InitialCondition::Density(psi.clone()))
        .with_stream(replica);
    let obs = sde::simulate_signal_observation(&truth_model, &cfg)?;
    let start = |model: &DiffusionModel| -> Result<GridDensity> {
        match init {
            FilterInit::Stationary => sde::stationary_density(model, &grid, 1e-12),
            FilterInit::Law(l) => l.density(model, &grid),
        }
    };
    let truth_nu = match init {
        FilterInit::Stationary => psi,
        FilterInit::Law(l) => l.density(&truth_model, &grid)?,
    };
    let truth = run_column(truth_model, &truth_nu, &obs, &[], true)?
        .pi_h
        .expect("path requested");
    let others = others
        .iter()
        .map(|p| {
            let model = Arc::new(make_model(family, p)?);
            let nu = start(&model)?;
            Ok(run_column(model, &nu, &obs, &[], true)?.pi_h.expect("path requested"))
        })
        .collect::<Result<_>>()?;
    Ok(ReplicaPaths { obs, truth, others })
}

/// Monte Carlo estimate of the contrast: records are simulated under
/// `theta` from its stationary law, both filters start from their own
/// stationary densities, and the squared filter-mean gap is averaged over
/// the last half of `[0, T]`.
pub fn contrast_estimate(
    family: &ModelFamily,
    theta: &ParameterPoint,
    theta2: &ParameterPoint,
    horizon: f64,
    n_replicas: usize,
    seed: u64,
    num: Numerics,
) -> Result<ContrastEstimate> {
    if n_replicas < 30 {
        return Err(Error::InvalidArgument(format!(
            "contrast estimate needs at least 30 replicas, got {n_replicas}"
        )));
    }
    let m = make_model(family, theta)?.m();
    let reps: Vec<f64> = (0..n_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let rp = replica_paths(
                family,
                theta,
                std::slice::from_ref(theta2),
                &FilterInit::Stationary,
                horizon,
                num,
                seed,
                r,
            )?;
            gap_average(&rp.truth, &rp.others[0], m, num.dt, 0.5 * horizon, horizon)
        })
        .collect::<Result<_>>()?;
    Ok(ContrastEstimate {
        theta: theta.clone(),
        theta2: theta2.clone(),
        lambda_hat: stats::mean(&reps),
        std_err: stats::std_err(&reps),
        horizon,
        replicas: reps,
    })
}

/// Convergence diagnostics of the normalized ratio statistic.
#[derive(Clone, Debug, Serialize)]
pub struct LambdaCurve {
    pub horizons: Vec<f64>,
    /// Mean over replicas of the squared gap averaged over `[T - 1, T]`.
    pub mean_gap2: Vec<f64>,
    /// Mean and variance over replicas of `(1/T) int_0^T |gap|^2`.
    pub stat_mean: Vec<f64>,
    pub stat_var: Vec<f64>,
    pub stat_se: Vec<f64>,
    /// `replica x horizon` values of the time-averaged statistic.
    pub stats: Vec<Vec<f64>>,
}

impl LambdaCurve {
    /// Fraction of bootstrap resamples (over replicas) in which the variance
    /// at horizon index `j` is below the variance at index `i`.
    pub fn variance_decrease_fraction(&self, i: usize, j: usize, resamples: usize, seed: u64) -> f64 {
        let n = self.stats.len();
        let mut rng = rng::stream(seed, 0, tag::BOOTSTRAP);
        let mut hits = 0;
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for _ in 0..resamples {
            for s in 0..n {
                let r = rng.random_range(0..n);
                a[s] = self.stats[r][i];
                b[s] = self.stats[r][j];
            }
            if stats::variance(&b) < stats::variance(&a) {
                hits += 1;
            }
        }
        hits as f64 / resamples as f64
    }
}

/// Horizon-indexed statistics from one simulation per replica up to the
/// largest horizon.
pub fn lambda_convergence_curve(
    family: &ModelFamily,
    theta: &ParameterPoint,
    theta2: &ParameterPoint,
    horizons: &[f64],
    n_replicas: usize,
    init: &FilterInit,
    seed: u64,
    num: Numerics,
) -> Result<LambdaCurve> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) || horizons[0] < 1.0 {
        return Err(Error::InvalidArgument(
            "horizons must be increasing and at least 1".into(),
        ));
    }
    let m = make_model(family, theta)?.m();
    let t_max = *horizons.last().expect("nonempty");
    let per_rep: Vec<(Vec<f64>, Vec<f64>)> = (0..n_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let rp = replica_paths(
                family,
                theta,
                std::slice::from_ref(theta2),
                init,
                t_max,
                num,
                seed,
                r,
            )?;
            let mut stat = Vec::new();
            let mut tail = Vec::new();
            for &t in horizons {
                stat.push(gap_average(&rp.truth, &rp.others[0], m, num.dt, 0.0, t)?);
                tail.push(gap_average(&rp.truth, &rp.others[0], m, num.dt, t - 1.0, t)?);
            }
            Ok((stat, tail))
        })
        .collect::<Result<_>>()?;
    let nh = horizons.len();
    let col = |i: usize, tail: bool| -> Vec<f64> {
        per_rep
            .iter()
            .map(|(s, g)| if tail { g[i] } else { s[i] })
            .collect()
    };
    Ok(LambdaCurve {
        horizons: horizons.to_vec(),
        mean_gap2: (0..nh).map(|i| stats::mean(&col(i, true))).collect(),
        stat_mean: (0..nh).map(|i| stats::mean(&col(i, false))).collect(),
        stat_var: (0..nh).map(|i| stats::variance(&col(i, false))).collect(),
        stat_se: (0..nh).map(|i| stats::std_err(&col(i, false))).collect(),
        stats: per_rep.into_iter().map(|(s, _)| s).collect(),
    })
}

/// `sup_theta' (1/T) |int_0^T pi^{theta'}[h^{theta'}]^T dW~|` where `dW~`
/// is the innovation of the true-parameter filter, for each horizon.
pub fn martingale_time_average(
    truth_pi_h: &[f64],
    bank_pi_h: &[Vec<f64>],
    obs: &ObservationRecord,
    horizons: &[f64],
) -> Result<Vec<f64>> {
    let m = obs.m;
    let dt = obs.dt;
    let mut out = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let k1 = (t / dt).round() as usize;
        if k1 > obs.len() {
            return Err(Error::RecordTooShort(format!("horizon {t} beyond record")));
        }
        let mut sup: f64 = 0.0;
        for path in bank_pi_h {
            let terms: Vec<f64> = (0..k1)
                .map(|k| {
                    (0..m)
                        .map(|j| {
                            let innov = obs.dy[k * m + j] - truth_pi_h[k * m + j] * dt;
                            path[k * m + j] * innov
                        })
                        .sum()
                })
                .collect();
            sup = sup.max((stats::pairwise_sum(&terms) / t).abs());
        }
        out.push(sup);
    }
    Ok(out)
}

/// Per-replica [`martingale_time_average`] (`replica x horizon`) over the
/// bank `space`, records simulated under `theta` from its stationary law and
/// all filters started from their stationary densities.
pub fn martingale_curve(
    family: &ModelFamily,
    theta: &ParameterPoint,
    space: &ParameterSpace,
    horizons: &[f64],
    n_replicas: usize,
    seed: u64,
    num: Numerics,
) -> Result<Vec<Vec<f64>>> {
    let t_max = horizons.iter().cloned().fold(0.0, f64::max);
    (0..n_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let rp = replica_paths(
                family,
                theta,
                space.points(),
                &FilterInit::Stationary,
                t_max,
                num,
                seed,
                r,
            )?;
            martingale_time_average(&rp.truth, &rp.others, &rp.obs, horizons)
        })
        .collect()
}

/// Monte Carlo table of the robustness modulus.
#[derive(Clone, Debug, Serialize)]
pub struct RobustnessTable {
    pub deltas: Vec<f64>,
    pub times: Vec<f64>,
    /// `delta x time`.
    pub mean: Vec<Vec<f64>>,
    pub std_err: Vec<Vec<f64>>,
}

/// `E max_{d(theta', theta'') <= delta} |pi^{theta'}[h^{theta'}] - pi^{theta''}[h^{theta''}]|`
/// at each time, with records simulated under `theta_true` (signal from its
/// stationary law) and every filter started from `nu`.
#[allow(clippy::too_many_arguments)]
pub fn robustness_modulus(
    family: &ModelFamily,
    space: &ParameterSpace,
    theta_true: &ParameterPoint,
    nu: &InitialLaw,
    deltas: &[f64],
    times: &[f64],
    n_replicas: usize,
    seed: u64,
    num: Numerics,
) -> Result<RobustnessTable> {
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    let h = space.len();
    let mut pairs_within: Vec<Vec<(usize, usize)>> = Vec::new();
    for &d in deltas {
        let mut v = Vec::new();
        for i in 0..h {
            for j in i + 1..h {
                if space.distance_by_index(i, j) <= d {
                    v.push((i, j));
                }
            }
        }
        pairs_within.push(v);
    }
    let steps: Vec<usize> = times.iter().map(|t| (t / num.dt).round() as usize).collect();
    let per_rep: Vec<Vec<Vec<f64>>> = (0..n_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let rp = replica_paths(
                family,
                theta_true,
                space.points(),
                &FilterInit::Law(nu.clone()),
                t_max,
                num,
                seed,
                r,
            )?;
            let m = rp.truth.len() / ((t_max / num.dt).round() as usize + 1);
            Ok(pairs_within
                .iter()
                .map(|pairs| {
                    steps
                        .iter()
                        .map(|&k| {
                            pairs
                                .iter()
                                .map(|&(i, j)| {
                                    let a = &rp.others[i][k * m..(k + 1) * m];
                                    let b = &rp.others[j][k * m..(k + 1) * m];
                                    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
                                })
                                .fold(0.0, f64::max)
                        })
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut mean = Vec::new();
    let mut se = Vec::new();
    for di in 0..deltas.len() {
        let mut mrow = Vec::new();
        let mut srow = Vec::new();
        for ti in 0..times.len() {
            let v: Vec<f64> = per_rep.iter().map(|r| r[di][ti]).collect();
            mrow.push(stats::mean(&v));
            srow.push(if v.len() > 1 { stats::std_err(&v) } else { 0.0 });
        }
        mean.push(mrow);
        se.push(srow);
    }
    Ok(RobustnessTable {
        deltas: deltas.to_vec(),
        times: times.to_vec(),
        mean,
        std_err: se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Metric;

    fn pt(c: &[f64]) -> ParameterPoint {
        ParameterPoint::new(c.to_vec()).unwrap()
    }

    #[test]
    fn constant_h_argmax_closed_form() {
        // Increments with Y_T / T = 0.5 exactly.
        let dt = 0.01;
        let k = 1000;
        let mut dy: Vec<f64> = (0..k).map(|i| 0.05 * ((i as f64) * 1.3).sin()).collect();
        let s: f64 = dy.iter().sum();
        let t = k as f64 * dt;
        let shift = (0.5 * t - s) / k as f64;
        dy.iter_mut().for_each(|v| *v += shift);
        let obs = ObservationRecord::from_increments(dt, 1, 1, dy).unwrap();
        let space = ParameterSpace::new(vec![pt(&[0.0]), pt(&[0.5]), pt(&[1.0])], Metric::Euclidean).unwrap();
        let g = TorusGrid::new(1, 16).unwrap();
        let surf = likelihood_surface(&ModelFamily::ConstantH, &space, &GridDensity::uniform(g), &obs, &[t]).unwrap();
        let est = mle_estimate(&surf, 0).unwrap();
        assert_eq!(est.point, pt(&[0.5]));
        assert_eq!(est.ties, vec![1]);

        let dup = ParameterSpace::new(
            vec![pt(&[0.0]), pt(&[0.5]), pt(&[1.0]), pt(&[0.5])],
            Metric::Euclidean,
        )
        .unwrap();
        let surf = likelihood_surface(&ModelFamily::ConstantH, &dup, &GridDensity::uniform(g), &obs, &[t]).unwrap();
        let est = mle_estimate(&surf, 0).unwrap();
        assert_eq!(est.index, 1);
        assert_eq!(est.ties, vec![1, 3]);
    }

    #[test]
    fn argmax_invariant_under_common_shift() {
        let row = [1.0, 3.0, -2.0, 2.5];
        let shifted: Vec<f64> = row.iter().map(|v| v + 17.25).collect();
        assert_eq!(argmax_with_ties(&row).unwrap().0, argmax_with_ties(&shifted).unwrap().0);
    }

    #[test]
    fn gap_average_constant_paths() {
        let a = vec![0.3; 101];
        let b = vec![-0.2; 101];
        let g = gap_average(&a, &b, 1, 0.1, 0.0, 10.0).unwrap();
        assert!((g - 0.25).abs() < 1e-15);
        assert!(gap_average(&a, &b, 1, 0.1, 0.0, 11.0).is_err());
    }
}
