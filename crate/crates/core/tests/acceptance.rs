//! End-to-end acceptance run: every criterion at its pinned tolerance, one
//! PASS/FAIL line each. Exits nonzero if any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{particle_filter, Sine};
use torus_pomle::experiments::{load_config_with, parse_override, run_experiment, write_report, ExperimentReport};
use torus_pomle::filter::{run_filter, FilterOptions};
use torus_pomle::mle::likelihood_surface;
use torus_pomle::model::{make_model, ModelFamily, ParameterPoint};
use torus_pomle::numerics::grid::{GridDensity, TorusGrid};
use torus_pomle::sde::{simulate_reference_record, simulate_signal_observation, InitialCondition, SimulationConfig};
use torus_pomle::stats;

type Check = fn(&Path) -> Result<(bool, String), String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped(name: &str, extra: &[&str], out: &Path) -> Result<torus_pomle::experiments::ExperimentConfig, String> {
    let mut ov = vec![parse_override(&format!("out=\"{}\"", out.join(name).display())).map_err(|e| e.to_string())?];
    for o in extra {
        ov.push(parse_override(o).map_err(|e| e.to_string())?);
    }
    load_config_with(&configs_dir().join(format!("{name}.toml")), &ov).map_err(|e| e.to_string())
}

fn run_shipped(name: &str, extra: &[&str], out: &Path) -> Result<ExperimentReport, String> {
    let cfg = shipped(name, extra, out)?;
    let report = run_experiment(&cfg).map_err(|e| format!("{name}: {e}"))?;
    write_report(&report, Path::new(&cfg.out)).map_err(|e| e.to_string())?;
    Ok(report)
}

/// All verdicts in `report` pass and every name in `need` is present.
fn verdicts(report: &ExperimentReport, need: &[&str]) -> (bool, String) {
    let mut ok = report.passed();
    let mut parts = Vec::new();
    for n in need {
        match report.verdict(n) {
            Some(v) => parts.push(format!("{n}={:.4e}", v.measured)),
            None => {
                ok = false;
                parts.push(format!("{n}=missing"));
            }
        }
    }
    for v in report.verdicts.iter().filter(|v| !v.passed) {
        parts.push(format!("failed {} ({})", v.name, v.condition));
    }
    (ok, parts.join(", "))
}

fn filter_vs_particles(_: &Path) -> Result<(bool, String), String> {
    let coords = [0.5, 1.0, 0.5, 0.3];
    let (dt, n, horizon) = (1e-3, 128, 10.0);
    let (groups, per_group) = (50, 2000);
    let model = make_model(&ModelFamily::GradientSine, &ParameterPoint::new(coords.to_vec()).unwrap())
        .map_err(|e| e.to_string())?;
    let grid = TorusGrid::new(1, n).unwrap();
    let nu = GridDensity::uniform(grid);
    let cfg = SimulationConfig::new(dt, horizon, 11, InitialCondition::Density(nu.clone()));
    let obs = simulate_signal_observation(&model, &cfg).map_err(|e| e.to_string())?;
    let run = run_filter(Arc::new(model), &nu, &obs, &FilterOptions::default()).map_err(|e| e.to_string())?;
    let at: Vec<usize> = (1..=20).map(|i| i * obs.len() / 20).collect();
    let sine = Sine::from(&coords);
    let pf: Vec<Vec<f64>> = (0..groups as u64)
        .into_par_iter()
        .map(|g| {
            let mut r = ChaCha8Rng::seed_from_u64(1000 + g);
            let x0: Vec<f64> = (0..per_group).map(|_| r.random::<f64>()).collect();
            particle_filter(sine, &x0, &obs.dy, dt, &at, 2000 + g)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (c, &k) in at.iter().enumerate() {
        let col: Vec<f64> = pf.iter().map(|g| g[c]).collect();
        let z = (run.pi_h_at(k)[0] - stats::mean(&col)) / stats::std_err(&col);
        worst = worst.max(z.abs());
    }
    Ok((
        worst <= 3.0,
        format!("max |z| = {worst:.3} over 20 checkpoints ({groups} x {per_group} particles)"),
    ))
}

fn engine_equivalence(out: &Path) -> Result<(bool, String), String> {
    let mut names: Vec<String> = std::fs::read_dir(configs_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".toml").map(String::from))
        .collect();
    names.sort();
    let mut ok = !names.is_empty();
    let mut parts = Vec::new();
    for name in &names {
        let report = run_shipped(name, &["kind=\"engine-xcheck\"", "horizons=[2.0]"], &out.join("xcheck"))?;
        let orders: Vec<f64> = report
            .verdicts
            .iter()
            .filter(|v| v.name.starts_with("first_order_improvement"))
            .map(|v| v.measured)
            .collect();
        ok &= report.passed() && !orders.is_empty();
        parts.push(format!(
            "{name}: {} (order {:?})",
            if report.passed() { "ok" } else { "FAIL" },
            orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn contraction(out: &Path) -> Result<(bool, String), String> {
    let r = run_shipped("contraction", &[], out)?;
    let windows = r.table("audit").map_or(0, |t| t.rows.len());
    let (ok, d) = verdicts(&r, &["kernels_positive", "no_hilbert_increase", "decay_vs_oscillation_negative"]);
    Ok((ok && windows >= 1000, format!("{windows} windows, {d}")))
}

fn stability(out: &Path) -> Result<(bool, String), String> {
    let cfg = shipped("stability", &[], out)?;
    let laws_ok = cfg.nu.iter().any(|s| s == "uniform") && cfg.nu.iter().any(|s| s.starts_with("point"));
    let r = run_shipped("stability", &[], out)?;
    let (ok, d) = verdicts(&r, &["log_tv_slope_negative", "log_tv_linear_fit"]);
    Ok((ok && laws_ok && cfg.horizons == [30.0], d))
}

fn contrast(out: &Path) -> Result<(bool, String), String> {
    let cfg = shipped("lambda", &[], out)?;
    let horizons_ok = cfg.horizons.first() == Some(&50.0) && cfg.horizons.last() == Some(&200.0);
    let r = run_shipped("lambda", &[], out)?;
    let (ok1, d1) = verdicts(
        &r,
        &["lambda_self_zero", "lambda_separated_positive", "statistic_variance_decreasing"],
    );
    let c = run_shipped("lambda-constant-h", &[], out)?;
    let (ok2, d2) = verdicts(&c, &["lambda_constant_h_closed_form"]);
    Ok((
        ok1 && ok2 && horizons_ok && cfg.replicas == 100,
        format!("gradient-sine: {d1}; constant-h: {d2}"),
    ))
}

fn robustness(out: &Path) -> Result<(bool, String), String> {
    let r = run_shipped("robustness", &[], out)?;
    Ok(verdicts(&r, &["monotone_in_delta", "no_trend_in_t"]))
}

fn coupling(out: &Path) -> Result<(bool, String), String> {
    let cfg = shipped("coupling", &[], out)?;
    let r = run_shipped("coupling", &[], out)?;
    let (ok, d) = verdicts(
        &r,
        &["tail_slope_negative", "tail_linear_fit", "ks_marginal_nu", "ks_marginal_nu2"],
    );
    Ok((ok && cfg.replicas >= 1000, d))
}

fn singularity(out: &Path) -> Result<(bool, String), String> {
    let r = run_shipped("singularity", &[], out)?;
    Ok(verdicts(&r, &["separated_intervals_disjoint", "identical_intervals_overlap"]))
}

fn consistency(out: &Path) -> Result<(bool, String), String> {
    let cfg = shipped("consistency", &[], out)?;
    let shape_ok = cfg.space.points.len() == 9
        && cfg.horizons == [25.0, 50.0, 100.0, 200.0]
        && cfg.replicas == 100
        && cfg.nu.iter().any(|s| s == "uniform")
        && cfg.nu.iter().any(|s| s.starts_with("point"));
    let r = run_shipped("consistency", &[], out)?;
    let laws = cfg.nu.len();
    let named = r
        .verdicts
        .iter()
        .filter(|v| v.name.starts_with("fraction_final") || v.name.starts_with("fraction_nondecreasing"))
        .count();
    let (ok, d) = verdicts(&r, &[]);
    let finals: Vec<String> = r
        .verdicts
        .iter()
        .filter(|v| v.name.starts_with("fraction_final"))
        .map(|v| format!("{}={}", v.name, v.measured))
        .collect();
    Ok((ok && shape_ok && named == 2 * laws, format!("{} {d}", finals.join(", "))))
}

fn likelihood_normalization(_: &Path) -> Result<(bool, String), String> {
    let cfg = shipped("consistency", &[], Path::new("unused"))?;
    let family = cfg.family().map_err(|e| e.to_string())?;
    let space = cfg.space().map_err(|e| e.to_string())?;
    let (dt, horizon, records) = (1e-3, 1.0, 1000u64);
    let nu = GridDensity::uniform(TorusGrid::new(1, 64).unwrap());
    let mut l = vec![Vec::with_capacity(records as usize); space.len()];
    for r in 0..records {
        let obs = simulate_reference_record(1, 1, dt, horizon, 17, r).map_err(|e| e.to_string())?;
        let s = likelihood_surface(&family, &space, &nu, &obs, &[horizon]).map_err(|e| e.to_string())?;
        for (j, v) in s.row(0).iter().enumerate() {
            l[j].push(v.exp());
        }
    }
    let z: Vec<f64> = l.iter().map(|x| (stats::mean(x) - 1.0) / stats::std_err(x)).collect();
    let worst = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok((
        worst <= 3.0,
        format!("max |z| = {worst:.3} over {} hypotheses, {records} records", space.len()),
    ))
}

fn main() {
    let criteria: [(&str, u64, Check); 10] = [
        ("filter matches particle filter", 120, filter_vs_particles),
        ("engine equivalence", 300, engine_equivalence),
        ("kernel positivity and contraction", 300, contraction),
        ("exponential stability", 120, stability),
        ("contrast function", 600, contrast),
        ("uniform robustness", 600, robustness),
        ("coupling", 300, coupling),
        ("mutual singularity", 300, singularity),
        ("MLE consistency", 1800, consistency),
        ("likelihood normalization", 120, likelihood_normalization),
    ];
    let out = tempfile::tempdir().expect("temp dir");
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let res = check(out.path());
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*budget);
        let (ok, detail) = match res {
            Ok((ok, d)) => (ok && in_time, d),
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {:2} {name} [{:.1}s of {budget}s]: {detail}",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
