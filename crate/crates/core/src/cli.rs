//! Command-line front end. Exit codes: 0 success (all verdicts true),
//! 1 a verdict or check failed or the computation broke down, 2 usage or
//! configuration error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::experiments::{self, drivers::stationary_record, ExperimentConfig};
use crate::filter::{run_filter, FilterOptions, InitialLaw};
use crate::io;
use crate::mle;
use crate::model::{make_model, verify_assumptions, ModelFamily, ParameterPoint};
use crate::numerics::grid::TorusGrid;
use crate::sde::{self, InitialCondition, SimulationConfig};
use crate::{Error, Result};

pub const SEED_ENV: &str = "TORUS_POMLE_SEED";

#[derive(Parser, Debug)]
#[command(name = "torus-pomle", version, about = "Filtering and likelihood inference for diffusions on the torus")]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// `key=value` override of a config key (repeatable).
    #[arg(long = "override", value_name = "K=V")]
    pub overrides: Vec<String>,
    /// Output directory (default: `out` from the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a signal/observation record under theta_true.
    Simulate(Common),
    /// Run the filter of theta_true over a simulated or given record.
    Filter {
        #[command(flatten)]
        common: Common,
        /// Observation record (CSV or .bin); simulated when absent.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Log-likelihood of every hypothesis at each horizon.
    Likelihood {
        #[command(flatten)]
        common: Common,
        /// Observation record (CSV or .bin); simulated when absent.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Maximum likelihood estimate at each horizon.
    Mle {
        #[command(flatten)]
        common: Common,
        /// Observation record (CSV or .bin); simulated when absent.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Run the experiment named by `kind` and write its report.
    Experiment(Common),
    /// Check periodicity, ellipticity and declared bounds of a model.
    VerifyModel {
        /// Config whose `theta_true` and `family` are checked.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` override of a config key (repeatable).
        #[arg(long = "override", value_name = "K=V")]
        overrides: Vec<String>,
        /// Family name when no config is given.
        #[arg(long, default_value = "gradient-sine")]
        family: String,
        /// Comma-separated parameter when no config is given.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta: Option<Vec<f64>>,
        /// Number of sample points.
        #[arg(long, default_value_t = 4096)]
        samples: usize,
        /// Also write the check table to `verify.csv` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Process outcome of a subcommand.
#[derive(Debug)]
pub struct Outcome {
    pub passed: bool,
    pub stdout: String,
}

fn is_usage(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::FileNotFound(_) | Error::UnknownFamily(_) | Error::DimensionMismatch { .. }
    )
}

/// Exit code for a finished dispatch.
pub fn exit_code(r: &Result<Outcome>) -> i32 {
    match r {
        Ok(o) if o.passed => 0,
        Ok(_) => 1,
        Err(e) if is_usage(e) => 2,
        Err(_) => 1,
    }
}

/// Loads the config with overrides; the seed environment variable sits
/// between the file and `--override`.
pub fn resolve_config(path: &Path, overrides: &[String], env_seed: Option<String>) -> Result<ExperimentConfig> {
    let mut ov = Vec::new();
    if let Some(s) = env_seed {
        let seed: i64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s} is not an integer")))?;
        ov.push(("seed".to_string(), toml::Value::Integer(seed)));
    }
    for o in overrides {
        ov.push(experiments::parse_override(o)?);
    }
    experiments::load_config_with(path, &ov)
}

fn config_of(c: &Common) -> Result<ExperimentConfig> {
    resolve_config(&c.config, &c.overrides, std::env::var(SEED_ENV).ok())
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> Result<PathBuf> {
    let d = c.out.clone().unwrap_or_else(|| cfg.out.clone());
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn simulate_record(cfg: &ExperimentConfig) -> Result<sde::ObservationRecord> {
    let model = make_model(&cfg.family()?, &cfg.theta_true()?)?;
    let grid = TorusGrid::new(model.q(), cfg.grid.n)?;
    let horizon = cfg.horizons.iter().cloned().fold(0.0, f64::max);
    let law = cfg.initial_laws()?.remove(0);
    let init = match law {
        InitialLaw::Point(x) => InitialCondition::Point(x),
        other => InitialCondition::Density(other.density(&model, &grid)?),
    };
    let sc = SimulationConfig::new(cfg.dt, horizon, cfg.seed, init).with_hidden(true);
    sde::simulate_signal_observation(&model, &sc)
}

fn record_for(cfg: &ExperimentConfig, path: &Option<PathBuf>) -> Result<sde::ObservationRecord> {
    match path {
        Some(p) => io::read_record(p, 1),
        None => {
            let model = make_model(&cfg.family()?, &cfg.theta_true()?)?;
            let grid = TorusGrid::new(model.q(), cfg.grid.n)?;
            let horizon = cfg.horizons.iter().cloned().fold(0.0, f64::max);
            stationary_record(&model, &grid, cfg.dt, horizon, cfg.seed, 0)
        }
    }
}

fn surface(cfg: &ExperimentConfig, record: &Option<PathBuf>) -> Result<mle::LikelihoodSurface> {
    let family = cfg.family()?;
    let theta = cfg.theta_true()?;
    let model = make_model(&family, &theta)?;
    let grid = TorusGrid::new(model.q(), cfg.grid.n)?;
    let nu = cfg.initial_laws()?.remove(0).density(&model, &grid)?;
    let obs = record_for(cfg, record)?;
    mle::likelihood_surface(&family, &cfg.space()?, &nu, &obs, &cfg.horizons)
}

pub fn dispatch(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // A pool may already exist when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate(c) => {
            let cfg = config_of(&c)?;
            let dir = out_dir(&c, &cfg)?;
            let obs = simulate_record(&cfg)?;
            io::write_record(&obs, &dir.join("record.csv"))?;
            io::write_record(&obs, &dir.join("record.bin"))?;
            Ok(Outcome {
                passed: true,
                stdout: format!("{} steps written to {}\n", obs.len(), dir.display()),
            })
        }
        Command::Filter { common, record } => {
            let cfg = config_of(&common)?;
            let dir = out_dir(&common, &cfg)?;
            let model = Arc::new(make_model(&cfg.family()?, &cfg.theta_true()?)?);
            let grid = TorusGrid::new(model.q(), cfg.grid.n)?;
            let nu = cfg.initial_laws()?.remove(0).density(&model, &grid)?;
            let obs = record_for(&cfg, &record)?;
            let run = run_filter(model, &nu, &obs, &FilterOptions::default())?;
            std::fs::write(dir.join("trajectory.csv"), io::trajectory_to_csv(&run))?;
            io::write_density_snapshot(&run.final_state.density, run.final_state.t, &dir.join("final_density.f64"))?;
            Ok(Outcome {
                passed: true,
                stdout: format!("log-likelihood {:?}\n", run.final_log_likelihood()),
            })
        }
        Command::Likelihood { common, record } => {
            let cfg = config_of(&common)?;
            let dir = out_dir(&common, &cfg)?;
            let s = surface(&cfg, &record)?;
            let text = surface_csv(&s);
            std::fs::write(dir.join("likelihood.csv"), &text)?;
            Ok(Outcome { passed: true, stdout: text })
        }
        Command::Mle { common, record } => {
            let cfg = config_of(&common)?;
            let dir = out_dir(&common, &cfg)?;
            let s = surface(&cfg, &record)?;
            let mut text = String::from("T,index,theta,ties\n");
            for (i, t) in s.times.iter().enumerate() {
                let e = mle::mle_estimate(&s, i)?;
                let ties: Vec<String> = e.ties.iter().map(|x| x.to_string()).collect();
                let _ = writeln!(text, "{t:?},{},\"{}\",{}", e.index, e.point, ties.join(";"));
            }
            std::fs::write(dir.join("mle.csv"), &text)?;
            Ok(Outcome { passed: true, stdout: text })
        }
        Command::Experiment(c) => {
            let cfg = config_of(&c)?;
            let dir = c.out.clone().unwrap_or_else(|| cfg.out.clone());
            let report = experiments::run_experiment(&cfg)?;
            let path = experiments::write_report(&report, &dir)?;
            let mut text = String::new();
            for v in &report.verdicts {
                let _ = writeln!(
                    text,
                    "{} {} measured={:?} ({})",
                    if v.passed { "PASS" } else { "FAIL" },
                    v.name,
                    v.measured,
                    v.condition
                );
            }
            let _ = writeln!(text, "manifest: {}", path.display());
            Ok(Outcome { passed: report.passed(), stdout: text })
        }
        Command::VerifyModel { config, overrides, family, theta, samples, out } => {
            let (family, theta) = match config {
                Some(p) => {
                    let cfg = resolve_config(&p, &overrides, std::env::var(SEED_ENV).ok())?;
                    (cfg.family()?, cfg.theta_true()?)
                }
                None => {
                    let fam = ModelFamily::by_name(&family)?;
                    let th = theta.unwrap_or_else(|| default_theta(&fam));
                    (fam, ParameterPoint::new(th).map_err(|e| Error::Config(e.to_string()))?)
                }
            };
            let model = make_model(&family, &theta)?;
            let rep = verify_assumptions(&model, samples);
            let mut text = String::from("check,passed,worst,limit\n");
            for c in &rep.checks {
                let _ = writeln!(text, "{},{},{:?},{:?}", c.name, c.passed, c.worst, c.limit);
            }
            if let Some(d) = out {
                std::fs::create_dir_all(&d)?;
                std::fs::write(d.join("verify.csv"), &text)?;
            }
            Ok(Outcome { passed: rep.passed(), stdout: text })
        }
    }
}

fn default_theta(f: &ModelFamily) -> Vec<f64> {
    match f {
        ModelFamily::GradientSine => vec![0.1, 1.0, 0.0, 0.3],
        _ => vec![0.0; f.param_dim()],
    }
}

fn surface_csv(s: &mle::LikelihoodSurface) -> String {
    let mut text = String::from("T");
    for j in 0..s.space.len() {
        let _ = write!(text, ",logL_{j}");
    }
    text.push('\n');
    for (i, t) in s.times.iter().enumerate() {
        text.push_str(&format!("{t:?}"));
        for v in s.row(i) {
            let _ = write!(text, ",{v:?}");
        }
        text.push('\n');
    }
    text
}

/// Parses arguments, dispatches, prints diagnostics and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let r = dispatch(cli);
    match &r {
        Ok(o) => print!("{}", o.stdout),
        Err(e) => eprintln!("error: {e}"),
    }
    exit_code(&r)
}
