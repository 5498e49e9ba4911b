//! Config round trips, report determinism and the command-line contract.

use std::path::{Path, PathBuf};
use std::process::Command;

use torus_pomle::experiments::{load_config, parse_config, parse_override, run_experiment, write_report};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(configs())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    v.sort();
    v
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_torus-pomle"))
}

#[test]
fn shipped_configs_round_trip() {
    let all = shipped();
    assert!(all.len() >= 8);
    for path in all {
        let cfg = load_config(&path).unwrap();
        let again = parse_config(&cfg.to_canonical(), &[]).unwrap();
        assert_eq!(cfg, again, "{}", path.display());
        assert_eq!(cfg.hash(), again.hash());
    }
}

#[test]
fn hash_changes_iff_config_changes() {
    let base = load_config(&configs().join("stability.toml")).unwrap();
    let same = parse_config(&base.to_canonical(), &[]).unwrap();
    assert_eq!(base.hash(), same.hash());
    for o in ["seed=3", "dt=0.002", "grid.n=64", "horizons=[20.0]", "nu=[\"uniform\"]"] {
        let text = base.to_canonical();
        let changed = parse_config(&text, &[parse_override(o).unwrap()]).unwrap();
        assert_ne!(base, changed);
        assert_ne!(base.hash(), changed.hash(), "override {o}");
    }
}

#[test]
fn reports_are_byte_identical_on_rerun() {
    let cfg = load_config(&configs().join("stability.toml")).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_report(&run_experiment(&cfg).unwrap(), a.path()).unwrap();
    write_report(&run_experiment(&cfg).unwrap(), b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.iter().any(|n| n == "tv.csv"));
    for n in names {
        let x = std::fs::read(a.path().join(&n)).unwrap();
        let y = std::fs::read(b.path().join(&n)).unwrap();
        assert_eq!(x, y, "{n:?}");
    }
}

#[test]
fn every_verdict_names_an_emitted_column() {
    let cfg = load_config(&configs().join("engine-xcheck.toml")).unwrap();
    let r = run_experiment(&cfg).unwrap();
    for v in &r.verdicts {
        let (t, c) = v.source.split_once('.').unwrap();
        assert!(r.table(t).and_then(|t| t.column(c)).is_some(), "{}", v.source);
    }
}

#[test]
fn shipped_contraction_experiment_exits_zero() {
    let out = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["experiment", "--config"])
        .arg(configs().join("contraction.toml"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(out.path().join("manifest.json").exists());
    assert!(out.path().join("audit.csv").exists());
}

#[test]
fn missing_config_exits_two() {
    let st = bin().args(["experiment", "--config", "/nonexistent/x.toml"]).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).to_lowercase().contains("file not found"));
}

#[test]
fn unknown_override_key_exits_two() {
    let st = bin()
        .args(["mle", "--config"])
        .arg(configs().join("consistency.toml"))
        .args(["--override", "grdi.n=3"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("grdi.n"));
}

#[test]
fn mle_is_deterministic_under_seed_override() {
    let run = || {
        let out = tempfile::tempdir().unwrap();
        let st = bin()
            .args(["mle", "--config"])
            .arg(configs().join("consistency.toml"))
            .args(["--override", "seed=7", "--override", "horizons=[2.0, 4.0]"])
            .arg("--out")
            .arg(out.path())
            .env_remove("TORUS_POMLE_SEED")
            .output()
            .unwrap();
        assert_eq!(st.status.code(), Some(0));
        String::from_utf8(st.stdout).unwrap()
    };
    let a = run();
    assert!(a.starts_with("T,index,theta,ties"));
    assert_eq!(a, run());
}

#[test]
fn env_seed_changes_the_record_and_override_beats_it() {
    let sim = |env: Option<&str>, ov: Option<&str>| {
        let out = tempfile::tempdir().unwrap();
        let mut c = bin();
        c.args(["simulate", "--config"])
            .arg(configs().join("stability.toml"))
            .args(["--override", "horizons=[1.0]"])
            .arg("--out")
            .arg(out.path());
        if let Some(s) = ov {
            c.args(["--override", s]);
        }
        match env {
            Some(e) => c.env("TORUS_POMLE_SEED", e),
            None => c.env_remove("TORUS_POMLE_SEED"),
        };
        assert_eq!(c.output().unwrap().status.code(), Some(0));
        std::fs::read(out.path().join("record.bin")).unwrap()
    };
    let base = sim(None, None);
    let env = sim(Some("99"), None);
    assert_ne!(base, env);
    assert_eq!(sim(Some("99"), Some("seed=2")), base);
}

#[test]
fn verify_model_without_config() {
    let st = bin()
        .args(["verify-model", "--family", "gradient-sine", "--theta", "0.5,1,0.5,0.3", "--samples", "64"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0));
    let st = bin()
        .args(["verify-model", "--family", "nope", "--theta", "1"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
}
