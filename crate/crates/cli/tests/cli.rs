use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixture_smpc::experiment::{load_config, SetsFile};

fn case_study() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../case_study.cfg")
}

fn smpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smpc"))
        .args(args)
        .env_remove("SMPC_SEED")
        .output()
        .expect("binary runs")
}

fn write_cfg(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = edit(std::fs::read_to_string(case_study()).unwrap());
    let path = dir.join("edited.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn tighten_round_trips_through_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = case_study();
    let out = smpc(&[
        "tighten",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Z    = [-1.579189, 1.579189]"), "{stdout}");
    let text = std::fs::read_to_string(dir.path().join("sets.toml")).unwrap();
    let file: SetsFile = toml::from_str(&text).unwrap();
    let (_, sets, zf) = load_config(&cfg).unwrap().sets().unwrap();
    for (a, b) in [(&file.z, &sets.z), (&file.v, &sets.v), (&file.z_f, &zf)] {
        assert!((a.a() - b.a()).amax() <= 1e-12);
        assert!((a.b() - b.b()).amax() <= 1e-12);
    }
}

#[test]
fn config_errors_exit_with_2() {
    let out = smpc(&["tighten", "--config", "/nonexistent/file.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = write_cfg(dir.path(), |t| t.replace("weights = [0.2, 0.3, 0.5]\n", ""));
    let out = smpc(&["tighten", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights must sum to 1"));
    let out = smpc(&["montecarlo", "--format", "parquet"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_design_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let weak = write_cfg(dir.path(), |t| t.replace("K = [[-1.0]]", "K = [[-0.5]]"));
    let out = smpc(&["tighten", "--config", weak.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let literal = write_cfg(dir.path(), |t| {
        t.replace("prs_noise = \"component\"", "prs_noise = \"mixture\"")
    });
    let out = smpc(&["tighten", "--config", literal.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn solver_fault_exits_with_4() {
    let cfg = case_study();
    let out = smpc(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--state",
        "2.5",
        "--z-prev",
        "-2.5",
    ]);
    assert_eq!(out.status.code(), Some(4));
    let out = smpc(&["solve", "--config", cfg.to_str().unwrap(), "--state", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("485 variables, 1334 rows"));
}

#[test]
fn montecarlo_writes_reports_and_honours_the_seed_variable() {
    let cfg = case_study();
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let run = |dir: &Path, seed_flag: Option<&str>, env_seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_smpc"));
        cmd.args([
            "montecarlo",
            "--config",
            cfg.to_str().unwrap(),
            "--episodes",
            "2",
            "--workers",
            "1",
        ])
        .args(["--format", "csv", "--out", dir.to_str().unwrap()])
        .env_remove("SMPC_SEED");
        if let Some(s) = seed_flag {
            cmd.args(["--seed", s]);
        }
        if let Some(s) = env_seed {
            cmd.env("SMPC_SEED", s);
        }
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.join("trajectories.csv")).unwrap()
    };
    let a = run(dirs[0].path(), Some("7"), None);
    let b = run(dirs[1].path(), None, Some("7"));
    let c = run(dirs[2].path(), None, Some("8"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    for f in [
        "violations.csv",
        "summary.txt",
        "plot_trajectories_long.csv",
        "plot_violation_rates_long.csv",
    ] {
        assert!(dirs[0].path().join(f).exists(), "{f}");
    }
}

#[test]
fn simulate_and_check_run() {
    let cfg = case_study();
    let out = smpc(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("|x-z-e| max 0.0e0"));
    let out = smpc(&["check", "--config", cfg.to_str().unwrap(), "--episodes", "2"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 6, "{stdout}");
}
