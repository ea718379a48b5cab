use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kl-erasure"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn solve_reports_the_closed_form_cost() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--tau-e", "1", "--grid-points", "20"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("solve.json"));
    assert!((r["cost_nats"].as_f64().unwrap() - 0.765853).abs() < 1e-6);
    assert!((r["v0_0"].as_f64().unwrap() - 0.379885).abs() < 1e-6);
    assert!((r["v1_0"].as_f64().unwrap() - 1.151822).abs() < 1e-6);
    assert_eq!(r["digest"].as_str().unwrap().len(), 64);
    assert!(r["config"].get("out").is_none());
    let rows = csv_rows(&dir.path().join("solve.csv"));
    assert_eq!(rows.len(), 21);
    assert!(rows.iter().all(|r| r.len() == 7));
    let last: Vec<f64> = rows[20].iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(&last[..3], &[1.0, 1.0, 0.0]);
    assert!((last[5] - 1.0).abs() < 1e-9);

    let o = run(&["solve", "--tau-e", "100"], dir.path());
    assert!(o.status.success());
    let r = json(&dir.path().join("solve.json"));
    assert!((r["cost_nats"].as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-6);
}

#[test]
fn usage_and_config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau_e"));
    assert_eq!(run(&["solve", "--tau-e", "-1"], dir.path()).status.code(), Some(2));
    assert_eq!(
        run(&["solve", "--tau-e", "1", "--k01", "1"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(run(&["sweep", "--ratios", "1,0"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "tau_e = 1.0\nunknown_key = 3\n").unwrap();
    let o = run(&["solve", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn outputs_are_reproducible_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--samples", "2000", "--seed", "7", "--ratios", "0.1,1,3"];
    for (dir, threads) in [(a.path(), "1"), (b.path(), "4")] {
        for cmd in ["solve", "sweep", "simulate"] {
            let mut full = vec![cmd, "--tau-e", "0.7", "--threads", threads];
            full.extend(args);
            assert!(run(&full, dir).status.success());
        }
    }
    for file in ["solve.json", "solve.csv", "sweep.csv", "paths.jsonl", "simulate.json"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
}

#[test]
fn written_config_reproduces_the_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "thermo-report",
            "--tau-e",
            "0.3",
            "--k01",
            "0.2",
            "--k10",
            "1.7",
            "--p0",
            "0.25",
            "--protocol",
            "quench",
        ],
        a.path(),
    );
    assert!(o.status.success());
    let cfg = a.path().join("config.toml");
    let o = run(&["thermo-report", "--config", cfg.to_str().unwrap()], b.path());
    assert!(o.status.success());
    for file in ["thermo.json", "thermo.csv"] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap()
        );
    }
    let r = json(&a.path().join("thermo.json"));
    assert!(r["first_law_residual"].as_f64().unwrap() < 1e-8);
    assert_eq!(r["config"]["k10"].as_f64(), Some(1.7));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "tau_e = 5.0\ngrid_points = 3\n").unwrap();
    let o = run(
        &["solve", "--config", cfg.to_str().unwrap(), "--tau-e", "2"],
        dir.path(),
    );
    assert!(o.status.success());
    let r = json(&dir.path().join("solve.json"));
    assert_eq!(r["tau_e"].as_f64(), Some(2.0));
    assert_eq!(r["z_grid"].as_array().unwrap().len(), 4);
}

#[test]
fn default_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("verify.json"));
    assert_eq!(r["passed"], Value::Bool(true));
    let checks = r["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["status"] == "pass"));
    assert!(checks
        .iter()
        .all(|c| c["tolerance"].is_number() && c["target"].is_number()));
}

#[test]
fn corrupted_reversal_fails_naming_eq15() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--corrupt-reversal", "--samples", "2000"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eq15"));
    let r = json(&dir.path().join("verify.json"));
    assert_eq!(r["passed"], Value::Bool(false));
}

#[test]
fn too_few_samples_are_inconclusive_not_failed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "--samples", "10"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("verify.json"));
    let checks = r["checks"].as_array().unwrap();
    let inconclusive: Vec<&str> = checks
        .iter()
        .filter(|c| c["status"] == "inconclusive")
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(inconclusive.len(), 4);
    assert!(inconclusive.iter().all(|n| n.contains("mc")));
}

#[test]
fn sweep_matches_the_closed_form_and_its_asymptotes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep", "--samples", "4000"], dir.path());
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "ratio,cost_eq8,asymptote_half_log,floor_log2,salamon_bound,mc_estimate,mc_se"
    );
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 6);
    let col = |i: usize| -> Vec<f64> { rows.iter().map(|r| r[i].parse().unwrap()).collect() };
    let cost = col(1);
    assert!((cost[0] - 2.65416).abs() < 1e-5);
    assert!((col(2)[0] - 2.64916).abs() < 1e-5);
    assert!(cost[5] - std::f64::consts::LN_2 < 1e-8);
    assert!(cost.windows(2).all(|w| w[1] < w[0]));
    // sigma tau_e <= log 2 leaves the bound undefined.
    assert_eq!(rows[0][4], "");
    assert!(rows[3][4].parse::<f64>().unwrap() > cost[3]);
    for (r, (m, se)) in col(5).iter().zip(col(6)).enumerate() {
        assert!((m - cost[r]).abs() <= 4.0 * se + 1e-6, "row {r}");
    }
}
