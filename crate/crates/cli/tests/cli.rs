use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn askd() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_askd"));
    c.env_remove("ASKD_OUT").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    askd().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|r| r.unwrap().iter().map(str::to_string).collect()).collect()
}

fn column(rows: &[Vec<String>], name: &str) -> usize {
    rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

const ARTIFACTS: [&str; 6] = ["steps.csv", "evals.csv", "summary.json", "config.toml", "dataset.jsonl", "model.json"];

#[test]
fn run_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = run(&["run", "--mode", "sensitivity", "--sigma-des", "0.9", "--seed", "7", "--episodes", "60", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = tmp.path().join("askdagger-seed7");
    for f in ARTIFACTS {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["config"]["gating"]["sigma_des"], 0.9);
    assert_eq!(summary["totals"]["episodes"], 60);
}

#[test]
fn same_config_and_seed_reproduce_byte_for_byte() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = run(&["run", "--seed", "3", "--episodes", "80", "--ablate", "no_pier", "--out", d.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ARTIFACTS {
        let x = fs::read(a.path().join("askdagger-seed3").join(f)).unwrap();
        let y = fs::read(b.path().join("askdagger-seed3").join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }

    let o = run(&["replay", a.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("identical"));

    let steps = a.path().join("askdagger-seed3/steps.csv");
    let text = fs::read_to_string(&steps).unwrap();
    fs::write(&steps, text.replacen("false", "true", 1)).unwrap();
    let o = run(&["replay", a.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("differs in steps.csv"));
}

#[test]
fn sweep_over_sigma_and_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "run", "--sweep", "sigma-des", "0.1:0.9:0.1", "--seeds", "10", "--episodes", "15", "--jobs", "2",
        "--set", "eval.episodes=5", "--out", tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut dirs: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    dirs.sort();
    assert_eq!(dirs.len(), 90);
    assert!(dirs.iter().all(|d| d.join("steps.csv").is_file()));
    assert!(tmp.path().join("askdagger-sigma_des0.3-seed9").is_dir());

    let report = tmp.path().join("report");
    let o = run(&["report", tmp.path().to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let agg = csv_rows(&report.join("aggregate.csv"));
    assert_eq!(agg.len(), 10);
    let (n, sd, sigma) = (column(&agg, "n"), column(&agg, "query_rate_std"), column(&agg, "sigma_des"));
    let sigmas: Vec<&str> = agg[1..].iter().map(|r| r[sigma].as_str()).collect();
    assert_eq!(sigmas, ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9"]);
    for row in &agg[1..] {
        assert_eq!(row[n], "10");
        assert!(!row[sd].is_empty());
    }
}

#[test]
fn askd_out_overrides_out_flag() {
    let flag = tempfile::tempdir().unwrap();
    let env = tempfile::tempdir().unwrap();
    let o = askd()
        .args(["run", "--episodes", "10", "--out", flag.path().to_str().unwrap()])
        .env("ASKD_OUT", env.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(env.path().join("askdagger-seed0/steps.csv").is_file());
    assert_eq!(fs::read_dir(flag.path()).unwrap().count(), 0);
}

#[test]
fn invalid_config_exits_2_with_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[run]\nepisodes = 10\n\n[gating]\nsigma_des = 1.5\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bad.toml") && err.contains("line 5") && err.contains("sigma_des"), "{err}");

    fs::write(&cfg, "[run]\nepisodes = 10\nbogus = 1\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    fs::write(&cfg, "[run\nepisodes = 10\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));

    for args in [
        &["run", "--sigma-des", "1.5"][..],
        &["run", "--ablate", "no_such_thing"],
        &["run", "--jobs", "0", "--episodes", "1"],
        &["run", "--sweep", "sigma-des", "0.9:0.1:0.1"],
        &["run", "--set", "gating.nope=1"],
        &["run", "--phases", "seen:abc"],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn config_file_echo_round_trips_through_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    fs::write(&cfg, "[run]\nname = \"exp\"\nepisodes = 20\n\n[gating]\nmode = \"specificity\"\nsigma_des = 0.7\n").unwrap();
    let out = tmp.path().join("out");
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echo = out.join("exp-seed0/config.toml");
    let o = run(&["run", "--config", echo.to_str().unwrap(), "--out", tmp.path().join("again").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&echo).unwrap(), fs::read(tmp.path().join("again/exp-seed0/config.toml")).unwrap());
    assert_eq!(
        fs::read(out.join("exp-seed0/steps.csv")).unwrap(),
        fs::read(tmp.path().join("again/exp-seed0/steps.csv")).unwrap()
    );
}

#[test]
fn report_of_one_run_equals_its_series() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["run", "--episodes", "200", "--seed", "2", "--set", "metrics.series_every=25", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = tmp.path().join("report");
    let o = run(&["report", tmp.path().join("askdagger-seed2").to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("askdagger-seed2/summary.json")).unwrap()).unwrap();
    let mut expected = Vec::new();
    for p in summary["series"].as_array().unwrap() {
        for m in ["sensitivity", "specificity", "novice_success", "system_success", "query_rate", "gamma"] {
            if let Some(v) = p[m].as_f64() {
                expected.push((p["episode"].as_u64().unwrap(), m.to_string(), v));
            }
        }
    }
    assert_eq!(summary["series"].as_array().unwrap().len(), 8);
    let rows = csv_rows(&report.join("series.csv"));
    let got: Vec<(u64, String, f64)> = rows[1..]
        .iter()
        .map(|r| (r[3].parse().unwrap(), r[4].clone(), r[5].parse().unwrap()))
        .collect();
    assert_eq!(got, expected);

    let means = csv_rows(&report.join("series_mean.csv"));
    assert_eq!(means.len(), rows.len());
    for (m, s) in means[1..].iter().zip(&rows[1..]) {
        assert_eq!((&m[1], &m[2], &m[3], &m[4], &m[5]), (&s[3], &s[4], &s[5], &String::new(), &"1".to_string()));
    }
}

const HEADER: &str = "run_id,seed,phase,episode,step,k,u,gamma,queried,reason,reward,kind,novice_correct,system_success,goal,action";

/// Six one-step episodes from `(novice_correct, queried)` pairs.
fn toy_run(root: &Path, seed: u64, rows: [(bool, bool); 6]) {
    let dir = root.join(format!("toy-seed{seed}"));
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("config.toml"), "[run]\nname = \"toy\"\n\n[gating]\nsigma_des = 0.5\n").unwrap();
    let mut text = format!("{HEADER}\n");
    for (i, (correct, queried)) in rows.iter().enumerate() {
        text += &format!(
            "toy-seed{seed},{seed},0,{i},0,0,0.5,0.4,{queried},{},0,,{correct},{},0,0\n",
            if *queried { "active" } else { "none" },
            correct | queried
        );
    }
    fs::write(dir.join("steps.csv"), text).unwrap();
}

#[test]
fn aggregate_matches_hand_computation() {
    let tmp = tempfile::tempdir().unwrap();
    let (f, t) = (false, true);
    // Only the last four rows count. Run 0: failures (q, -), successes (-, q).
    toy_run(tmp.path(), 0, [(t, t), (f, f), (f, t), (f, f), (t, f), (t, t)]);
    // Run 1: failure (q), successes (q, -, -).
    toy_run(tmp.path(), 1, [(f, f), (f, t), (f, t), (t, t), (t, f), (t, f)]);
    let report = tmp.path().join("report");
    let o = run(&["report", tmp.path().to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let agg = csv_rows(&report.join("aggregate.csv"));
    assert_eq!(agg.len(), 2);
    let get = |name: &str| -> f64 { agg[1][column(&agg, name)].parse().unwrap() };
    assert_eq!(agg[1][column(&agg, "n")], "2");
    // Sensitivity 1/2 and 1/1; specificity 1/2 and 2/3.
    assert!((get("sensitivity_mean") - 0.75).abs() < 1e-12);
    assert!((get("sensitivity_std") - 0.125f64.sqrt()).abs() < 1e-12);
    assert!((get("specificity_mean") - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    // Novice success 2/4 and 3/4; system success 3/4 and 4/4.
    assert!((get("novice_success_mean") - 0.625).abs() < 1e-12);
    assert!((get("system_success_mean") - 0.875).abs() < 1e-12);
    // Query rate 2/4 in both runs.
    assert_eq!(get("query_rate_mean"), 0.5);
    assert_eq!(get("query_rate_std"), 0.0);
    // Queries over all six rows: 3 and 3.
    assert_eq!(get("queries_mean"), 3.0);
    assert_eq!(agg[1][column(&agg, "final_seen_success_mean")], "");
}

#[test]
fn report_names_file_with_bad_schema() {
    let tmp = tempfile::tempdir().unwrap();
    toy_run(tmp.path(), 0, [(true, false); 6]);
    let steps = tmp.path().join("toy-seed0/steps.csv");
    let text = fs::read_to_string(&steps).unwrap().replace(",gamma,", ",threshold,");
    fs::write(&steps, text).unwrap();
    let o = run(&["report", tmp.path().to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("schema error") && err.contains("toy-seed0/steps.csv"), "{err}");
}

#[test]
fn ablate_runs_each_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "ablate", "--episodes", "20", "--seeds", "2", "--variants", "none,no_pier,active_dagger", "--jobs", "2",
        "--set", "eval.episodes=5", "--out", tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let agg = csv_rows(&tmp.path().join("report/aggregate.csv"));
    let names: Vec<&str> = agg[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["askdagger-active_dagger", "askdagger-no_pier", "askdagger-none"]);
    let abl = column(&agg, "ablations");
    assert_eq!(agg[1][abl], "no_fier_relabel+no_fier_validate+no_pier");
    assert!(agg[1..].iter().all(|r| r[column(&agg, "n")] == "2"));
}

fn spawn_serve(args: &[&str]) -> (std::process::Child, String) {
    let mut child = askd()
        .arg("serve")
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected: {line}")).to_string();
    (child, base)
}

#[test]
fn serve_health_echoes_config() {
    let (mut child, base) = spawn_serve(&["--port", "0", "--fallback", "block", "--sigma-des", "0.7", "--episodes", "50"]);
    let health: Value = reqwest::blocking::get(format!("{base}/health")).unwrap().json().unwrap();
    let state: Value = reqwest::blocking::get(format!("{base}/session/askdagger-seed0/state")).unwrap().json().unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(health["config"]["gating"]["sigma_des"], 0.7);
    assert_eq!(health["sessions"][0]["id"], "askdagger-seed0");
    assert_eq!(state["session_id"], "askdagger-seed0");
}

#[test]
fn serve_timeout_falls_back_to_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let served = tmp.path().join("served");
    let direct = tmp.path().join("direct");
    let (child, _) = spawn_serve(&[
        "--port", "0", "--timeout", "0.01", "--exit-when-done", "--episodes", "40", "--out", served.to_str().unwrap(),
    ]);
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["run", "--episodes", "40", "--out", direct.to_str().unwrap()]);
    assert!(o.status.success());
    for f in ARTIFACTS {
        assert!(
            fs::read(served.join("askdagger-seed0").join(f)).unwrap() == fs::read(direct.join("askdagger-seed0").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn serve_rejects_invalid_port() {
    for port in ["70000", "abc", "-1"] {
        let o = run(&["serve", "--port", port]);
        assert_eq!(o.status.code(), Some(2), "port {port}");
    }
}
