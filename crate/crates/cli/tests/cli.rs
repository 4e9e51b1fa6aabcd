use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use annealpg::envs::make_chain;
use annealpg::lab::CheckReport;
use annealpg::mdp::{Mdp, MdpTables};
use annealpg::optimizer::{read_trace_csv, CSV_HEADER};

fn annealpg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annealpg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const CHAIN: &str = r#"{
  "environment": { "kind": "chain", "length": 3 },
  "runs": [
    {
      "name": "chain",
      "mode": "exact",
      "schedule": { "family": "harmonic", "a": 1.0, "b": 1.0 },
      "iterations": 10
    }
  ],
  "output_dir": "results"
}"#;

#[test]
fn minimal_chain_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "chain.json", CHAIN);
    let o = annealpg(&["train", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let csv = fs::read_to_string(dir.path().join("results/chain.trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 11);
    let rows = read_trace_csv(csv.as_bytes()).unwrap();
    assert!(rows.iter().all(|r| r.j == 3.0 && r.grad_j_norm == 0.0));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("results/chain.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["summary"]["rows"], 11);
    assert_eq!(summary["summary"]["final_j"], 3.0);

    let report = annealpg(&["report", "results/chain.trace.csv"], dir.path());
    assert_eq!(report.status.code(), Some(0));
    let parsed: serde_json::Value = serde_json::from_slice(&report.stdout).unwrap();
    assert_eq!(parsed, summary["summary"]);
}

#[test]
fn config_flag_and_out_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "chain.json", CHAIN);
    let o = annealpg(&["train", "--config", &cfg, "--out", "elsewhere", "--quiet", "--workers", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert!(dir.path().join("elsewhere/chain.trace.csv").exists());
    assert!(!dir.path().join("results").exists());
}

#[test]
fn missing_mdp_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "missing.json",
        "{\n  \"environment\": { \"kind\": \"file\", \"path\": \"absent.json\" }\n}\n",
    );
    let o = annealpg(&["train", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("missing.json:2"), "{err}");
    assert!(err.contains("absent.json"), "{err}");
}

#[test]
fn schema_errors_are_line_anchored() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "typo.json",
        "{\n  \"environment\": { \"kind\": \"chain\", \"length\": 2 },\n  \"runz\": []\n}\n",
    );
    let o = annealpg(&["train", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("typo.json:3:"), "{}", stderr(&o));

    let bad_run = CHAIN.replace("\"mode\": \"exact\"", "\"mode\": \"annealed\"");
    let cfg = write(dir.path(), "no_c.json", &bad_run);
    let o = annealpg(&["train", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_c.json:5:"), "{}", stderr(&o));
    assert!(stderr(&o).contains("coupling"), "{}", stderr(&o));

    let o = annealpg(&["train"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_reports_status() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "chain.json", &make_chain(3, 1.0).unwrap().to_json().unwrap());
    let o = annealpg(&["validate", &good], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let looping = Mdp::new(MdpTables {
        num_states: 2,
        num_actions: 1,
        horizon: 2,
        transition: vec![1.0, 0.0, 0.0, 1.0],
        reward: vec![1.0, 0.0, 0.0, 0.0],
        initial_dist: vec![1.0, 0.0],
        r_max: 1.0,
    })
    .unwrap();
    let leaky = write(dir.path(), "loop.json", &looping.to_json().unwrap());
    let o = annealpg(&["validate", &leaky], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not absorbing"), "{}", stderr(&o));

    let o = annealpg(&["validate", "nowhere.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_writes_passing_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "verify.json",
        r#"{
  "environment": { "kind": "bias_trap", "small_reward": 0.5, "big_reward": 1.0, "delay": 3 },
  "verify": { "random_instances": 4, "thetas_per_instance": 2 },
  "output_dir": "v"
}"#,
    );
    let o = annealpg(&["verify", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let reports: Vec<CheckReport> =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v/checks.json")).unwrap()).unwrap();
    assert!(!reports.is_empty() && reports.iter().all(|r| r.pass));
    assert!(reports.iter().any(|r| r.instance.starts_with("environment")));
    let lip: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v/lipschitz.json")).unwrap()).unwrap();
    assert!(lip["estimates"]["l_d"].as_f64().unwrap() > 0.0);
}

const STOCHASTIC: &str = r#"{
  "environment": { "kind": "random", "num_states": 5, "num_actions": 2, "horizon": 4, "seed": 2 },
  "runs": [
    {
      "name": "annealed",
      "mode": "annealed",
      "schedule": { "family": "power", "a": 0.5, "b": 1.0, "p": 0.75, "c": 2.0 },
      "iterations": 40,
      "record_every": 5,
      "estimator": { "kind": "reinforce", "batch_size": 16 }
    },
    {
      "name": "fixed",
      "mode": { "fixed_gamma": 0.5 },
      "schedule": { "family": "harmonic", "a": 1.0, "b": 1.0 },
      "iterations": 40
    }
  ],
  "sampler": { "episodes": 200, "audit_gammas": [0.9] },
  "output_dir": "o"
}"#;

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir.join("o"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn repeated_invocations_are_bit_identical() {
    let mut snaps = Vec::new();
    for workers in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "s.json", STOCHASTIC);
        for cmd in ["train", "sample"] {
            let o = annealpg(&[cmd, &cfg, "--seed", "42", "--workers", workers], dir.path());
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        }
        snaps.push(snapshot(dir.path()));
    }
    assert_eq!(snaps[0], snaps[1]);
    let names: Vec<&str> = snaps[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "annealed.summary.json",
            "annealed.trace.csv",
            "episodes.csv",
            "fixed.summary.json",
            "fixed.trace.csv",
            "sample_audit.json"
        ]
    );

    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", STOCHASTIC);
    let o = annealpg(&["sample", &cfg, "--seed", "43"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let other = fs::read(dir.path().join("o/episodes.csv")).unwrap();
    let same_seed = &snaps[0].iter().find(|(n, _)| n == "episodes.csv").unwrap().1;
    assert_ne!(&other, same_seed);
}

#[test]
fn divergent_run_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
  "environment": { "kind": "bandit", "rewards": [100.0, 0.0] },
  "runs": [
    {
      "name": "boom",
      "mode": "exact",
      "schedule": { "family": "constant", "a": 1.7976931348623157e308 },
      "iterations": 3
    }
  ]
}"#;
    let cfg = write(dir.path(), "boom.json", text);
    let o = annealpg(&["train", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite") || stderr(&o).contains("iteration"), "{}", stderr(&o));
}
