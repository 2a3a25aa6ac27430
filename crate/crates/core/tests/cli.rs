mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{assert_same_tree, snapshot, Fixture, FixtureOptions};
use gemquad::backend::MockScript;
use gemquad::orchestrator::{read_state, run, RunOptions, RunStatus, FAULT_ENV};

fn gemquad(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gemquad"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove(FAULT_ENV);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_run_report() {
    let fx = Fixture::build(FixtureOptions {
        via_generate: true,
        ..FixtureOptions::default()
    });
    let cfg = path(&fx.config);
    let out = gemquad(&["generate", "--config", cfg], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("hi: 100 contexts -> 100 records (0 excluded)"), "{}", stdout(&out));

    let out = gemquad(&["run", "--config", cfg], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("run finished: 5 rounds, stop max_rounds, best round 4"), "{}", stdout(&out));

    let report = fx.run_dir().join("report");
    fs::remove_dir_all(&report).unwrap();
    let out = gemquad(&["report", "--run-dir", path(&fx.run_dir())], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["rounds.md", "rounds.csv", "acceptance.csv", "final_eval.md", "summary.json"] {
        assert!(report.join(f).exists(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let fx = Fixture::build(FixtureOptions::default());
    let missing = fx.root().join("nope.toml");

    assert_eq!(gemquad(&[], &[]).status.code(), Some(2), "usage");
    assert_eq!(gemquad(&["run", "--config", path(&missing)], &[]).status.code(), Some(2));

    let bad = fx.root().join("bad.toml");
    fs::write(&bad, fs::read_to_string(&fx.config).unwrap().replace("k = 2", "k = 0")).unwrap();
    let out = gemquad(&["run", "--config", path(&bad)], &[]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let unreachable = fx.root().join("unreachable.toml");
    let text = fs::read_to_string(&fx.config).unwrap().replace(
        "base_url = \"mock://student.json\"",
        "base_url = \"http://127.0.0.1:9\"\nmax_attempts = 1\ntimeout_secs = 2",
    );
    fs::write(&unreachable, text.replace("run_dir = \"run\"", "run_dir = \"run-unreachable\"")).unwrap();
    let out = gemquad(&["run", "--config", path(&unreachable)], &[]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));

    let cfg = path(&fx.config);
    assert_eq!(gemquad(&["run", "--config", cfg], &[]).status.code(), Some(0));
    let out = gemquad(&["run", "--config", cfg], &[]);
    assert_eq!(out.status.code(), Some(4), "existing journal without --resume");
    assert!(stderr(&out).contains("--resume"), "{}", stderr(&out));
    assert_eq!(gemquad(&["run", "--config", cfg, "--resume"], &[]).status.code(), Some(0));

    assert_eq!(gemquad(&["report", "--run-dir", path(fx.root())], &[]).status.code(), Some(4));
}

#[test]
fn crash_after_training_then_resume() {
    let reference = Fixture::build(FixtureOptions::default());
    run(&reference.load_config(), &RunOptions::default()).unwrap();

    let fx = Fixture::build(FixtureOptions::default());
    let cfg = path(&fx.config);
    let out = gemquad(&["run", "--config", cfg], &[(FAULT_ENV, "after_train:3")]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), None, "process is killed by abort");

    let partial = read_state(&fx.run_dir()).unwrap();
    assert_eq!(partial.status, RunStatus::Running);
    assert_eq!(partial.rounds.len(), 2);
    assert!(fx.run_dir().join(".lock").exists(), "abort leaves the lock behind");

    let out = gemquad(&["run", "--config", cfg, "--resume"], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_same_tree(&snapshot(&reference.run_dir()), &snapshot(&fx.run_dir()));
}

fn dev_path(fx: &Fixture) -> String {
    path(&fx.root().join("dev.json")).to_string()
}

#[test]
fn eval_from_predictions_file() {
    let fx = Fixture::build(FixtureOptions::default());
    let preds: BTreeMap<String, String> = (0..20)
        .map(|i| (format!("dev-{i:05}"), if i < 10 { format!("City{i}") } else { "the capital".into() }))
        .collect();
    let preds_path = fx.root().join("preds.json");
    fs::write(&preds_path, serde_json::to_vec(&preds).unwrap()).unwrap();
    let out_path = fx.root().join("eval.json");
    let out = gemquad(
        &["eval", "--dataset", &dev_path(&fx), "--predictions", path(&preds_path), "--out", path(&out_path)],
        &[],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("| en | 50.00 / 50.00 | 20 | 0 |"), "{}", stdout(&out));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(report["average"]["f1"], 0.5);
}

#[test]
fn eval_against_a_model_backend() {
    let fx = Fixture::build(FixtureOptions::default());
    let mut script = MockScript {
        skills: vec![0.0, 0.5],
        ..MockScript::default()
    };
    for i in 0..20 {
        let id = format!("dev-{i:05}");
        script.difficulty.insert(id.clone(), i as f64 / 20.0);
        script.answers.insert(id, format!("City{i}"));
    }
    let script_path = fx.root().join("eval-script.json");
    fs::write(&script_path, serde_json::to_vec(&script).unwrap()).unwrap();
    let backend = format!("mock://{}", path(&script_path));
    let out = gemquad(&["eval", "--dataset", &dev_path(&fx), "--model", "mock-r1", "--backend", &backend], &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    // d = i/20 <= 0.5 holds for i = 0..=10.
    assert!(stdout(&out).contains("| en | 55.00 / 55.00 | 20 | 0 |"), "{}", stdout(&out));
}

#[test]
fn eval_argument_errors() {
    let fx = Fixture::build(FixtureOptions::default());
    let dev = dev_path(&fx);
    let out = gemquad(&["eval", "--dataset", &dev], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--predictions"), "{}", stderr(&out));
    let out = gemquad(&["eval", "--dataset", &dev, "--model", "m", "--profile", "no-such-profile"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = gemquad(&["eval", "--dataset", &dev, "--averaging", "median"], &[]);
    assert_eq!(out.status.code(), Some(2));
}
