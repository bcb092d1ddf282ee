use std::path::Path;
use std::process::{Command, Output};

fn dosesim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dosesim"))
        .args(args)
        .current_dir(dir)
        .env_remove("DOSESIM_OUT")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_prints_usage_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = dosesim(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["generate", "preprocess", "tune", "train", "rollout", "report"] {
        assert!(text.contains(cmd), "{text}");
    }
    let o = dosesim(&["train", "--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dosesim(&[], dir.path()).status.code(), Some(1));
    assert_eq!(dosesim(&["fly"], dir.path()).status.code(), Some(1));
    assert_eq!(dosesim(&["generate", "--seed", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(dosesim(&["generate", "--config", "missing.toml"], dir.path()).status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[plant]\nduraton = 100\n").unwrap();
    let o = dosesim(&["generate", "--config", "c.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("duraton"), "{}", stderr(&o));
}

#[test]
fn missing_artifacts_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let o = dosesim(&["preprocess", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset.csv"), "{}", stderr(&o));
}

#[test]
fn output_root_precedence() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "out = \"from-config\"\n[plant]\nduration = 50\n").unwrap();
    let run = |args: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_dosesim"));
        c.args(args).current_dir(dir.path()).env_remove("DOSESIM_OUT");
        if let Some(v) = env {
            c.env("DOSESIM_OUT", v);
        }
        assert!(c.output().unwrap().status.success());
    };
    run(&["generate", "--config", "c.toml", "--out", "from-flag"], Some("from-env"));
    run(&["generate", "--config", "c.toml"], Some("from-env"));
    run(&["generate", "--seed", "1"], Some("from-env"));
    for d in ["from-flag", "from-config", "from-env"] {
        assert!(dir.path().join(d).join("dataset.csv").exists(), "{d}");
    }
}

#[test]
fn small_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.toml"),
        r#"
seed = 5
[plant]
duration = 3000
[tune]
models = ["nlinear"]
trials = 2
[tune.schedule]
epochs = 1
max_train_samples = 200
[train]
models = ["dlinear", "nlinear"]
[train.schedule]
epochs = 3
max_train_samples = 500
[env]
episode_length = 50
"#,
    )
    .unwrap();
    for cmd in ["generate", "preprocess", "tune", "train", "rollout", "report"] {
        let o = dosesim(&[cmd, "--config", "c.toml", "--out", "o"], dir.path());
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let summary = std::fs::read_to_string(dir.path().join("o/report/summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("model,sequence,one_step_mse,growth_ratio,final_mse"));
    let rows: Vec<&str> = lines.collect();
    // the sensor-failure burst lies beyond 3000 steps
    assert_eq!(rows.len(), 2 * 3, "{summary}");
    assert!(dir.path().join("o/tune/nlinear.json").exists());
    assert!(dir.path().join("o/report/dlinear_steady.svg").exists());
}
