use std::path::Path;
use std::process::{Command, Output};

fn cli(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_booster-rl"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn exit_codes_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("work");
    assert_eq!(code(&cli(&w, &["generate", "--n", "0"])), 2);
    let missing = cli(&w, &["train-env"]);
    assert_eq!(code(&missing), 4);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("trajectories.csv"));

    assert_eq!(code(&cli(&w, &["generate", "--n", "600", "--seed", "3"])), 0);
    for f in ["trajectories.csv", "groundtruth.json", "mdp.json", "manifest.json"] {
        assert!(w.join(f).exists(), "{f}");
    }
    let header = std::fs::read_to_string(w.join("trajectories.csv")).unwrap();
    assert!(header.starts_with("patient_id,"));

    let q = cli(&w, &["train-q", "--env", "oracle", "--epochs", "1", "--replicates", "2"]);
    assert_eq!(code(&q), 0, "{}", String::from_utf8_lossy(&q.stderr));
    assert_eq!(code(&cli(&w, &["evaluate", "--env", "oracle", "--replicates", "2"])), 0);
    assert_eq!(code(&cli(&w, &["export", "--env", "oracle", "--replicates", "2"])), 2, "export takes no replicate flag");
    assert_eq!(code(&cli(&w, &["verify"])), 0);

    std::fs::remove_file(w.join("eval_oracle/evaluation.csv")).unwrap();
    let v = cli(&w, &["verify"]);
    assert_eq!(code(&v), 4);
    assert!(String::from_utf8_lossy(&v.stdout).contains("evaluation.csv"));

    // an upstream file edited behind the manifest's back is refused
    std::fs::write(w.join("mdp.json"), "{}").unwrap();
    assert_eq!(code(&cli(&w, &["train-q", "--env", "oracle", "--epochs", "1", "--replicates", "2"])), 3);
}

#[test]
fn config_file_and_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"qlearn": {"gamma": 0.9}}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_booster-rl"))
        .args(["--config", bad.to_str().unwrap(), "show-config"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
    std::fs::write(&bad, r#"{"unknown": 1}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_booster-rl"))
        .args(["--config", bad.to_str().unwrap(), "show-config"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);

    let o = Command::new(env!("CARGO_BIN_EXE_booster-rl"))
        .env("BOOSTER_RL_WORKDIR", dir.path().join("from_env"))
        .arg("show-config")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let shown: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(shown["paths"]["workdir"].as_str().unwrap().ends_with("from_env"));
    assert_eq!(shown["qlearn"]["epochs"], 30);
    assert_eq!(shown["evaluation"]["replicates"], 20);

    let help = Command::new(env!("CARGO_BIN_EXE_booster-rl")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["generate", "train-env", "validate-env", "train-q", "train-deep", "evaluate", "sweep", "export", "verify"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}
