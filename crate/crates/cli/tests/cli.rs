use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use obsint::data::{load_euroc_csv, split_ranges, TrajectorySpec};
use obsint::eval::{read_report, Method};
use obsint::trainer::parse_metrics_csv;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn obsint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obsint")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn quickstart(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = configs().join("quickstart.json");
    let dir = format!("output_dir={}", out.display());
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--set", &dir];
    args.extend_from_slice(extra);
    obsint(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_every_flag() {
    let o = obsint(&["train", "--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for flag in ["--config", "--seed", "--set", "--resume"] {
        assert!(text.contains(flag), "{flag} missing from\n{text}");
    }
    let text = String::from_utf8_lossy(&obsint(&["predict", "--help"]).stdout).into_owned();
    assert!(text.contains("--checkpoint") && text.contains("--horizon"));
}

#[test]
fn unknown_flags_are_errors() {
    let cfg = configs().join("gradcheck_tiny.json");
    let o = obsint(&["gradcheck", "--config", cfg.to_str().unwrap(), "--frobnicate"]);
    assert!(!o.status.success());
}

#[test]
fn shipped_gradcheck_config_passes() {
    let cfg = configs().join("gradcheck_tiny.json");
    let o = obsint(&["gradcheck", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("end_to_end") && !table.contains("FAIL"), "{table}");
}

#[test]
fn simulate_is_reproducible_and_loadable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = quickstart("simulate", d.path(), &["--seed", "9"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["imu.csv", "gt.csv", "bias.csv", "spec.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let d = load_euroc_csv(&a.path().join("imu.csv"), &a.path().join("gt.csv")).unwrap();
    let spec: TrajectorySpec = serde_json::from_str(&std::fs::read_to_string(a.path().join("spec.json")).unwrap()).unwrap();
    assert_eq!(spec.seed, 9);
    assert!(d.is_aligned() && d.imu.len() == spec.sample_count());
    let c = tempfile::tempdir().unwrap();
    quickstart("simulate", c.path(), &["--seed", "10"]);
    assert_ne!(std::fs::read(a.path().join("imu.csv")).unwrap(), std::fs::read(c.path().join("imu.csv")).unwrap());
}

#[test]
fn train_resume_eval_predict() {
    let dir = tempfile::tempdir().unwrap();
    let o = quickstart("train", dir.path(), &["--set", "train.max_epochs=2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = quickstart("train", dir.path(), &["--resume", "--set", "train.max_epochs=4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = parse_metrics_csv(&std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(log.iter().map(|m| m.epoch).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);

    // without a checkpoint only raw metrics are written
    let o = quickstart("eval", dir.path(), &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let raw_only = read_report(dir.path()).unwrap();
    assert!(!raw_only.is_empty() && raw_only.iter().all(|r| r.method == Method::Raw));

    let best = dir.path().join("best.json");
    let o = quickstart("eval", dir.path(), &["--checkpoint", best.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let both = read_report(dir.path()).unwrap();
    assert!(both.iter().any(|r| r.method == Method::Refined));
    // raw metrics do not depend on the checkpoint
    assert_eq!(raw_only[0], *both.iter().find(|r| r.method == Method::Raw).unwrap());

    let o = quickstart("predict", dir.path(), &["--checkpoint", best.to_str().unwrap(), "--horizon", "1.0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("predict_sim.csv")).unwrap();
    let cfg = obsint_cli::load_config(&configs().join("quickstart.json"), &[], None).unwrap();
    let n = cfg.data.simulate.as_ref().unwrap().sample_count();
    let [_, _, (_, test)] = split_ranges(n, &cfg.data.split, cfg.data.window.window_len).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), test.len());
    assert!(!dir.path().join(".obsint.lock").exists());
}

#[test]
fn threshold_violation_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = quickstart("eval", dir.path(), &["--set", "eval.thresholds.rel_trans_rmse=1e-9"]);
    assert_eq!(o.status.code(), Some(obsint_cli::EXIT_THRESHOLD as i32), "{}", stderr(&o));
    assert!(stderr(&o).contains("rel_trans_rmse"));
    let o = quickstart("eval", dir.path(), &["--set", "eval.thresholds.rel_trans_rmse=1.0"]);
    assert!(o.status.success());
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = quickstart("train", dir.path(), &["--set", "train.batch_size=-3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.batch_size"), "{}", stderr(&o));
    let o = quickstart("train", dir.path(), &["--set", "net.window_len=50"]);
    assert!(stderr(&o).contains("window_len"), "{}", stderr(&o));
    let o = quickstart("train", dir.path(), &["--set", "data.sequences=[{\"imu\":\"a.csv\",\"gt\":\"b.csv\"}]"]);
    assert!(!o.status.success());
}

#[test]
fn busy_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".obsint.lock"), "12345\n").unwrap();
    let o = quickstart("simulate", dir.path(), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("in use"), "{}", stderr(&o));
}

#[test]
fn thread_cap_is_validated() {
    let cfg = configs().join("gradcheck_tiny.json");
    let o = Command::new(env!("CARGO_BIN_EXE_obsint"))
        .args(["gradcheck", "--config", cfg.to_str().unwrap()])
        .env("OBSINT_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("OBSINT_THREADS"));
    let o = Command::new(env!("CARGO_BIN_EXE_obsint"))
        .args(["gradcheck", "--config", cfg.to_str().unwrap()])
        .env("OBSINT_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
}
