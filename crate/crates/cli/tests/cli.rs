//! Drives the `tsmlab` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = "run.seed = 2
generator.width = 8
generator.height = 8
generator.init = random:4
optim.iterations = 20
run.checkpoint_interval = 10
suite.tail = 5
";

fn tsmlab(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, CONFIG).unwrap();
    Command::new(env!("CARGO_BIN_EXE_tsmlab"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_distill_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = tsmlab(dir.path(), &["run-distill", "--out", out.to_str().unwrap(), "--estimator", "ism"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "summary.txt", "images/final.png", "images/iter_00010.png", "depth/final.pgm", "depth/final.range.txt"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("estimator=ism"));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = tsmlab(
        dir.path(),
        &["run-distill", "--out", out.to_str().unwrap(), "--seed", "9", "--gamma", "0.7", "--mode", "paper-literal"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("seed=9\n"), "{summary}");
    assert!(summary.contains("gamma=0.7\n"), "{summary}");
    assert!(summary.contains("mode=paper-literal\n"), "{summary}");
}

#[test]
fn suites_emit_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&[&str], &str, usize); 4] = [
        (&["analyze-trajectory", "--samples", "20"], "trajectory.csv", 22),
        (&["ablate-gamma", "--gammas", "0,0.3,1"], "ablation.csv", 4),
        (&["seed-consistency", "--seeds", "1,2"], "variance.csv", 3),
        (&["compare-estimators"], "comparison.csv", 4),
    ];
    for (args, table, lines) in cases {
        let out = dir.path().join(args[0]);
        let mut full = args.to_vec();
        full.extend(["--out", out.to_str().unwrap()]);
        let o = tsmlab(dir.path(), &full);
        assert!(o.status.success(), "{}: {}", args[0], stderr(&o));
        let text = std::fs::read_to_string(out.join(table)).unwrap();
        assert_eq!(text.lines().count(), lines, "{}", args[0]);
        assert!(out.join("summary.txt").exists());
    }
}

#[test]
fn failures_print_one_machine_readable_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = tsmlab(dir.path(), &["run-distill", "--gamma", "3"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error kind=config message=\""), "{err}");
    assert_eq!(err.lines().count(), 1);

    let o = tsmlab(dir.path(), &["run-distill", "--estimator", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error kind=usage "));

    let o = Command::new(env!("CARGO_BIN_EXE_tsmlab"))
        .args(["run-distill", "--config", "/nonexistent/x.cfg"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error kind=io "));
}
