use std::path::Path;
use std::process::{Command, Output};

fn navinfer(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_navinfer"))
        .args(args)
        .current_dir(cwd)
        .env_remove("NAVINFER_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn lists_worlds() {
    let dir = tempfile::tempdir().unwrap();
    let o = navinfer(&["worlds"], dir.path());
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l == "house"));
}

#[test]
fn drift_demo_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    for b in ["1", "2", "3", "4"] {
        let o = navinfer(&["drift-demo", "--branch", b, "-o", &format!("d{b}")], dir.path());
        assert_eq!(code(&o), 0, "branch {b}: {}", String::from_utf8_lossy(&o.stdout));
    }
    // Expecting the wrong outcome is a task failure.
    let o = navinfer(&["drift-demo", "--branch", "1", "--set", "drift_demo.expect=\"lost\"", "-o", "x"], dir.path());
    assert_eq!(code(&o), 1);
    // An impossible preset is a config error.
    let o = navinfer(&["drift-demo", "--branch", "7", "-o", "y"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "mode = \"explore\"\nstep_budget = 0\n").unwrap();
    assert_eq!(code(&navinfer(&["run", "-c", "bad.toml"], dir.path())), 2);
    std::fs::write(dir.path().join("typo.toml"), "mode = \"explore\"\nstep_budjet = 5\n").unwrap();
    assert_eq!(code(&navinfer(&["run", "-c", "typo.toml"], dir.path())), 2);
    assert_eq!(code(&navinfer(&["explore", "--world", "atlantis"], dir.path())), 2);
    assert_eq!(code(&navinfer(&["goal", "-o", "g"], dir.path())), 2);
    assert_eq!(code(&navinfer(&["goal", "--goal", "missing.pgm", "-o", "g"], dir.path())), 2);
}

#[test]
fn output_root_prefixes_relative_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_navinfer"))
        .args(["drift-demo", "-o", "demo"])
        .current_dir(dir.path())
        .env("NAVINFER_OUTPUT_ROOT", dir.path().join("root"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("root/demo/trace.jsonl").is_file());
}

#[test]
fn explore_is_deterministic_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "explore".to_string(),
            "--world".into(),
            "small-warehouse".into(),
            "--seed".into(),
            "9".into(),
            "--step-budget".into(),
            "15".into(),
            "--no-plots".into(),
            "--set".into(),
            "coverage_stop=1.0".into(),
            "-o".into(),
            out.into(),
        ]
    };
    for out in ["a", "b"] {
        let a = args(out);
        let o = navinfer(&a.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
        assert_eq!(code(&o), 0);
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/trace.jsonl"), read("b/trace.jsonl"));

    let o = navinfer(&["replay", "a/trace.jsonl", "-o", "r", "--no-plots"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(read("a/metrics.csv"), read("r/metrics.csv"));
    assert_eq!(read("a/summary.csv"), read("r/summary.csv"));
}

#[test]
fn goal_from_rendered_panorama() {
    let dir = tempfile::tempdir().unwrap();
    let o = navinfer(&["render", "--world", "corridor", "--spawn", "far", "-o", "far.pgm"], dir.path());
    assert_eq!(code(&o), 0);
    // Far end of a 15 m corridor in one step: not reached, task failure.
    let o = navinfer(
        &["goal", "--world", "corridor", "--goal", "far.pgm", "--step-budget", "1", "-o", "short", "--no-plots"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    let o = navinfer(
        &["goal", "--world", "corridor", "--goal", "far.pgm", "--step-budget", "60", "-o", "long", "--no-plots"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn render_at_coordinates() {
    let dir = tempfile::tempdir().unwrap();
    let o = navinfer(&["render", "--world", "obstacle-room", "--x", "-2", "--y", "1.5", "-o", "p.pgm"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p = navinfer::perception::Panorama::load_pgm(dir.path().join("p.pgm")).unwrap();
    assert_eq!(p.width(), navinfer::perception::RenderConfig::default().width);
}

#[test]
fn resume_continues_a_stopped_run() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["explore", "--world", "small-warehouse", "--seed", "2", "--step-budget", "20", "--no-plots", "--set", "coverage_stop=1.0"];
    let mut a = base.to_vec();
    a.extend(["-o", "full"]);
    assert_eq!(code(&navinfer(&a, dir.path())), 0);
    let mut b = base.to_vec();
    b.extend(["-o", "part", "--set", "stop_after=9"]);
    assert_eq!(code(&navinfer(&b, dir.path())), 0);
    let mut c = base.to_vec();
    c.extend(["-o", "rest", "--resume", "part/checkpoint.json"]);
    assert_eq!(code(&navinfer(&c, dir.path())), 0);
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("full/trace.jsonl"), read("rest/trace.jsonl"));
}
