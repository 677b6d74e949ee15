use std::path::Path;

use navinfer::harness::{self, scenarios, trace, DriftScenario, Mode, RunConfig};
use navinfer::inference::LocalisationOutcome;
use navinfer::perception::{render_panorama, RenderConfig};
use navinfer::sim::{Pose, World};
use navinfer::Error;

fn explore_config(dir: &Path, seed: u64, budget: usize) -> RunConfig {
    RunConfig {
        mode: Mode::Explore,
        world: Some("small-warehouse".into()),
        seed,
        step_budget: budget,
        coverage_stop: 1.0,
        output_dir: dir.to_path_buf(),
        snapshot_interval: 10,
        ..RunConfig::default()
    }
}

#[test]
fn explore_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let report = harness::run(&explore_config(dir.path(), 3, 25)).unwrap();
    assert!(report.success && !report.interrupted);
    for f in [
        "trace.jsonl",
        "metrics.csv",
        "summary.csv",
        "map.json",
        "model.json",
        "checkpoint.json",
        "coverage.png",
        "trajectory.png",
        "g_heatmap.png",
        "snapshots/map_00010.json",
        "snapshots/map_00020.json",
    ] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let model = navinfer::model::GenerativeModel::load(dir.path().join("model.json")).unwrap();
    model.validate().unwrap();
}

#[test]
fn same_seed_gives_identical_trace_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    harness::run(&explore_config(a.path(), 11, 20)).unwrap();
    harness::run(&explore_config(b.path(), 11, 20)).unwrap();
    let ta = std::fs::read(a.path().join("trace.jsonl")).unwrap();
    let tb = std::fs::read(b.path().join("trace.jsonl")).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn replay_reproduces_metrics_exactly() {
    let run = tempfile::tempdir().unwrap();
    harness::run(&explore_config(run.path(), 5, 20)).unwrap();
    let out = tempfile::tempdir().unwrap();
    harness::replay(&run.path().join("trace.jsonl"), out.path(), false).unwrap();
    for f in ["metrics.csv", "summary.csv"] {
        let live = std::fs::read_to_string(run.path().join(f)).unwrap();
        let again = std::fs::read_to_string(out.path().join(f)).unwrap();
        assert_eq!(live, again, "{f} differs");
    }
}

#[test]
fn truncated_trace_gives_prefix_metrics() {
    let run = tempfile::tempdir().unwrap();
    harness::run(&explore_config(run.path(), 5, 20)).unwrap();
    let text = std::fs::read_to_string(run.path().join("trace.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let keep = 8;

    // Whole lines dropped, plus half of the next one without its newline.
    let mut cut = lines[..=keep].join("\n");
    cut.push('\n');
    cut.push_str(&lines[keep + 1][..lines[keep + 1].len() / 2]);
    let (header, records) = trace::read_trace(cut.as_bytes()).unwrap();
    let (_, full) = trace::read_trace(text.as_bytes()).unwrap();
    assert_eq!(records.len(), keep);
    assert_eq!(records[..], full[..keep]);
    let prefix_csv = trace::steps_csv(&header, &records);
    let full_csv = trace::steps_csv(&header, &full);
    assert!(full_csv.starts_with(&prefix_csv));
}

#[test]
fn corrupted_line_is_reported_by_number() {
    let run = tempfile::tempdir().unwrap();
    harness::run(&explore_config(run.path(), 5, 10)).unwrap();
    let text = std::fs::read_to_string(run.path().join("trace.jsonl")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replace("\"t\":", "\"t\":\"oops\",\"x\":");
    let bad = lines.join("\n") + "\n";
    match trace::read_trace(bad.as_bytes()) {
        Err(Error::Trace { line, .. }) => assert_eq!(line, 5),
        other => panic!("expected a trace error, got {other:?}"),
    }
}

#[test]
fn schema_version_mismatch_is_rejected() {
    let text = "{\"format\":\"navinfer-trace\",\"version\":99,\"mode\":\"explore\"}\n";
    assert!(matches!(
        trace::read_trace(text.as_bytes()),
        Err(Error::Schema { found_version: 99, .. })
    ));
    let other = "{\"format\":\"something-else\",\"version\":1}\n";
    assert!(matches!(trace::read_trace(other.as_bytes()), Err(Error::Schema { .. })));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let full = tempfile::tempdir().unwrap();
    harness::run(&explore_config(full.path(), 8, 30)).unwrap();

    let part = tempfile::tempdir().unwrap();
    let mut cfg = explore_config(part.path(), 8, 30);
    cfg.stop_after = Some(13);
    let first = harness::run(&cfg).unwrap();
    assert!(first.interrupted);
    assert_eq!(first.steps, 13);

    let resumed = tempfile::tempdir().unwrap();
    let mut cfg = explore_config(resumed.path(), 8, 30);
    cfg.resume = Some(part.path().join("checkpoint.json"));
    harness::run(&cfg).unwrap();

    let map_a = navinfer::map::MapSnapshot::load(full.path().join("map.json")).unwrap();
    let map_b = navinfer::map::MapSnapshot::load(resumed.path().join("map.json")).unwrap();
    assert_eq!(map_a.nodes.len(), map_b.nodes.len());
    let edges = |m: &navinfer::map::MapSnapshot| m.edges.iter().map(|e| (e.from, e.action, e.to)).collect::<Vec<_>>();
    assert_eq!(edges(&map_a), edges(&map_b));
    assert_eq!(
        std::fs::read(full.path().join("trace.jsonl")).unwrap(),
        std::fs::read(resumed.path().join("trace.jsonl")).unwrap()
    );
}

#[test]
fn config_errors() {
    let mut cfg = RunConfig {
        step_budget: 0,
        ..RunConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.step_budget = 10;
    cfg.mode = Mode::Goal;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_toml("mode = \"fly\""), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_toml("no_such_key = 1"), Err(Error::Config(_))));
    let unknown = RunConfig {
        world: Some("atlantis".into()),
        ..RunConfig::default()
    };
    assert!(matches!(unknown.load_world(), Err(Error::UnknownWorld(_))));
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = RunConfig {
        mode: Mode::DriftDemo,
        seed: 42,
        drift_demo: DriftScenario::for_branch(3),
        ..RunConfig::default()
    };
    let text = cfg.to_toml().unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    let small = RunConfig::from_toml("mode = \"explore\"\nseed = 4\n[hyperparams]\nmcts_simulations = 12\n").unwrap();
    assert_eq!(small.seed, 4);
    assert_eq!(small.hyperparams.mcts_simulations, 12);
    assert_eq!(small.hyperparams.gamma, RunConfig::default().hyperparams.gamma);
}

#[test]
fn sub_seeds_differ_per_stream() {
    assert_ne!(harness::sub_seed(1, 1), harness::sub_seed(1, 2));
    assert_ne!(harness::sub_seed(1, 1), harness::sub_seed(2, 1));
    assert_eq!(harness::sub_seed(7, 1), harness::sub_seed(7, 1));
}

#[test]
fn drift_demo_branches() {
    use LocalisationOutcome::*;
    let expected = [TrustPrediction, TrustPerception, Lost, NovelObservationAtKnownState];
    for (b, want) in (1..=4u8).zip(expected) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            mode: Mode::DriftDemo,
            drift_demo: DriftScenario::for_branch(b),
            output_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let report = harness::run(&cfg).unwrap();
        assert!(report.success, "branch {b}: {}", report.message);
        let (_, result) = scenarios::drift_demo(&cfg).unwrap();
        assert_eq!(result.outcome(), want, "branch {b}");
        assert!(dir.path().join("drift_demo.json").is_file());
    }
}

#[test]
fn drift_demo_side_effects() {
    let cfg = |b| RunConfig {
        mode: Mode::DriftDemo,
        drift_demo: DriftScenario::for_branch(b),
        ..RunConfig::default()
    };
    // Trusting perception moves the belief to the recognised node.
    let (_, r2) = scenarios::drift_demo(&cfg(2)).unwrap();
    assert_eq!(r2.believed_state, r2.s1);
    // An unrecognised view at a confident position is added to that state.
    let (_, r4) = scenarios::drift_demo(&cfg(4)).unwrap();
    assert_eq!(r4.believed_state, r4.s0);
    assert_eq!(r4.s0_observations.len(), 2);
    // Trusting prediction keeps the belief on the expected node.
    let (_, r1) = scenarios::drift_demo(&cfg(1)).unwrap();
    assert_eq!(r1.believed_state, r1.s0);
}

#[test]
fn drift_demo_wrong_expectation_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig {
        mode: Mode::DriftDemo,
        output_dir: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    cfg.drift_demo.expect = Some(LocalisationOutcome::Lost);
    let report = harness::run(&cfg).unwrap();
    assert!(!report.success);
}

#[test]
fn obstacle_demo_emits_edge_maps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        mode: Mode::ObstacleDemo,
        output_dir: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let report = harness::run(&cfg).unwrap();
    assert!(report.success, "{}", report.message);
    for f in ["edges_before.json", "edges_after.json", "edges_before.png", "edges_after.png", "obstacle_demo.json"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
}

#[test]
fn goal_run_reaches_a_rendered_goal() {
    let dir = tempfile::tempdir().unwrap();
    let world = World::builtin("mini-warehouse").unwrap();
    let start = world.spawn("start").unwrap();
    // A free spot a little over 2 m away.
    let goal_pose = [(2.0, 0.0), (0.0, 2.0), (-2.0, 0.0), (0.0, -2.0)]
        .iter()
        .map(|(dx, dy)| Pose::new(start.x + dx, start.y + dy, 0.0))
        .find(|p| world.clearance(p.x, p.y, 1.0) > 0.4)
        .expect("free spot near start");
    let pano = render_panorama(&world, &goal_pose, &RenderConfig::default()).unwrap();
    let goal_path = dir.path().join("goal.pgm");
    pano.save_pgm(&goal_path).unwrap();
    let cfg = RunConfig {
        mode: Mode::Goal,
        world: Some("mini-warehouse".into()),
        goal_observation: Some(goal_path),
        explore_steps: 30,
        step_budget: 60,
        output_dir: dir.path().join("out"),
        ..RunConfig::default()
    };
    let report = harness::run(&cfg).unwrap();
    assert!(report.success, "{}", report.message);
    let (_, records) = trace::load_trace(dir.path().join("out/trace.jsonl")).unwrap();
    assert!(records.last().unwrap().goal_reached);
}

#[test]
fn goal_panorama_size_must_match_render() {
    let dir = tempfile::tempdir().unwrap();
    let goal_path = dir.path().join("goal.pgm");
    navinfer::perception::Panorama::constant(7, 3, 0.5).save_pgm(&goal_path).unwrap();
    let cfg = RunConfig {
        mode: Mode::Goal,
        goal_observation: Some(goal_path),
        output_dir: dir.path().join("out"),
        ..RunConfig::default()
    };
    assert!(matches!(harness::run(&cfg), Err(Error::Config(_))));
}
