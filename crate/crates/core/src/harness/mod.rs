//! Runnable experiments driven by one TOML file: exploration, goal reaching,
//! the drift and moved-obstacle scenarios, and trace replay.
//!
//! Every run writes into its output directory:
//!
//! | file | content |
//! |---|---|
//! | `trace.jsonl` | versioned step log, see [`trace`] |
//! | `metrics.csv`, `summary.csv` | derived from the trace only |
//! | `map.json`, `model.json` | final topological map and generative model |
//! | `checkpoint.json` | full run state, accepted by `resume` |
//! | `snapshots/map_NNNNN.json` | map every `snapshot_interval` steps |
//! | `coverage.png`, `trajectory.png`, `g_heatmap.png` | plots |

pub mod plot;
pub mod scenarios;
pub mod trace;

use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, AgentConfig, Percept, StepReport};
use crate::categorical::Categorical;
use crate::error::{Error, Result};
use crate::eval::{self, Graph, OccupancyEstimate, StepRecord};
use crate::model::HyperParams;
use crate::perception::Panorama;
use crate::planning::{self, EfeCache};
use crate::sim::{Drift, DriftModel, Pose, World};

pub use scenarios::{DriftScenario, ObstacleScenario};
pub use trace::{Phase, TraceHeader, TraceRecord};

pub const CHECKPOINT_FORMAT: &str = "navinfer-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Random stream ids fanned out from the run seed.
const DRIFT_STREAM: u64 = 1;
const PLANNER_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Explore,
    Goal,
    DriftDemo,
    ObstacleDemo,
    Replay,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Explore => "explore",
            Mode::Goal => "goal",
            Mode::DriftDemo => "drift_demo",
            Mode::ObstacleDemo => "obstacle_demo",
            Mode::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Built-in world name, or path to a world text file. Defaults per
    /// mode: `mini-warehouse`, or the scenario's own room.
    pub world: Option<String>,
    /// Spawn point name in the world.
    pub start: String,
    pub seed: u64,
    pub step_budget: usize,
    /// Goal mode: exploration steps taken before the goal is given.
    pub explore_steps: usize,
    /// Exploration stops once this fraction of the free area is seen.
    pub coverage_stop: f64,
    /// Goal panorama (binary PGM); required in goal mode.
    pub goal_observation: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Map snapshot and checkpoint period in steps; 0 disables.
    pub snapshot_interval: usize,
    pub plots: bool,
    /// Replay mode: the trace to recompute metrics from.
    pub trace: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    pub resume: Option<PathBuf>,
    /// Write a checkpoint and stop once this many steps are logged.
    pub stop_after: Option<usize>,
    pub hyperparams: HyperParams,
    pub agent: AgentConfig,
    /// Drift of the simulated base. Its `seed` is replaced by one derived
    /// from the run seed.
    pub drift: DriftModel,
    pub drift_demo: DriftScenario,
    pub obstacle_demo: ObstacleScenario,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Explore,
            world: None,
            start: "start".into(),
            seed: 0,
            step_budget: 200,
            explore_steps: 0,
            coverage_stop: 0.95,
            goal_observation: None,
            output_dir: PathBuf::from("runs/latest"),
            snapshot_interval: 25,
            plots: true,
            trace: None,
            resume: None,
            stop_after: None,
            hyperparams: HyperParams::default(),
            agent: AgentConfig::default(),
            drift: DriftModel::default(),
            drift_demo: DriftScenario::default(),
            obstacle_demo: ObstacleScenario::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_budget == 0 {
            return Err(Error::Config("step_budget must be > 0".into()));
        }
        if !(self.coverage_stop > 0.0 && self.coverage_stop <= 1.0) {
            return Err(Error::Config("coverage_stop must lie in (0, 1]".into()));
        }
        if self.mode == Mode::Goal && self.goal_observation.is_none() {
            return Err(Error::Config("goal mode requires goal_observation".into()));
        }
        if self.resume.is_some() && !matches!(self.mode, Mode::Explore | Mode::Goal) {
            return Err(Error::Config("resume is supported in explore and goal modes".into()));
        }
        if self.mode == Mode::Replay && self.trace.is_none() {
            return Err(Error::Config("replay mode requires trace".into()));
        }
        self.hyperparams.validate()?;
        self.drift.validate()?;
        Ok(())
    }

    pub fn world_name(&self) -> &str {
        match (&self.world, self.mode) {
            (Some(w), _) => w,
            (None, Mode::DriftDemo) => "drift-room",
            (None, Mode::ObstacleDemo) => "obstacle-room",
            (None, _) => "mini-warehouse",
        }
    }

    /// Loads the world: an existing file path first, else a built-in name.
    pub fn load_world(&self) -> Result<World> {
        let name = self.world_name();
        let p = Path::new(name);
        if p.is_file() {
            World::load(p)
        } else {
            World::builtin(name)
        }
    }

    pub fn start_pose(&self, world: &World) -> Result<Pose> {
        world
            .spawn(&self.start)
            .ok_or_else(|| Error::Config(format!("world has no spawn named {}", self.start)))
    }

    fn drift(&self) -> Result<Drift> {
        let mut model = self.drift.clone();
        model.seed = sub_seed(self.seed, DRIFT_STREAM);
        Drift::new(model)
    }
}

/// Independent seed for one subsystem, so that adding randomness to one
/// does not shift the stream of another.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Outcome of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub mode: Mode,
    /// Whether the task succeeded: the goal was reached, the scenario
    /// matched its expectation. Exploration and replay always succeed.
    pub success: bool,
    /// Stopped early by `stop_after`.
    pub interrupted: bool,
    pub steps: usize,
    pub message: String,
    pub output_dir: PathBuf,
}

/// Full state of a step-driven run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub t: usize,
    pub phase: Phase,
    pub agent: Agent,
    pub drift: Drift,
    pub pose: Pose,
    pub world: World,
    pub occupancy: OccupancyEstimate,
    pub traveled: f64,
    pub records: Vec<TraceRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let found = v.get("format").and_then(|f| f.as_str()).unwrap_or("").to_string();
        let version = v.get("version").and_then(|f| f.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_FORMAT || version != CHECKPOINT_VERSION {
            return Err(Error::Schema {
                expected: CHECKPOINT_FORMAT,
                expected_version: CHECKPOINT_VERSION,
                found,
                found_version: version,
            });
        }
        Ok(serde_json::from_value(v)?)
    }
}

/// A step-driven run in progress.
pub struct Session {
    pub config: RunConfig,
    pub world: World,
    pub agent: Agent,
    pub drift: Drift,
    pub pose: Pose,
    pub occupancy: OccupancyEstimate,
    pub traveled: f64,
    pub t: usize,
    pub phase: Phase,
    pub records: Vec<TraceRecord>,
    free_area: f64,
}

/// Why a phase loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseEnd {
    Budget,
    Coverage,
    Goal,
    Interrupted,
}

impl Session {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let world = config.load_world()?;
        let pose = config.start_pose(&world)?;
        let agent = Agent::new(
            config.hyperparams.clone(),
            config.agent.clone(),
            (pose.x, pose.y),
            sub_seed(config.seed, PLANNER_STREAM),
        )?;
        let drift = config.drift()?;
        let occupancy = OccupancyEstimate::for_world(&world);
        let free_area = world.free_area();
        Ok(Self {
            config,
            world,
            agent,
            drift,
            pose,
            occupancy,
            traveled: 0.0,
            t: 0,
            phase: Phase::Explore,
            records: Vec::new(),
            free_area,
        })
    }

    /// Restores a session; run-control fields come from `config`.
    pub fn resume(cp: Checkpoint, config: &RunConfig) -> Result<Self> {
        let mut cfg = cp.config;
        cfg.output_dir = config.output_dir.clone();
        cfg.stop_after = config.stop_after;
        cfg.resume = None;
        cfg.plots = config.plots;
        let free_area = cp.world.free_area();
        Ok(Self {
            config: cfg,
            world: cp.world,
            agent: cp.agent,
            drift: cp.drift,
            pose: cp.pose,
            occupancy: cp.occupancy,
            traveled: cp.traveled,
            t: cp.t,
            phase: cp.phase,
            records: cp.records,
            free_area,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            t: self.t,
            phase: self.phase,
            agent: self.agent.clone(),
            drift: self.drift.clone(),
            pose: self.pose,
            world: self.world.clone(),
            occupancy: self.occupancy.clone(),
            traveled: self.traveled,
            records: self.records.clone(),
        }
    }

    pub fn free_area(&self) -> f64 {
        self.free_area
    }

    pub fn header(&self) -> TraceHeader {
        TraceHeader::new(
            self.config.mode.name(),
            self.config.world_name(),
            self.config.seed,
            self.free_area,
            self.config.step_budget,
        )
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    /// Map distance from the believed state to the nearest node holding a
    /// goal observation.
    pub fn oracle_distance(&self) -> Option<f64> {
        let goals: Vec<usize> = self
            .agent
            .map
            .nodes()
            .iter()
            .filter(|n| n.observation_ids.iter().any(|o| self.agent.goal_observations().contains(o)))
            .map(|n| n.state_id)
            .collect();
        if goals.is_empty() {
            return None;
        }
        let g = Graph::from_map(&self.agent.map, &self.agent.model);
        eval::astar_shortest(&g, self.agent.believed_state(), &goals).ok()
    }

    /// Senses and localises at the current pose; returns what is needed to
    /// finish the step.
    fn observe(&mut self) -> Result<(Percept, StepReport, TraceRecord)> {
        let hp = &self.agent.hp;
        let percept = Percept::sense(&self.world, &self.pose, hp, &self.agent.cfg.render)?;
        self.occupancy
            .integrate_scan(&self.world, &self.pose, &percept.ranges, hp.lidar_range);
        let reported = self.agent.estimate;
        let report = self.agent.perceive(&percept)?;
        let believed = self.agent.believed_position();
        let oracle = if self.phase == Phase::Goal { self.oracle_distance() } else { None };
        let record = TraceRecord {
            phase: self.phase,
            step: StepRecord {
                t: self.t,
                true_pose: self.pose,
                reported_pose: Pose::new(reported.0, reported.1, 0.0),
                believed_pose: Pose::new(believed.0, believed.1, 0.0),
                action: None,
                covered_area: self.occupancy.known_free_area(),
                traveled: self.traveled,
            },
            believed_state: report.believed_state,
            outcome: report.outcome,
            confident: report.confident,
            target: None,
            collided: false,
            n_states: self.agent.model.n_states(),
            n_edges: self.agent.map.edges(&self.agent.model).len(),
            goal_reached: report.goal_reached,
            oracle_distance: oracle,
        };
        Ok((percept, report, record))
    }

    /// Plans and moves, completing `record`.
    fn act(&mut self, percept: &Percept, report: StepReport, record: &mut TraceRecord) -> Result<()> {
        let plan = self.agent.plan(percept)?;
        self.act_with(plan.action, report, record)
    }

    fn act_with(&mut self, action: usize, mut report: StepReport, record: &mut TraceRecord) -> Result<()> {
        self.agent.act(&self.world, &self.pose, action, &mut self.drift, &mut report)?;
        record.step.action = Some(action);
        record.target = report.target;
        record.collided = report.collided;
        self.pose = report.true_pose;
        self.traveled += report.traveled;
        Ok(())
    }

    /// One full step; `stop` decides from the fresh record whether to skip
    /// the move and end the phase.
    pub fn step(&mut self, stop: impl Fn(&TraceRecord) -> bool) -> Result<(TraceRecord, bool)> {
        let (percept, report, mut record) = self.observe()?;
        let done = stop(&record);
        if !done {
            self.act(&percept, report, &mut record)?;
        }
        self.records.push(record.clone());
        self.t += 1;
        Ok((record, done))
    }

    fn periodic(&mut self) -> Result<bool> {
        let k = self.config.snapshot_interval;
        if k > 0 && self.t > 0 && self.t % k == 0 {
            let dir = self.out("snapshots");
            std::fs::create_dir_all(&dir)?;
            self.agent
                .map
                .snapshot(&self.agent.model)
                .save(dir.join(format!("map_{:05}.json", self.t)))?;
            self.checkpoint().save(self.out("checkpoint.json"))?;
        }
        if self.config.stop_after.is_some_and(|n| self.records.len() >= n) {
            self.checkpoint().save(self.out("checkpoint.json"))?;
            self.write_trace()?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Runs `phase` until step index `end` (inclusive), full coverage (if
    /// `coverage`) or the goal (in the goal phase).
    pub fn run_phase(&mut self, phase: Phase, end: usize, coverage: bool) -> Result<PhaseEnd> {
        self.phase = phase;
        let target = self.config.coverage_stop * self.free_area;
        while self.t <= end {
            if self.periodic()? {
                return Ok(PhaseEnd::Interrupted);
            }
            let t = self.t;
            let (rec, done) = self.step(|r| {
                t == end || (coverage && r.step.covered_area >= target) || (phase == Phase::Goal && r.goal_reached)
            })?;
            if done {
                return Ok(if phase == Phase::Goal && rec.goal_reached {
                    PhaseEnd::Goal
                } else if coverage && rec.step.covered_area >= target {
                    PhaseEnd::Coverage
                } else {
                    PhaseEnd::Budget
                });
            }
        }
        Ok(PhaseEnd::Budget)
    }

    pub fn write_trace(&self) -> Result<()> {
        std::fs::create_dir_all(&self.config.output_dir)?;
        trace::save_trace(self.out("trace.jsonl"), &self.header(), &self.records)
    }

    /// One-step `G` of sitting at each node under the current preferences.
    pub fn node_efe(&self) -> Vec<f64> {
        let model = &self.agent.model;
        let prefs = self.agent.preferences();
        let cache = EfeCache::new(model, &prefs);
        (0..model.n_states())
            .map(|s| {
                let q = Categorical::delta(model.n_states(), s);
                planning::efe_predicted(model, &cache, q.probs(), &prefs, 0.0).total
            })
            .collect()
    }

    /// Trace, metrics, final map and model, checkpoint and plots.
    pub fn write_artifacts(&self) -> Result<()> {
        self.write_trace()?;
        let header = self.header();
        write_metrics(&self.config.output_dir, &header, &self.records)?;
        let snap = self.agent.map.snapshot(&self.agent.model);
        snap.save(self.out("map.json"))?;
        self.agent.model.save(self.out("model.json"))?;
        self.checkpoint().save(self.out("checkpoint.json"))?;
        if self.config.plots {
            let truth: Vec<(f64, f64)> = self.records.iter().map(|r| (r.step.true_pose.x, r.step.true_pose.y)).collect();
            let believed: Vec<(f64, f64)> = self
                .records
                .iter()
                .map(|r| (r.step.believed_pose.x, r.step.believed_pose.y))
                .collect();
            plot::trajectory(&self.world, &snap, &truth, &believed, &self.out("trajectory.png"))?;
            plot::node_heatmap(&self.world, &snap, &self.node_efe(), &self.out("g_heatmap.png"))?;
            let curve = trace::run_trace(&self.records).coverage_curve(self.free_area);
            plot::coverage_curve(&curve, &self.out("coverage.png"))?;
        }
        Ok(())
    }
}

/// Writes `metrics.csv` and `summary.csv`.
pub fn write_metrics(dir: &Path, header: &TraceHeader, records: &[TraceRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("metrics.csv"), trace::steps_csv(header, records))?;
    std::fs::write(dir.join("summary.csv"), trace::summary_csv(header, records))?;
    Ok(())
}

fn start_session(config: &RunConfig) -> Result<Session> {
    std::fs::create_dir_all(&config.output_dir)?;
    match &config.resume {
        Some(path) => {
            config.validate()?;
            Session::resume(Checkpoint::load(path)?, config)
        }
        None => Session::new(config.clone()),
    }
}

fn interrupted(s: &Session) -> RunReport {
    RunReport {
        mode: s.config.mode,
        success: true,
        interrupted: true,
        steps: s.records.len(),
        message: format!("stopped after {} steps; checkpoint written", s.records.len()),
        output_dir: s.config.output_dir.clone(),
    }
}

/// Runs the configured experiment and writes its artifacts.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    match config.mode {
        Mode::Explore => run_explore(config),
        Mode::Goal => run_goal(config),
        Mode::DriftDemo => scenarios::run_drift_demo(config),
        Mode::ObstacleDemo => scenarios::run_obstacle_demo(config),
        Mode::Replay => {
            let path = config.trace.as_ref().expect("validated");
            replay(path, &config.output_dir, config.plots)
        }
    }
}

fn run_explore(config: &RunConfig) -> Result<RunReport> {
    let mut s = start_session(config)?;
    let end = s.config.step_budget;
    let how = s.run_phase(Phase::Explore, end, true)?;
    if how == PhaseEnd::Interrupted {
        return Ok(interrupted(&s));
    }
    s.write_artifacts()?;
    let last = s.records.last().expect("at least one step");
    Ok(RunReport {
        mode: Mode::Explore,
        success: true,
        interrupted: false,
        steps: s.records.len(),
        message: format!(
            "explored {:.1}% of the free area in {} steps, {} nodes",
            100.0 * last.step.covered_area / s.free_area(),
            s.records.len(),
            last.n_states
        ),
        output_dir: s.config.output_dir.clone(),
    })
}

/// Reads the goal panorama named in the config.
pub fn load_goal(config: &RunConfig) -> Result<Panorama> {
    let path = config
        .goal_observation
        .as_ref()
        .ok_or_else(|| Error::Config("goal mode requires goal_observation".into()))?;
    let goal = Panorama::load_pgm(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let r = &config.agent.render;
    if goal.width() != r.width || goal.height() != r.height {
        return Err(Error::Config(format!(
            "goal panorama is {}x{}, render size is {}x{}",
            goal.width(),
            goal.height(),
            r.width,
            r.height
        )));
    }
    Ok(goal)
}

fn run_goal(config: &RunConfig) -> Result<RunReport> {
    let goal = load_goal(config)?;
    let mut s = start_session(config)?;
    let explore_end = s.config.explore_steps;
    if s.phase == Phase::Explore && explore_end > 0 {
        if s.run_phase(Phase::Explore, explore_end - 1, true)? == PhaseEnd::Interrupted {
            return Ok(interrupted(&s));
        }
    }
    if s.phase != Phase::Goal {
        s.agent.set_goal(Some(goal));
        s.phase = Phase::Goal;
    }
    let end = s.records.iter().filter(|r| r.phase != Phase::Goal).count() + s.config.step_budget - 1;
    let how = s.run_phase(Phase::Goal, end, false)?;
    if how == PhaseEnd::Interrupted {
        return Ok(interrupted(&s));
    }
    s.write_artifacts()?;
    let reached = how == PhaseEnd::Goal;
    let ratio = trace::goal_ratio(&s.records);
    let message = match (reached, ratio) {
        (true, Some((oracle, traveled, r))) => {
            format!("goal reached: traveled {traveled:.2} m, map shortest {oracle:.2} m, ratio {r:.3}")
        }
        (true, None) => "goal reached".to_string(),
        (false, _) => format!("goal not reached within {} steps", s.config.step_budget),
    };
    Ok(RunReport {
        mode: Mode::Goal,
        success: reached,
        interrupted: false,
        steps: s.records.len(),
        message,
        output_dir: s.config.output_dir.clone(),
    })
}

/// Recomputes metrics from a trace file into `output_dir`.
pub fn replay(trace_path: &Path, output_dir: &Path, plots: bool) -> Result<RunReport> {
    let (header, records) = trace::load_trace(trace_path)?;
    write_metrics(output_dir, &header, &records)?;
    if plots && header.free_area > 0.0 {
        let curve = trace::run_trace(&records).coverage_curve(header.free_area);
        plot::coverage_curve(&curve, &output_dir.join("coverage.png"))?;
    }
    Ok(RunReport {
        mode: Mode::Replay,
        success: true,
        interrupted: false,
        steps: records.len(),
        message: format!("replayed {} steps of a {} run", records.len(), header.mode),
        output_dir: output_dir.to_path_buf(),
    })
}
