//! Two scripted scenarios: localisation after odometry drift, and map
//! adaptation when an obstacle is moved.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::LocalisationOutcome;
use crate::map::{Edge, MapSnapshot};

use super::{plot, Phase, RunConfig, RunReport, Session};

/// Drift scenario. The agent starts at `s0`, is told to move 1 m east but
/// covers `outbound_gain` meters while its odometry reports 1 m, so the node
/// it reaches (`s1`) sits where the odometry says. It then drives back
/// toward `s0` with `return_gain`, and localises with the motion noise,
/// position evidence width and lighting given for the return.
///
/// `branch` picks a preset for the remaining fields:
///
/// | branch | return gain | motion sigma | position sigma | brightness | expected |
/// |---|---|---|---|---|---|
/// | 1 | 1.0 | 0.0 | 0.1 | 1.0 | trust prediction |
/// | 2 | 0.1 | 1.5 | 3.0 | 1.0 | trust perception |
/// | 3 | 0.1 | 1.5 | 3.0 | 0.4 | lost |
/// | 4 | 1.0 | 0.0 | 0.1 | 0.4 | novel observation at a known state |
///
/// A return gain of 0.1 is wheel slip: the wheels turn for 1 m, the base
/// moves 0.1 m, so the robot still sees what `s1` looked like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftScenario {
    pub branch: u8,
    pub outbound_gain: Option<f64>,
    pub return_gain: Option<f64>,
    /// Motion noise assumed for the return, meters.
    pub return_motion_sigma: Option<f64>,
    /// Position evidence width at the return, meters.
    pub return_sigma: Option<f64>,
    /// Render brightness at the return.
    pub return_brightness: Option<f64>,
    pub expect: Option<LocalisationOutcome>,
}

impl Default for DriftScenario {
    fn default() -> Self {
        Self {
            branch: 1,
            outbound_gain: None,
            return_gain: None,
            return_motion_sigma: None,
            return_sigma: None,
            return_brightness: None,
            expect: None,
        }
    }
}

/// Resolved drift scenario settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSettings {
    pub outbound_gain: f64,
    pub return_gain: f64,
    pub return_motion_sigma: f64,
    pub return_sigma: f64,
    pub return_brightness: f64,
    pub expect: LocalisationOutcome,
}

impl DriftScenario {
    pub fn for_branch(branch: u8) -> Self {
        Self {
            branch,
            ..Self::default()
        }
    }

    pub fn settings(&self) -> Result<DriftSettings> {
        use LocalisationOutcome::*;
        let (gain, motion, sigma, brightness, expect) = match self.branch {
            1 => (1.0, 0.0, 0.1, 1.0, TrustPrediction),
            2 => (0.1, 1.5, 3.0, 1.0, TrustPerception),
            3 => (0.1, 1.5, 3.0, 0.4, Lost),
            4 => (1.0, 0.0, 0.1, 0.4, NovelObservationAtKnownState),
            b => return Err(Error::Config(format!("drift_demo branch must be 1..=4, got {b}"))),
        };
        let s = DriftSettings {
            outbound_gain: self.outbound_gain.unwrap_or(2.0),
            return_gain: self.return_gain.unwrap_or(gain),
            return_motion_sigma: self.return_motion_sigma.unwrap_or(motion),
            return_sigma: self.return_sigma.unwrap_or(sigma),
            return_brightness: self.return_brightness.unwrap_or(brightness),
            expect: self.expect.unwrap_or(expect),
        };
        if !(s.outbound_gain > 0.0 && s.return_gain > 0.0 && s.return_sigma > 0.0 && s.return_brightness > 0.0)
            || !(s.return_motion_sigma >= 0.0)
        {
            return Err(Error::Config("drift_demo gains, sigmas and brightness must be > 0".into()));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDemoResult {
    pub settings: DriftSettings,
    pub s0: usize,
    pub s1: usize,
    /// Outcomes of the three localisations: start, after the outbound move,
    /// after the return.
    pub outcomes: Vec<LocalisationOutcome>,
    pub believed_state: usize,
    /// Observations held by `s0` after the return.
    pub s0_observations: Vec<usize>,
    pub passed: bool,
}

impl DriftDemoResult {
    pub fn outcome(&self) -> LocalisationOutcome {
        *self.outcomes.last().expect("three localisations")
    }
}

/// Runs the drift scenario and returns its session and result.
pub fn drift_demo(config: &RunConfig) -> Result<(Session, DriftDemoResult)> {
    let set = config.drift_demo.settings()?;
    let mut s = Session::new(config.clone())?;
    let actions = s.agent.hp.actions();
    let east = actions.nearest_heading(0.0);
    let west = actions.opposite(east);

    s.phase = Phase::Outbound;
    let (_, r0, mut rec) = s.observe()?;
    let s0 = r0.believed_state;
    let mut outcomes = vec![r0.outcome];
    let s1 = s
        .agent
        .model
        .edge_target(s0, east)
        .ok_or_else(|| Error::Config("drift_demo needs free space 1 m east of the start".into()))?;
    s.drift.model.translation_gain = set.outbound_gain;
    s.act_with(east, r0, &mut rec)?;
    s.records.push(rec);
    s.t += 1;

    let (_, r1, mut rec) = s.observe()?;
    outcomes.push(r1.outcome);
    if s.agent.believed_state() != s1 || s.agent.model.edge_target(s1, west) != Some(s0) {
        return Err(Error::InvariantViolation(
            "drift_demo: outbound move did not land on the expected node".into(),
        ));
    }
    s.drift.model.translation_gain = set.return_gain;
    s.act_with(west, r1, &mut rec)?;
    s.records.push(rec);
    s.t += 1;

    s.phase = Phase::Return;
    s.agent.cfg.motion_sigma = set.return_motion_sigma;
    s.agent.cfg.position_sigma = set.return_sigma;
    s.agent.cfg.render.brightness = set.return_brightness;
    let (_, r2, rec) = s.observe()?;
    outcomes.push(r2.outcome);
    s.records.push(rec);
    s.t += 1;

    let result = DriftDemoResult {
        settings: set,
        s0,
        s1,
        passed: r2.outcome == set.expect,
        outcomes,
        believed_state: r2.believed_state,
        s0_observations: s.agent.map.node(s0)?.observation_ids.iter().copied().collect(),
    };
    Ok((s, result))
}

pub(super) fn run_drift_demo(config: &RunConfig) -> Result<RunReport> {
    let (s, result) = drift_demo(config)?;
    s.write_artifacts()?;
    std::fs::write(
        config.output_dir.join("drift_demo.json"),
        serde_json::to_string_pretty(&result)?,
    )?;
    let name = |o: LocalisationOutcome| serde_json::to_value(o).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    Ok(RunReport {
        mode: config.mode,
        success: result.passed,
        interrupted: false,
        steps: s.records.len(),
        message: format!(
            "branch {}: outcome {}, expected {}",
            config.drift_demo.branch,
            name(result.outcome()),
            name(result.settings.expect)
        ),
        output_dir: config.output_dir.clone(),
    })
}

/// Moved-obstacle scenario: explore, move an axis-aligned box, keep going.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleScenario {
    /// Steps before the box moves.
    pub warmup_steps: usize,
    /// Steps after the box moves.
    pub steps_after: usize,
    /// `[x0, y0, x1, y1]` of the box before and after the move.
    pub box_from: [f64; 4],
    pub box_to: [f64; 4],
    /// Shift the moved box so its centre sits on the map node nearest to
    /// the centre of `box_to`.
    pub snap_to_node: bool,
}

impl Default for ObstacleScenario {
    fn default() -> Self {
        Self {
            warmup_steps: 40,
            steps_after: 20,
            box_from: [-1.25, -0.25, -0.75, 0.25],
            box_to: [-0.25, -1.25, 0.25, -0.75],
            snap_to_node: true,
        }
    }
}

/// Two routes between neighbours of a blocked node: the best one avoiding
/// it, and the two-edge hop through it, before and after the move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detour {
    pub from: usize,
    pub to: usize,
    pub before: f64,
    pub after: f64,
    pub through_before: f64,
    pub through_after: f64,
}

impl Detour {
    /// Share of the detour among the two routes.
    pub fn share(detour: f64, through: f64) -> f64 {
        if detour + through > 0.0 { detour / (detour + through) } else { 0.0 }
    }

    pub fn gained(&self) -> bool {
        Self::share(self.after, self.through_after) > Self::share(self.before, self.through_before)
    }
}

/// Best `from -> via -> to` product over single edges.
fn hop_probability(map: &MapSnapshot, from: usize, via: usize, to: usize) -> f64 {
    let best = |a: usize, b: usize| {
        map.edges
            .iter()
            .filter(|e| e.from == a && e.to == b)
            .map(|e| e.probability)
            .fold(0.0, f64::max)
    };
    best(from, via) * best(via, to)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleDemoResult {
    /// Where the box was put, `[x0, y0, x1, y1]`.
    pub box_placed: [f64; 4],
    /// Nodes the box now covers.
    pub blocked: Vec<usize>,
    /// Listed edges into blocked nodes just before the move.
    pub incoming_before: Vec<Edge>,
    /// Steps after the move until none of those edges is listed.
    pub delisted_after: Option<usize>,
    pub detour: Option<Detour>,
    pub before: MapSnapshot,
    pub after: MapSnapshot,
    pub passed: bool,
}

/// Highest product of edge probabilities over paths from `from` to `to`
/// that avoid `avoid`; 0 when there is none.
pub fn route_probability(map: &MapSnapshot, from: usize, to: usize, avoid: &[usize]) -> f64 {
    let n = map.nodes.len();
    let mut best = vec![0.0f64; n];
    if from >= n || to >= n {
        return 0.0;
    }
    best[from] = 1.0;
    // Probabilities are at most 1, so n rounds of relaxation settle.
    for _ in 0..n {
        let mut changed = false;
        for e in &map.edges {
            if avoid.contains(&e.from) || avoid.contains(&e.to) || e.from >= n || e.to >= n {
                continue;
            }
            let v = best[e.from] * e.probability;
            if v > best[e.to] {
                best[e.to] = v;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    best[to]
}

fn neighbours(edges: &[Edge], blocked: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = edges
        .iter()
        .filter(|e| blocked.contains(&e.to) && !blocked.contains(&e.from))
        .map(|e| e.from)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Runs the moved-obstacle scenario.
pub fn obstacle_demo(config: &RunConfig) -> Result<(Session, ObstacleDemoResult)> {
    let sc = config.obstacle_demo.clone();
    if sc.warmup_steps == 0 || sc.steps_after == 0 {
        return Err(Error::Config("obstacle_demo steps must be > 0".into()));
    }
    let mut s = Session::new(config.clone())?;
    s.run_phase(Phase::BeforeMove, sc.warmup_steps - 1, false)?;
    let before = s.agent.map.snapshot(&s.agent.model);

    let [a0, b0, a1, b1] = sc.box_from;
    s.world.fill_rect(a0, b0, a1, b1, false)?;
    let mut placed = sc.box_to;
    if sc.snap_to_node {
        let c = (0.5 * (placed[0] + placed[2]), 0.5 * (placed[1] + placed[3]));
        let nearest = s
            .agent
            .map
            .nodes()
            .iter()
            .map(|n| n.position)
            .min_by(|a, b| (a.0 - c.0).hypot(a.1 - c.1).total_cmp(&(b.0 - c.0).hypot(b.1 - c.1)));
        if let Some(p) = nearest {
            let (dx, dy) = (p.0 - c.0, p.1 - c.1);
            placed = [placed[0] + dx, placed[1] + dy, placed[2] + dx, placed[3] + dy];
        }
    }
    let [a0, b0, a1, b1] = placed;
    s.world.fill_rect(a0, b0, a1, b1, true)?;
    let r = s.agent.hp.agent_radius;
    if s.world.clearance(s.pose.x, s.pose.y, r) < r {
        return Err(Error::Config("obstacle_demo: the moved box lands on the robot".into()));
    }
    let blocked: Vec<usize> = s
        .agent
        .map
        .nodes()
        .iter()
        .filter(|n| s.world.clearance(n.position.0, n.position.1, r) < r)
        .map(|n| n.state_id)
        .collect();
    let incoming_before: Vec<Edge> = before.edges.iter().filter(|e| blocked.contains(&e.to)).copied().collect();

    let mut delisted_after = None;
    s.phase = Phase::AfterMove;
    for k in 1..=sc.steps_after {
        let last = k == sc.steps_after;
        s.step(|_| last)?;
        let listed = incoming_before
            .iter()
            .any(|e| s.agent.model.is_edge(e.from, e.action, e.to));
        if delisted_after.is_none() && !listed && !incoming_before.is_empty() {
            delisted_after = Some(k);
        }
    }
    let after = s.agent.map.snapshot(&s.agent.model);

    // The pair of neighbours best linked through the blocked node.
    let around = neighbours(&before.edges, &blocked);
    let mut detour: Option<Detour> = None;
    if let Some(&x) = blocked.first() {
        for &u in &around {
            for &v in &around {
                if u == v {
                    continue;
                }
                let d = Detour {
                    from: u,
                    to: v,
                    before: route_probability(&before, u, v, &blocked),
                    after: route_probability(&after, u, v, &blocked),
                    through_before: hop_probability(&before, u, x, v),
                    through_after: hop_probability(&after, u, x, v),
                };
                if detour.is_none_or(|b| d.through_before > b.through_before) {
                    detour = Some(d);
                }
            }
        }
    }
    let passed = !blocked.is_empty()
        && delisted_after.is_some_and(|k| k <= sc.steps_after)
        && detour.is_some_and(|d| d.gained());
    Ok((
        s,
        ObstacleDemoResult {
            box_placed: placed,
            blocked,
            incoming_before,
            delisted_after,
            detour,
            before,
            after,
            passed,
        },
    ))
}

pub(super) fn run_obstacle_demo(config: &RunConfig) -> Result<RunReport> {
    let (s, result) = obstacle_demo(config)?;
    s.write_artifacts()?;
    let dir = &config.output_dir;
    result.before.save(dir.join("edges_before.json"))?;
    result.after.save(dir.join("edges_after.json"))?;
    std::fs::write(dir.join("obstacle_demo.json"), serde_json::to_string_pretty(&result)?)?;
    if s.config.plots {
        let mut old = s.world.clone();
        let [a0, b0, a1, b1] = result.box_placed;
        old.fill_rect(a0, b0, a1, b1, false)?;
        let [a0, b0, a1, b1] = config.obstacle_demo.box_from;
        old.fill_rect(a0, b0, a1, b1, true)?;
        let hl = result.blocked.first().copied();
        plot::edge_map(&old, &result.before, hl, &dir.join("edges_before.png"))?;
        plot::edge_map(&s.world, &result.after, hl, &dir.join("edges_after.png"))?;
    }
    let message = match (&result.blocked[..], result.delisted_after, result.detour) {
        ([], _, _) => "the moved box covers no map node".to_string(),
        (b, Some(k), Some(d)) => format!(
            "node(s) {b:?} delisted after {k} steps; detour {}->{} share {:.4} -> {:.4}",
            d.from,
            d.to,
            Detour::share(d.before, d.through_before),
            Detour::share(d.after, d.through_after)
        ),
        (b, None, _) => format!("edges into {b:?} still listed after {} steps", config.obstacle_demo.steps_after),
        (b, Some(k), None) => format!("node(s) {b:?} delisted after {k} steps; no detour found"),
    };
    Ok(RunReport {
        mode: config.mode,
        success: result.passed,
        interrupted: false,
        steps: s.records.len(),
        message,
        output_dir: config.output_dir.clone(),
    })
}
