//! The closed perception, inference, learning and planning loop of one agent
//! moving through a simulated world.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::error::Result;
use crate::inference::{self, BeliefState, LocalisationOutcome, ObservationEvidence};
use crate::learning::{self, TransitionOutcome};
use crate::map::{self, TopoMap};
use crate::model::{GenerativeModel, HyperParams, Preferences};
use crate::perception::{self, EvidenceMode, MatchResult, ObservationStore, Panorama, RenderConfig};
use crate::planning::{self, PlanContext, PlanResult};
use crate::sim::{self, Drift, Pose, World};

/// Settings of the agent beyond the model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub render: RenderConfig,
    pub evidence_mode: EvidenceMode,
    /// Standard deviation of the odometry position evidence, metres.
    pub position_sigma: f64,
    /// Width of the motion noise spread over the predicted position, meters;
    /// 0 trusts the learned position transitions as they are.
    pub motion_sigma: f64,
    /// Weight on pragmatic terms while a goal is set.
    pub goal_pragmatic_weight: f64,
    /// Existing nodes closer than this factor times the influence radius are
    /// linked when the straight path to them is clear.
    pub link_factor: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            evidence_mode: EvidenceMode::Soft,
            position_sigma: 0.25,
            motion_sigma: 0.0,
            goal_pragmatic_weight: 10.0,
            link_factor: 1.2,
        }
    }
}

/// What the agent senses at one pose, expressed relative to the robot.
#[derive(Debug, Clone, PartialEq)]
pub struct Percept {
    pub ranges: Vec<f64>,
    /// Lidar hit points relative to the robot centre.
    pub points: Vec<(f64, f64)>,
    pub panorama: Panorama,
}

impl Percept {
    pub fn sense(world: &World, pose: &Pose, hp: &HyperParams, render: &RenderConfig) -> Result<Self> {
        let ranges = sim::lidar_scan(world, pose, hp.lidar_range, hp.lidar_beams);
        let points = sim::scan_points(pose, &ranges, hp.lidar_range)
            .into_iter()
            .map(|(x, y)| (x - pose.x, y - pose.y))
            .collect();
        let panorama = perception::render_panorama(world, pose, render)?;
        Ok(Self { ranges, points, panorama })
    }

    /// Distance along `bearing` to the first hit point inside a corridor of
    /// the given half width, or `max_range` when the corridor is clear.
    pub fn corridor_range(&self, bearing: f64, half_width: f64, max_range: f64) -> f64 {
        let (c, s) = (bearing.cos(), bearing.sin());
        self.points
            .iter()
            .filter_map(|&(x, y)| {
                let along = x * c + y * s;
                let cross = -x * s + y * c;
                (along > 0.0 && cross.abs() < half_width).then_some(along)
            })
            .fold(max_range, f64::min)
    }

    /// Whether any hit point lies within `radius` of a robot-relative point.
    pub fn occupied_near(&self, rel: (f64, f64), radius: f64) -> bool {
        self.points
            .iter()
            .any(|&(x, y)| (x - rel.0).hypot(y - rel.1) < radius)
    }
}

/// A move in flight, resolved at the next step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingMove {
    pub action: usize,
    pub from: usize,
    pub target: usize,
    pub prev_q: Categorical,
    pub collided: bool,
}

/// What happened during one call to [`Agent::step`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub outcome: LocalisationOutcome,
    pub believed_state: usize,
    pub confident: bool,
    pub action: Option<usize>,
    pub target: Option<usize>,
    pub collided: bool,
    pub new_nodes: Vec<usize>,
    pub observation: Option<usize>,
    pub goal_reached: bool,
    pub plan: Option<PlanResult>,
    pub true_pose: Pose,
    pub traveled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub hp: HyperParams,
    pub cfg: AgentConfig,
    pub model: GenerativeModel,
    pub map: TopoMap,
    pub store: ObservationStore,
    pub belief: BeliefState,
    /// Odometry-integrated position in the map frame.
    pub estimate: (f64, f64),
    pub lost: bool,
    pub pending: Option<PendingMove>,
    goal: Option<Panorama>,
    goal_observations: BTreeSet<usize>,
    goal_checked: usize,
    rng: ChaCha8Rng,
}

impl Agent {
    /// An agent whose map starts with one node at `start`.
    pub fn new(hp: HyperParams, cfg: AgentConfig, start: (f64, f64), seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut model = GenerativeModel::new(hp.actions(), hp.bin_side());
        let mut map = TopoMap::new();
        let s = map.add_node_unchecked(&mut model, start.0, start.1);
        let bin = model.state_bin(s).expect("fresh state has a bin");
        let belief = BeliefState::certain(model.n_states(), s, model.n_bins(), bin);
        Ok(Self {
            hp,
            cfg,
            model,
            map,
            store: ObservationStore::new(),
            belief,
            estimate: start,
            lost: false,
            pending: None,
            goal: None,
            goal_observations: BTreeSet::new(),
            goal_checked: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Sets (or clears) the goal observation.
    pub fn set_goal(&mut self, goal: Option<Panorama>) {
        self.goal = goal;
        self.goal_observations.clear();
        self.goal_checked = 0;
    }

    pub fn goal_observations(&self) -> &BTreeSet<usize> {
        &self.goal_observations
    }

    /// Resets the belief to certainty in `state` at its node position.
    pub fn relocalise(&mut self, state: usize) -> Result<()> {
        let pos = self.map.node(state)?.position;
        let bin = self.model.state_bin(state).expect("state has a bin");
        self.belief = BeliefState::certain(self.model.n_states(), state, self.model.n_bins(), bin);
        self.estimate = pos;
        self.lost = false;
        self.pending = None;
        Ok(())
    }

    pub fn believed_state(&self) -> usize {
        self.belief.q_s.argmax()
    }

    /// Believed position: the node of the believed state when confident,
    /// else the odometry estimate.
    pub fn believed_position(&self) -> (f64, f64) {
        if self.lost {
            return self.estimate;
        }
        self.map
            .position(self.believed_state())
            .unwrap_or(self.estimate)
    }

    /// Observation owner: the state most likely to emit it.
    fn owner(&self, o: usize) -> usize {
        (0..self.model.n_states())
            .map(|s| (s, self.model.a_o.prob(o, s)))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
            .0
    }

    fn to_rel(&self, p: (f64, f64)) -> (f64, f64) {
        (p.0 - self.estimate.0, p.1 - self.estimate.1)
    }

    /// Full step: sense, localise, learn, grow the map, plan and move.
    pub fn step(&mut self, world: &World, pose: &Pose, drift: &mut Drift) -> Result<StepReport> {
        let percept = Percept::sense(world, pose, &self.hp, &self.cfg.render)?;
        let mut report = self.perceive(&percept)?;
        report.true_pose = *pose;
        if report.goal_reached {
            return Ok(report);
        }
        let plan = self.plan(&percept)?;
        let action = plan.action;
        report.plan = Some(plan);
        self.act(world, pose, action, drift, &mut report)?;
        Ok(report)
    }

    /// Localisation, learning from the last move and map growth.
    pub fn perceive(&mut self, percept: &Percept) -> Result<StepReport> {
        let actions = self.hp.actions();
        let stay = actions.stay().expect("action set has stay");
        let (loc_action, pending) = match self.pending.take() {
            Some(p) if !p.collided => (p.action, Some(p)),
            Some(p) => (stay, Some(p)),
            None => (stay, None),
        };

        let scores = self.store.scores(&percept.panorama)?;
        let weights = perception::observation_evidence(&scores, self.hp.ssim_match_threshold, self.cfg.evidence_mode);
        let matched_state = match perception::best_match(&scores, self.hp.ssim_match_threshold) {
            MatchResult::Match { id, .. } => Some(self.owner(id)),
            MatchResult::Novel => None,
        };
        let evidence = ObservationEvidence { weights, matched_state };
        let pos_ev = inference::gaussian_position_evidence(
            &self.model,
            self.estimate.0,
            self.estimate.1,
            self.cfg.position_sigma,
        );
        let loc = inference::localise(
            &self.model,
            &self.belief,
            loc_action,
            &evidence,
            &pos_ev,
            self.cfg.motion_sigma,
            self.hp.lost_zscore_threshold,
        )?;

        if let Some(p) = &pending {
            self.learn_move(p, &loc.belief)?;
        }

        self.belief = loc.belief;
        self.lost = loc.outcome == LocalisationOutcome::Lost;
        let s = self.believed_state();
        let mut report = StepReport {
            outcome: loc.outcome,
            believed_state: s,
            confident: !self.lost,
            action: None,
            target: None,
            collided: false,
            new_nodes: Vec::new(),
            observation: None,
            goal_reached: false,
            plan: None,
            true_pose: Pose::new(0.0, 0.0, 0.0),
            traveled: 0.0,
        };
        if self.lost {
            return Ok(report);
        }
        if loc.outcome == LocalisationOutcome::TrustPerception {
            self.estimate = self.map.node(s)?.position;
        }
        report.observation = Some(self.attach_view(s, &percept.panorama, &scores)?);
        report.new_nodes = self.grow(s, percept)?;
        self.predict_transitions(s, percept)?;
        self.belief.q_s = self.belief.q_s.padded(self.model.n_states());
        self.belief.q_p = self.belief.q_p.padded(self.model.n_bins());
        self.refresh_goal()?;
        report.goal_reached = self.goal.is_some()
            && self.map.node(s)?.observation_ids.iter().any(|o| self.goal_observations.contains(o));
        Ok(report)
    }

    /// Reinforces the best matching observation already held by `s`, or
    /// stores the view as a new observation of `s`.
    fn attach_view(&mut self, s: usize, view: &Panorama, scores: &[f64]) -> Result<usize> {
        let thr = self.hp.ssim_match_threshold;
        let own = self.map.node(s)?.observation_ids.iter().copied()
            .filter(|&o| scores.get(o).is_some_and(|v| *v >= thr))
            .max_by(|a, b| scores[*a].total_cmp(&scores[*b]).then(b.cmp(a)));
        match own {
            Some(o) => {
                self.map.attach_observation(&mut self.model, s, o)?;
                Ok(o)
            }
            None => {
                let id = self.store.push(view.clone())?;
                let o = self.map.add_observation(&mut self.model, s)?;
                debug_assert_eq!(id, o);
                Ok(o)
            }
        }
    }

    fn learn_move(&mut self, p: &PendingMove, posterior: &BeliefState) -> Result<()> {
        let actions = self.hp.actions();
        let n = self.model.n_states();
        let prev = p.prev_q.padded(n);
        let (next, outcome) = if p.collided {
            (Categorical::delta(n, p.target), TransitionOutcome::Impossible)
        } else {
            (posterior.q_s.clone(), TransitionOutcome::Possible)
        };
        learning::update_transition(&mut self.model.b_s, &actions, &prev, &next, p.action, outcome)?;
        self.update_bins(p.from, p.target, p.action, outcome)
    }

    /// Mirrors a state transition update on the bins of the two states.
    fn update_bins(&mut self, from: usize, to: usize, action: usize, outcome: TransitionOutcome) -> Result<()> {
        let actions = self.hp.actions();
        let nb = self.model.n_bins();
        let (Some(bf), Some(bt)) = (self.model.state_bin(from), self.model.state_bin(to)) else {
            return Ok(());
        };
        learning::update_transition(
            &mut self.model.b_p,
            &actions,
            &Categorical::delta(nb, bf),
            &Categorical::delta(nb, bt),
            action,
            outcome,
        )
    }

    /// Seeds `from -a-> to` and its reverse at count one.
    fn seed_edge(&mut self, from: usize, action: usize, to: usize) -> Result<()> {
        let actions = self.hp.actions();
        let opp = actions.opposite(action);
        if self.model.edge_target(from, action).is_none() {
            self.model.b_s.slice_mut(action).set(to, from, 1.0)?;
            if let (Some(bf), Some(bt)) = (self.model.state_bin(from), self.model.state_bin(to)) {
                if self.model.b_p.slice(action).get(bt, bf) < 1.0 {
                    self.model.b_p.slice_mut(action).set(bt, bf, 1.0)?;
                }
            }
        }
        if self.model.edge_target(to, opp).is_none() {
            self.model.b_s.slice_mut(opp).set(from, to, 1.0)?;
            if let (Some(bf), Some(bt)) = (self.model.state_bin(from), self.model.state_bin(to)) {
                if self.model.b_p.slice(opp).get(bf, bt) < 1.0 {
                    self.model.b_p.slice_mut(opp).set(bf, bt, 1.0)?;
                }
            }
        }
        Ok(())
    }

    /// Proposes, gates and links new nodes around the current position, and
    /// links nearby existing nodes reachable in a straight line.
    fn grow(&mut self, s: usize, percept: &Percept) -> Result<Vec<usize>> {
        let actions = self.hp.actions();
        let w = self.hp.agent_radius + self.hp.padding;
        let free: Vec<f64> = (0..actions.n_headings())
            .map(|a| {
                let h = actions.heading(a).expect("heading");
                percept.corridor_range(h, w, self.hp.lidar_range)
            })
            .collect();
        let mut added = Vec::new();
        for c in map::propose_nodes(self.estimate, &free, &self.hp, &self.map) {
            // Earlier candidates of this step may now conflict.
            if self.map.nearest_within(c.position.0, c.position.1, self.hp.influence_radius).is_some() {
                continue;
            }
            if self.model.edge_target(s, c.action).is_some() {
                continue;
            }
            if let Some(n) = self.map.try_add_node(&mut self.model, c.position.0, c.position.1) {
                self.seed_edge(s, c.action, n)?;
                added.push(n);
            }
        }
        let reach = self.cfg.link_factor * self.hp.influence_radius;
        for t in 0..self.map.len() {
            if t == s {
                continue;
            }
            let rel = self.to_rel(self.map.nodes()[t].position);
            let d = rel.0.hypot(rel.1);
            if d > reach || d < 1e-9 {
                continue;
            }
            let bearing = rel.1.atan2(rel.0);
            let a = actions.nearest_heading(bearing);
            if self.model.is_edge(s, a, t) || self.model.edge_target(s, a).is_some() {
                continue;
            }
            if percept.corridor_range(bearing, self.hp.agent_radius, self.hp.lidar_range) > d {
                self.seed_edge(s, a, t)?;
            }
        }
        Ok(added)
    }

    /// Lidar-anticipated updates: edges out of `s` whose straight path is
    /// clear or blocked, and edges into nodes whose position is occupied.
    fn predict_transitions(&mut self, s: usize, percept: &Percept) -> Result<()> {
        let actions = self.hp.actions();
        let n = self.model.n_states();
        for a in 0..actions.len() {
            if actions.is_stay(a) {
                continue;
            }
            let Some(t) = self.model.edge_target(s, a) else { continue };
            let rel = self.to_rel(self.map.nodes()[t].position);
            let d = rel.0.hypot(rel.1);
            if d >= self.hp.lidar_range {
                continue;
            }
            let clear = percept.corridor_range(rel.1.atan2(rel.0), self.hp.agent_radius, self.hp.lidar_range) > d;
            let outcome = if clear {
                if self.model.b_s.prob(t, s, a) >= 0.5 {
                    continue;
                }
                TransitionOutcome::PredictedPossible
            } else {
                TransitionOutcome::PredictedImpossible
            };
            learning::update_transition(
                &mut self.model.b_s,
                &actions,
                &Categorical::delta(n, s),
                &Categorical::delta(n, t),
                a,
                outcome,
            )?;
            self.update_bins(s, t, a, outcome)?;
        }
        let edges = self.map.edges(&self.model);
        for t in 0..self.map.len() {
            let rel = self.to_rel(self.map.nodes()[t].position);
            let body = self.hp.agent_radius + 0.5 * self.hp.padding;
            if rel.0.hypot(rel.1) >= self.hp.lidar_range || !percept.occupied_near(rel, body) {
                continue;
            }
            for e in edges.iter().filter(|e| e.to == t) {
                learning::update_transition(
                    &mut self.model.b_s,
                    &actions,
                    &Categorical::delta(n, e.from),
                    &Categorical::delta(n, t),
                    e.action,
                    TransitionOutcome::PredictedImpossible,
                )?;
                self.update_bins(e.from, t, e.action, TransitionOutcome::PredictedImpossible)?;
            }
        }
        Ok(())
    }

    fn refresh_goal(&mut self) -> Result<()> {
        let Some(goal) = &self.goal else { return Ok(()) };
        for o in self.goal_checked..self.store.len() {
            let p = self.store.get(o).expect("stored observation");
            if perception::ssim(goal, p)? >= self.hp.ssim_match_threshold {
                self.goal_observations.insert(o);
            }
        }
        self.goal_checked = self.store.len();
        Ok(())
    }

    /// Preferences for the current mode: goal, lost or plain exploration.
    pub fn preferences(&self) -> Preferences {
        let mut prefs = Preferences::default();
        if self.goal.is_some() && !self.goal_observations.is_empty() {
            for &o in &self.goal_observations {
                prefs.set_observation(o, 1.0);
            }
            prefs.pragmatic_weight = self.cfg.goal_pragmatic_weight;
        } else if self.lost {
            for o in 0..self.model.n_observations() {
                prefs.set_observation(o, 1.0);
            }
        }
        prefs
    }

    /// Chooses the next action from the current beliefs.
    pub fn plan(&mut self, percept: &Percept) -> Result<PlanResult> {
        let actions = self.hp.actions();
        let s = self.believed_state();
        let mut prefs = self.preferences();
        let root_collision = (0..actions.len())
            .map(|a| {
                let Some(t) = self.model.edge_target(s, a).filter(|_| !actions.is_stay(a)) else {
                    return 0.0;
                };
                let rel = self.to_rel(self.map.nodes()[t].position);
                let d = rel.0.hypot(rel.1);
                let clear = percept.corridor_range(rel.1.atan2(rel.0), self.hp.agent_radius, self.hp.lidar_range);
                if clear > d || d >= self.hp.lidar_range { 0.0 } else { 1.0 }
            })
            .collect();
        let inductive = if self.hp.inductive_enabled && !self.goal_observations.is_empty() && self.goal.is_some() {
            let cs0 = planning::goal_state_preference(&self.model, &prefs);
            let h = planning::inductive_prior(
                &self.model,
                &cs0,
                self.hp.inductive_depth,
                self.hp.epsilon_inductive,
                self.hp.inductive_discount,
            );
            prefs.c_s = h.iter().map(|v| v / self.hp.epsilon_inductive.ln()).collect();
            h
        } else {
            Vec::new()
        };
        let ctx = PlanContext {
            root_collision,
            inductive,
            root_actions: None,
        };
        planning::mcts_plan(&self.model, &self.belief.q_s, &prefs, &self.hp, &ctx, &mut self.rng)
    }

    /// Moves toward the node the action leads to, backing off to the start
    /// after a collision.
    pub fn act(&mut self, world: &World, pose: &Pose, action: usize, drift: &mut Drift, report: &mut StepReport) -> Result<()> {
        let actions = self.hp.actions();
        let s = self.believed_state();
        report.action = Some(action);
        let target = if actions.is_stay(action) { None } else { self.model.edge_target(s, action) };
        let Some(t) = target else {
            report.true_pose = *pose;
            self.pending = Some(PendingMove {
                action: actions.stay().expect("stay"),
                from: s,
                target: s,
                prev_q: self.belief.q_s.clone(),
                collided: false,
            });
            return Ok(());
        };
        report.target = Some(t);
        let goal = self.map.nodes()[t].position;
        let rel = self.to_rel(goal);
        let heading = rel.1.atan2(rel.0);
        let r = sim::step_heading(world, pose, heading, rel.0.hypot(rel.1), self.hp.agent_radius, drift)?;
        self.estimate.0 += r.reported_odometry.0;
        self.estimate.1 += r.reported_odometry.1;
        let mut end = r.true_pose;
        let mut traveled = r.traveled;
        if r.collided {
            let back = sim::step_heading(world, &end, heading + PI, r.traveled, self.hp.agent_radius, drift)?;
            self.estimate.0 += back.reported_odometry.0;
            self.estimate.1 += back.reported_odometry.1;
            end = back.true_pose;
            traveled += back.traveled;
        }
        report.collided = r.collided;
        report.true_pose = end;
        report.traveled = traveled;
        self.pending = Some(PendingMove {
            action,
            from: s,
            target: t,
            prev_q: self.belief.q_s.clone(),
            collided: r.collided,
        });
        Ok(())
    }
}
