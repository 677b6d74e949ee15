//! The agent's generative model: observation and position likelihoods,
//! state and position transitions, and the preferences that shape planning.
//!
//! ```text
//! A_o : P(o | s)         observations × states
//! A_p : P(p | s)         position bins × states
//! B_s : P(s' | s, a)     states × states, one slice per action
//! B_p : P(p' | p, a)     bins × bins, one slice per action
//! ```
//!
//! States and observations are append-only; indices never change once issued.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::counts::{DirichletCounts, TransitionCounts, COUNT_FLOOR};
use crate::error::{Error, Result};

/// Pseudo-count placed on a new state's position bin.
pub const NEW_STATE_POSITION_COUNT: f64 = 1.0;

/// Pseudo-count placed on the `(observation, state)` entry when an observation is attached.
pub const NEW_OBSERVATION_COUNT: f64 = 1.0;

/// Discrete action space: evenly spaced headings plus an optional stay action.
///
/// With an odd action count the last index is the stay action and the rest
/// partition the full turn. Heading 0 points along +x, increasing counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSet {
    n_actions: usize,
}

/// One action of an [`ActionSet`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub index: usize,
    /// `None` for the stay action.
    pub heading: Option<f64>,
}

impl ActionSet {
    pub fn new(n_actions: usize) -> Result<Self> {
        if n_actions < 2 {
            return Err(Error::InvalidHyperParams("need at least two actions".into()));
        }
        Ok(Self { n_actions })
    }

    pub fn len(&self) -> usize {
        self.n_actions
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_headings(&self) -> usize {
        if self.n_actions % 2 == 1 {
            self.n_actions - 1
        } else {
            self.n_actions
        }
    }

    pub fn stay(&self) -> Option<usize> {
        (self.n_actions % 2 == 1).then_some(self.n_actions - 1)
    }

    pub fn is_stay(&self, action: usize) -> bool {
        self.stay() == Some(action)
    }

    pub fn heading(&self, action: usize) -> Option<f64> {
        if action < self.n_headings() {
            Some(action as f64 * TAU / self.n_headings() as f64)
        } else {
            None
        }
    }

    pub fn action(&self, index: usize) -> Result<Action> {
        if index >= self.n_actions {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index,
                len: self.n_actions,
            });
        }
        Ok(Action {
            index,
            heading: self.heading(index),
        })
    }

    /// The heading pointing the other way; stay is its own opposite.
    pub fn opposite(&self, action: usize) -> usize {
        if self.is_stay(action) {
            action
        } else {
            let n = self.n_headings();
            (action + n / 2) % n
        }
    }

    /// Heading action closest to a bearing (radians).
    pub fn nearest_heading(&self, bearing: f64) -> usize {
        let n = self.n_headings() as f64;
        let step = TAU / n;
        let idx = (bearing.rem_euclid(TAU) / step).round() as usize;
        idx % self.n_headings()
    }
}

/// Which way the inductive term enters the policy posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InductiveSign {
    /// `softmax(-γG - H)`, with `H = ln(ε)·(...) ≤ 0`: goal-ward states gain probability.
    #[default]
    Subtract,
    /// `softmax(-γG + H)`.
    Add,
}

/// Run-level hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub n_actions: usize,
    /// Physical radius of the robot, metres.
    pub agent_radius: f64,
    /// Extra clearance added to the agent radius near obstacles, metres.
    pub padding: f64,
    /// Minimum spacing between map nodes, metres.
    pub influence_radius: f64,
    pub max_hypothesis_chain: usize,
    /// Policy precision (inverse temperature).
    pub gamma: f64,
    pub epsilon_inductive: f64,
    /// Per-hop factor applied while propagating state preferences backwards.
    pub inductive_discount: f64,
    pub inductive_enabled: bool,
    /// Hops over which goal preference is propagated backwards.
    pub inductive_depth: usize,
    pub inductive_sign: InductiveSign,
    pub lost_zscore_threshold: f64,
    pub ssim_match_threshold: f64,
    pub mcts_depth: usize,
    pub mcts_simulations: usize,
    pub policy_length: usize,
    pub ucb_c: f64,
    pub lidar_range: f64,
    pub lidar_beams: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            n_actions: 13,
            agent_radius: 0.25,
            padding: 0.1,
            influence_radius: 1.0,
            max_hypothesis_chain: 8,
            gamma: 4.0,
            epsilon_inductive: 0.001,
            inductive_discount: 0.9,
            inductive_enabled: true,
            inductive_depth: 16,
            inductive_sign: InductiveSign::Subtract,
            lost_zscore_threshold: 4.0,
            ssim_match_threshold: 0.75,
            mcts_depth: 10,
            mcts_simulations: 30,
            policy_length: 1,
            ucb_c: std::f64::consts::SQRT_2,
            lidar_range: 12.0,
            lidar_beams: 360,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("agent_radius", self.agent_radius),
            ("influence_radius", self.influence_radius),
            ("gamma", self.gamma),
            ("lost_zscore_threshold", self.lost_zscore_threshold),
            ("lidar_range", self.lidar_range),
            ("inductive_discount", self.inductive_discount),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidHyperParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.padding < 0.0 {
            return Err(Error::InvalidHyperParams("padding must be non-negative".into()));
        }
        if self.n_actions < 2 {
            return Err(Error::InvalidHyperParams("n_actions must be at least 2".into()));
        }
        for (name, v) in [
            ("max_hypothesis_chain", self.max_hypothesis_chain),
            ("mcts_depth", self.mcts_depth),
            ("mcts_simulations", self.mcts_simulations),
            ("policy_length", self.policy_length),
            ("lidar_beams", self.lidar_beams),
        ] {
            if v == 0 {
                return Err(Error::InvalidHyperParams(format!("{name} must be positive")));
            }
        }
        if !(self.epsilon_inductive > 0.0 && self.epsilon_inductive < 1.0) {
            return Err(Error::InvalidHyperParams("epsilon_inductive must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.ssim_match_threshold) {
            return Err(Error::InvalidHyperParams("ssim_match_threshold must lie in [0, 1]".into()));
        }
        if self.influence_radius <= self.agent_radius {
            return Err(Error::InvalidHyperParams(
                "influence_radius must exceed agent_radius".into(),
            ));
        }
        Ok(())
    }

    pub fn actions(&self) -> ActionSet {
        ActionSet {
            n_actions: self.n_actions,
        }
    }

    /// Side of a square position bin.
    pub fn bin_side(&self) -> f64 {
        self.influence_radius / 2.0
    }
}

/// Log-preferences over outcomes. Missing entries read as zero (indifference).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    pub c_o: Vec<f64>,
    pub c_p: Vec<f64>,
    pub c_s: Vec<f64>,
    /// Log-preference for a collision relative to no collision.
    pub c_c: f64,
    pub pragmatic_weight: f64,
}

impl Default for Preferences {
    fn default() -> Self {
        Self {
            c_o: Vec::new(),
            c_p: Vec::new(),
            c_s: Vec::new(),
            c_c: -10.0,
            pragmatic_weight: 1.0,
        }
    }
}

impl Preferences {
    pub fn observation(&self, o: usize) -> f64 {
        self.c_o.get(o).copied().unwrap_or(0.0)
    }

    pub fn position(&self, p: usize) -> f64 {
        self.c_p.get(p).copied().unwrap_or(0.0)
    }

    pub fn state(&self, s: usize) -> f64 {
        self.c_s.get(s).copied().unwrap_or(0.0)
    }

    pub fn set_observation(&mut self, o: usize, value: f64) {
        if self.c_o.len() <= o {
            self.c_o.resize(o + 1, 0.0);
        }
        self.c_o[o] = value;
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .c_o
            .iter()
            .chain(&self.c_p)
            .chain(&self.c_s)
            .all(|v| v.is_finite());
        if !finite || !self.c_c.is_finite() {
            return Err(Error::InvalidHyperParams("preferences must be finite".into()));
        }
        if !(self.pragmatic_weight >= 0.0) {
            return Err(Error::InvalidHyperParams("pragmatic_weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Square grid of position bins, allocated lazily as positions are visited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BinsRepr", into = "BinsRepr")]
pub struct PositionBins {
    side: f64,
    index: BTreeMap<(i64, i64), usize>,
    cells: Vec<(i64, i64)>,
}

impl PositionBins {
    pub fn new(side: f64) -> Self {
        Self {
            side,
            index: BTreeMap::new(),
            cells: Vec::new(),
        }
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.side).floor() as i64, (y / self.side).floor() as i64)
    }

    pub fn lookup(&self, x: f64, y: f64) -> Option<usize> {
        self.index.get(&self.cell_of(x, y)).copied()
    }

    pub fn center(&self, bin: usize) -> (f64, f64) {
        let (i, j) = self.cells[bin];
        ((i as f64 + 0.5) * self.side, (j as f64 + 0.5) * self.side)
    }

    /// Bin indices whose centre lies within `radius` of `(x, y)`.
    pub fn within(&self, x: f64, y: f64, radius: f64) -> Vec<usize> {
        let (ci, cj) = self.cell_of(x, y);
        let reach = (radius / self.side).ceil() as i64 + 1;
        let mut out = Vec::new();
        for i in ci - reach..=ci + reach {
            for j in cj - reach..=cj + reach {
                if let Some(&b) = self.index.get(&(i, j)) {
                    let (bx, by) = self.center(b);
                    if (bx - x).hypot(by - y) <= radius {
                        out.push(b);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn insert(&mut self, cell: (i64, i64)) -> (usize, bool) {
        if let Some(&b) = self.index.get(&cell) {
            return (b, false);
        }
        let b = self.cells.len();
        self.cells.push(cell);
        self.index.insert(cell, b);
        (b, true)
    }
}

#[derive(Serialize, Deserialize)]
struct BinsRepr {
    side: f64,
    cells: Vec<(i64, i64)>,
}

impl From<PositionBins> for BinsRepr {
    fn from(value: PositionBins) -> Self {
        BinsRepr {
            side: value.side,
            cells: value.cells,
        }
    }
}

impl From<BinsRepr> for PositionBins {
    fn from(repr: BinsRepr) -> Self {
        let index = repr.cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        PositionBins {
            side: repr.side,
            index,
            cells: repr.cells,
        }
    }
}

/// The categorical generative model with its Dirichlet parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    actions: ActionSet,
    /// `P(o | s)`, observations × states.
    pub a_o: DirichletCounts,
    /// `P(p | s)`, bins × states.
    pub a_p: DirichletCounts,
    /// `P(s' | s, a)`.
    pub b_s: TransitionCounts,
    /// `P(p' | p, a)`.
    pub b_p: TransitionCounts,
    pub bins: PositionBins,
}

impl GenerativeModel {
    /// An empty model: no states, observations or bins yet.
    pub fn new(actions: ActionSet, bin_side: f64) -> Self {
        Self {
            actions,
            a_o: DirichletCounts::new(0, 0),
            a_p: DirichletCounts::new(0, 0),
            b_s: TransitionCounts::new(0, actions.len()),
            b_p: TransitionCounts::new(0, actions.len()),
            bins: PositionBins::new(bin_side),
        }
    }

    pub fn actions(&self) -> ActionSet {
        self.actions
    }

    pub fn n_states(&self) -> usize {
        self.a_o.cols()
    }

    pub fn n_observations(&self) -> usize {
        self.a_o.rows()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// Bin for a position, allocating it (and growing `A_p`, `B_p`) when new.
    pub fn ensure_bin(&mut self, x: f64, y: f64) -> usize {
        let cell = self.bins.cell_of(x, y);
        let (bin, fresh) = self.bins.insert(cell);
        if fresh {
            self.a_p.push_row();
            self.b_p.push_dim();
        }
        bin
    }

    /// Adds a state whose predicted position is `(x, y)`.
    ///
    /// The new `A_o` column is uniform, the new `A_p` column concentrates on the
    /// position's bin, and the new `B_s` rows and columns sit at the floor except
    /// a certain self-transition under the stay action.
    pub fn expand_state_dim(&mut self, x: f64, y: f64) -> usize {
        let bin = self.ensure_bin(x, y);
        let s = self.a_o.push_col();
        let sp = self.a_p.push_col();
        debug_assert_eq!(s, sp);
        self.a_p
            .set(bin, s, NEW_STATE_POSITION_COUNT)
            .expect("fresh column");
        let sb = self.b_s.push_dim();
        debug_assert_eq!(s, sb);
        if let Some(stay) = self.actions.stay() {
            self.b_s.slice_mut(stay).set(s, s, 1.0).expect("fresh state");
        }
        s
    }

    /// Adds an observation attached to `state`; returns the observation id.
    pub fn expand_observation_dim(&mut self, state: usize) -> Result<usize> {
        if state >= self.n_states() {
            return Err(Error::IndexOutOfRange {
                what: "state",
                index: state,
                len: self.n_states(),
            });
        }
        let o = self.a_o.push_row();
        self.a_o.set(o, state, NEW_OBSERVATION_COUNT)?;
        Ok(o)
    }

    /// `P(o | s)` column for a state.
    pub fn observation_column(&self, state: usize) -> Result<Categorical> {
        self.a_o.normalize(state)
    }

    /// Position bin with the most mass for a state.
    pub fn state_bin(&self, state: usize) -> Option<usize> {
        self.a_p.column_argmax(state)
    }

    /// Whether a transition count is high enough to count as an edge.
    pub fn is_edge(&self, from: usize, action: usize, to: usize) -> bool {
        self.b_s.slice(action).get(to, from) > 2.0 * COUNT_FLOOR
    }

    /// Most likely successor of `from` under `action`, if it is an edge.
    pub fn edge_target(&self, from: usize, action: usize) -> Option<usize> {
        let slice = self.b_s.slice(action);
        let to = slice.column_argmax(from)?;
        (slice.get(to, from) > 2.0 * COUNT_FLOOR).then_some(to)
    }

    /// Checks every structural invariant; used by tests and after loading.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_states();
        if self.a_p.cols() != n || self.b_s.dim() != n {
            return Err(Error::InvariantViolation("state dimension differs across tensors".into()));
        }
        if self.a_p.rows() != self.bins.len() || self.b_p.dim() != self.bins.len() {
            return Err(Error::InvariantViolation("bin dimension differs across tensors".into()));
        }
        if self.b_s.n_actions() != self.actions.len() || self.b_p.n_actions() != self.actions.len() {
            return Err(Error::InvariantViolation("action dimension differs across tensors".into()));
        }
        for s in 0..n {
            if self.n_observations() > 0 {
                self.a_o.normalize(s)?;
            }
            self.a_p.normalize(s)?;
            for a in 0..self.actions.len() {
                self.b_s.slice(a).normalize(s)?;
            }
        }
        Ok(())
    }

    /// Writes a versioned checkpoint file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelCheckpoint {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            model: self.clone(),
        };
        std::fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let file: ModelCheckpoint = serde_json::from_slice(&bytes)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Schema {
                expected: MODEL_FORMAT,
                expected_version: MODEL_VERSION,
                found: file.format,
                found_version: file.version,
            });
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

pub const MODEL_FORMAT: &str = "navinfer-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelCheckpoint {
    format: String,
    version: u32,
    model: GenerativeModel,
}
