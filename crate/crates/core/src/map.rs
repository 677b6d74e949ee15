//! Topological map: one node per model state, with a position in the agent's
//! odometric frame and the set of observations seen there.
//!
//! Edges are not stored; they are read off `B_s` (count above twice the floor).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GenerativeModel, HyperParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoNode {
    pub state_id: usize,
    pub position: (f64, f64),
    pub observation_ids: BTreeSet<usize>,
}

impl TopoNode {
    pub fn visited(&self) -> bool {
        !self.observation_ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub action: usize,
    pub to: usize,
    pub probability: f64,
}

/// A proposed node position reached from the current pose along `action`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: usize,
    pub position: (f64, f64),
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopoMap {
    nodes: Vec<TopoNode>,
}

impl TopoMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TopoNode] {
        &self.nodes
    }

    pub fn node(&self, state: usize) -> Result<&TopoNode> {
        self.nodes.get(state).ok_or(Error::IndexOutOfRange {
            what: "state",
            index: state,
            len: self.nodes.len(),
        })
    }

    pub fn position(&self, state: usize) -> Option<(f64, f64)> {
        self.nodes.get(state).map(|n| n.position)
    }

    /// Closest node strictly within `radius` of `(x, y)`; lowest id on ties.
    pub fn nearest_within(&self, x: f64, y: f64, radius: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for n in &self.nodes {
            let d = (n.position.0 - x).hypot(n.position.1 - y);
            if d < radius - 1e-9 && best.is_none_or(|(_, b)| d < b) {
                best = Some((n.state_id, d));
            }
        }
        best.map(|(s, _)| s)
    }

    /// Gates a candidate position and, if accepted, adds the node.
    pub fn try_add_node(&mut self, model: &mut GenerativeModel, x: f64, y: f64) -> Option<usize> {
        match delta_f_gate(model, x, y) {
            GateDecision::Accept(s) => {
                debug_assert_eq!(s, self.nodes.len());
                self.nodes.push(TopoNode {
                    state_id: s,
                    position: (x, y),
                    observation_ids: BTreeSet::new(),
                });
                Some(s)
            }
            GateDecision::Reject => None,
        }
    }

    /// Adds a node without the free-energy gate (initial node, tests).
    pub fn add_node_unchecked(&mut self, model: &mut GenerativeModel, x: f64, y: f64) -> usize {
        let s = model.expand_state_dim(x, y);
        self.nodes.push(TopoNode {
            state_id: s,
            position: (x, y),
            observation_ids: BTreeSet::new(),
        });
        s
    }

    /// Creates a fresh observation attached to `state`.
    pub fn add_observation(&mut self, model: &mut GenerativeModel, state: usize) -> Result<usize> {
        self.node(state)?;
        let o = model.expand_observation_dim(state)?;
        self.nodes[state].observation_ids.insert(o);
        Ok(o)
    }

    /// Associates an existing observation with `state` and reinforces it.
    pub fn attach_observation(&mut self, model: &mut GenerativeModel, state: usize, observation: usize) -> Result<()> {
        self.node(state)?;
        if observation >= model.n_observations() {
            return Err(Error::IndexOutOfRange {
                what: "observation",
                index: observation,
                len: model.n_observations(),
            });
        }
        crate::learning::reinforce_observation(&mut model.a_o, state, observation, 1.0)?;
        self.nodes[state].observation_ids.insert(observation);
        Ok(())
    }

    /// Edges currently listed in `B_s`, sorted by `(from, action, to)`.
    pub fn edges(&self, model: &GenerativeModel) -> Vec<Edge> {
        let mut out = Vec::new();
        for (a, slice) in model.b_s.slices().enumerate() {
            if model.actions().is_stay(a) {
                continue;
            }
            for from in 0..slice.cols() {
                for (to, _) in slice.explicit(from) {
                    if to != from && model.is_edge(from, a, to) {
                        out.push(Edge {
                            from,
                            action: a,
                            to,
                            probability: slice.prob(to, from),
                        });
                    }
                }
            }
        }
        out.sort_by_key(|e| (e.from, e.action, e.to));
        out
    }

    pub fn snapshot(&self, model: &GenerativeModel) -> MapSnapshot {
        MapSnapshot {
            nodes: self
                .nodes
                .iter()
                .map(|n| SnapshotNode {
                    id: n.state_id,
                    x: n.position.0,
                    y: n.position.1,
                    visited: n.visited(),
                    observation_ids: n.observation_ids.iter().copied().collect(),
                })
                .collect(),
            edges: self.edges(model),
        }
    }

    /// Fails if two visited nodes lie closer than `radius`.
    pub fn check_spacing(&self, radius: f64) -> Result<()> {
        let visited: Vec<&TopoNode> = self.nodes.iter().filter(|n| n.visited()).collect();
        for (i, a) in visited.iter().enumerate() {
            for b in &visited[i + 1..] {
                let d = (a.position.0 - b.position.0).hypot(a.position.1 - b.position.1);
                if d < radius - 1e-6 {
                    return Err(Error::InvariantViolation(format!(
                        "visited nodes {} and {} are {d:.3} m apart",
                        a.state_id, b.state_id
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub visited: bool,
    pub observation_ids: Vec<usize>,
}

/// Serializable view of the map for plots and inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub nodes: Vec<SnapshotNode>,
    pub edges: Vec<Edge>,
}

impl MapSnapshot {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Usable distance along a heading, or `None` if the heading is blocked.
///
/// A range at or beyond the lidar range means nothing was seen, so the whole
/// range is usable; otherwise the body clearance is kept from the obstacle.
fn usable_range(range: f64, hp: &HyperParams) -> Option<f64> {
    let clearance = hp.agent_radius + hp.padding;
    if range >= hp.lidar_range {
        Some(range)
    } else if range > clearance {
        Some(range - clearance)
    } else {
        None
    }
}

fn check_ranges(free_ranges: &[f64], hp: &HyperParams) -> bool {
    free_ranges.len() == hp.actions().n_headings()
}

/// One candidate per clear heading at the influence radius, pushed out to
/// twice the radius when an existing node is too close, dropped otherwise.
pub fn propose_nodes(pose: (f64, f64), free_ranges: &[f64], hp: &HyperParams, map: &TopoMap) -> Vec<Candidate> {
    if !check_ranges(free_ranges, hp) {
        return Vec::new();
    }
    let actions = hp.actions();
    let r = hp.influence_radius;
    let mut out = Vec::new();
    for (a, &range) in free_ranges.iter().enumerate() {
        let Some(limit) = usable_range(range, hp) else { continue };
        let h = actions.heading(a).expect("heading action");
        for d in [r, 2.0 * r] {
            if d > limit + 1e-9 {
                break;
            }
            let p = (pose.0 + d * h.cos(), pose.1 + d * h.sin());
            if map.nearest_within(p.0, p.1, r).is_none() {
                out.push(Candidate {
                    action: a,
                    position: p,
                    distance: d,
                });
                break;
            }
        }
    }
    out
}

/// Chains of candidates spaced by the influence radius along each clear
/// heading, at most `max_hypothesis_chain` per heading. A chain stops at the
/// first point that falls within the radius of an existing node.
pub fn hypothesize_chain(
    pose: (f64, f64),
    free_ranges: &[f64],
    hp: &HyperParams,
    map: &TopoMap,
) -> Vec<Vec<Candidate>> {
    if !check_ranges(free_ranges, hp) {
        return Vec::new();
    }
    let actions = hp.actions();
    let r = hp.influence_radius;
    free_ranges
        .iter()
        .enumerate()
        .map(|(a, &range)| {
            let Some(limit) = usable_range(range, hp) else {
                return Vec::new();
            };
            let h = actions.heading(a).expect("heading action");
            let n = ((limit + 1e-9) / r).floor() as usize;
            let mut chain = Vec::new();
            for k in 1..=n.min(hp.max_hypothesis_chain) {
                let d = k as f64 * r;
                let p = (pose.0 + d * h.cos(), pose.1 + d * h.sin());
                if map.nearest_within(p.0, p.1, r).is_some() {
                    break;
                }
                chain.push(Candidate {
                    action: a,
                    position: p,
                    distance: d,
                });
            }
            chain
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateDecision {
    Accept(usize),
    Reject,
}

/// Free energy of explaining a position in bin `bin` with the states of the
/// model, taking the best-fitting state under a uniform state prior.
fn position_free_energy(model: &GenerativeModel, bin: Option<usize>) -> f64 {
    let n = model.n_states();
    if n == 0 {
        return f64::INFINITY;
    }
    let best = (0..n)
        .map(|s| match bin {
            Some(b) => model.a_p.prob(b, s),
            None => model.a_p.floor_prob(s),
        })
        .fold(0.0, f64::max);
    (n as f64).ln() - best.ln()
}

/// The free energy change of adding a state at `(x, y)`:
/// `F = ln n − ln max_s P(b | s)` before and after the expansion.
pub fn delta_f(model: &GenerativeModel, x: f64, y: f64) -> f64 {
    let floor = crate::counts::COUNT_FLOOR;
    let bin = model.bins.lookup(x, y);
    let before = position_free_energy(model, bin);
    let n = model.n_states();
    // A new bin adds one floor entry to every existing column.
    let (extra_row, rows) = match bin {
        Some(_) => (0.0, model.n_bins()),
        None => (floor, model.n_bins() + 1),
    };
    let existing = (0..n)
        .map(|s| match bin {
            Some(b) => model.a_p.prob(b, s),
            None => floor / (model.a_p.column_sum(s) + extra_row),
        })
        .fold(0.0, f64::max);
    let fresh = crate::model::NEW_STATE_POSITION_COUNT
        / (crate::model::NEW_STATE_POSITION_COUNT + floor * (rows - 1) as f64);
    let after = ((n + 1) as f64).ln() - existing.max(fresh).ln();
    after - before
}

/// Expands the model with a state at `(x, y)` when that lowers free energy.
pub fn delta_f_gate(model: &mut GenerativeModel, x: f64, y: f64) -> GateDecision {
    if delta_f(model, x, y) < 0.0 {
        GateDecision::Accept(model.expand_state_dim(x, y))
    } else {
        GateDecision::Reject
    }
}
