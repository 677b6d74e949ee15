//! Expected free energy, the inductive goal prior and tree-search planning.
//!
//! One step of expected free energy for a predicted state belief `q'` is
//!
//! ```text
//! G = -I(S; O) - IG(A_o, A_p) + E[-ln P(c | C_c)] - w·E[C_o] - w·E[C_p] - w·E[C_s]
//! ```
//!
//! where `I(S; O)` is the mutual information between predicted states and
//! observations and `IG` the expected divergence between Dirichlet means
//! before and after one more count. Lower is better.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::categorical::{argmax, Categorical};
use crate::counts::{DirichletCounts, COUNT_FLOOR};
use crate::error::{Error, Result};
use crate::model::{GenerativeModel, HyperParams, InductiveSign, Preferences};

/// Predicted states below this mass are skipped when scoring.
const MASS_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EfeBreakdown {
    pub state_info_gain: f64,
    pub param_info_gain: f64,
    pub expected_collision: f64,
    pub utility_o: f64,
    pub utility_p: f64,
    pub utility_s: f64,
    pub total: f64,
}

impl EfeBreakdown {
    fn finish(mut self) -> Self {
        self.total = -self.state_info_gain - self.param_info_gain
            + self.expected_collision
            + self.utility_o
            + self.utility_p
            + self.utility_s;
        self
    }
}

/// `B_s[:, :, a]·q`, normalized.
pub fn predict_state(model: &GenerativeModel, q: &[f64], action: usize) -> Vec<f64> {
    let mut next = model.b_s.slice(action).propagate(q);
    let z: f64 = next.iter().sum();
    if z > 0.0 {
        next.iter_mut().for_each(|v| *v /= z);
    }
    next
}

/// `-[p·ln P(c=1) + (1-p)·ln P(c=0)]` with `P(c) = softmax([0, C_c])`.
pub fn expected_collision(collision_prob: f64, c_c: f64) -> f64 {
    let lse = (0.0f64).max(c_c) + ((0.0 - (0.0f64).max(c_c)).exp() + (c_c - (0.0f64).max(c_c)).exp()).ln();
    let ln_hit = c_c - lse;
    let ln_free = -lse;
    -(collision_prob * ln_hit + (1.0 - collision_prob) * ln_free)
}

/// Expected `KL(mean after one more count ‖ mean now)` for one column,
/// with the extra count falling on row `b` with probability `m_b`.
fn column_param_gain(counts: &DirichletCounts, col: usize) -> f64 {
    let a0 = counts.column_sum(col);
    let gain = |a: f64| {
        let m = a / a0;
        let m_new = (a + 1.0) / (a0 + 1.0);
        let kl = (1.0 - m_new) * (a0 / (a0 + 1.0)).ln() + m_new * ((a + 1.0) * a0 / ((a0 + 1.0) * a)).ln();
        m * kl
    };
    let floor_rows = counts.rows() - counts.explicit_len(col);
    let mut total = floor_rows as f64 * gain(COUNT_FLOOR);
    for (_, v) in counts.explicit(col) {
        total += gain(v);
    }
    total.max(0.0)
}

/// Entropy of one `P(· | col)` column in nats.
fn column_entropy(counts: &DirichletCounts, col: usize) -> f64 {
    let a0 = counts.column_sum(col);
    let term = |a: f64| {
        let p = a / a0;
        if p > 0.0 {
            -p * p.ln()
        } else {
            0.0
        }
    };
    let floor_rows = counts.rows() - counts.explicit_len(col);
    let mut h = floor_rows as f64 * term(COUNT_FLOOR);
    for (_, v) in counts.explicit(col) {
        h += term(v);
    }
    h
}

/// Per-state quantities that do not depend on the predicted belief.
#[derive(Debug, Clone)]
pub struct EfeCache {
    obs_entropy: Vec<f64>,
    gain_o: Vec<f64>,
    gain_p: Vec<f64>,
    /// `E[C_o | s]`.
    pref_o: Vec<f64>,
    /// `E[C_p | s]`.
    pref_p: Vec<f64>,
}

fn expected_preference(counts: &DirichletCounts, col: usize, prefs: &[f64], pref_sum: f64) -> f64 {
    let sum = counts.column_sum(col);
    if !(sum > 0.0) {
        return 0.0;
    }
    let mut e = pref_sum * COUNT_FLOOR / sum;
    for (r, v) in counts.explicit(col) {
        e += prefs.get(r).copied().unwrap_or(0.0) * (v - COUNT_FLOOR) / sum;
    }
    e
}

impl EfeCache {
    /// `O(states + explicit entries)`.
    pub fn new(model: &GenerativeModel, prefs: &Preferences) -> Self {
        let n = model.n_states();
        let c_o: Vec<f64> = prefs.c_o.iter().take(model.n_observations()).copied().collect();
        let c_p: Vec<f64> = prefs.c_p.iter().take(model.n_bins()).copied().collect();
        let sum_o: f64 = c_o.iter().sum();
        let sum_p: f64 = c_p.iter().sum();
        Self {
            obs_entropy: (0..n).map(|s| column_entropy(&model.a_o, s)).collect(),
            gain_o: (0..n).map(|s| column_param_gain(&model.a_o, s)).collect(),
            gain_p: (0..n).map(|s| column_param_gain(&model.a_p, s)).collect(),
            pref_o: (0..n).map(|s| expected_preference(&model.a_o, s, &c_o, sum_o)).collect(),
            pref_p: (0..n).map(|s| expected_preference(&model.a_p, s, &c_p, sum_p)).collect(),
        }
    }
}

/// `I(S; O) = H(Σ_s q(s)·A_o[:, s]) - Σ_s q(s)·H(A_o[:, s])`.
fn state_info_gain(model: &GenerativeModel, cache: &EfeCache, q: &[f64]) -> f64 {
    if model.n_observations() == 0 {
        return 0.0;
    }
    let mut base = 0.0;
    let mut touched: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    let mut conditional = 0.0;
    for (s, &w) in q.iter().enumerate() {
        if w < MASS_CUTOFF {
            continue;
        }
        let sum = model.a_o.column_sum(s);
        base += w * COUNT_FLOOR / sum;
        for (o, v) in model.a_o.explicit(s) {
            *touched.entry(o).or_insert(0.0) += w * (v - COUNT_FLOOR) / sum;
        }
        conditional += w * cache.obs_entropy[s];
    }
    let total_mass: f64 = q.iter().filter(|w| **w >= MASS_CUTOFF).sum();
    let plogp = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    let untouched = model.n_observations() - touched.len();
    let mut marginal = untouched as f64 * plogp(base / total_mass);
    for extra in touched.values() {
        marginal += plogp((base + extra) / total_mass);
    }
    (marginal - conditional / total_mass).max(0.0)
}

/// One step of expected free energy for an already-predicted state belief.
pub fn efe_predicted(
    model: &GenerativeModel,
    cache: &EfeCache,
    q_next: &[f64],
    prefs: &Preferences,
    collision_prob: f64,
) -> EfeBreakdown {
    efe_with_novelty(model, cache, q_next, prefs, collision_prob, None)
}

/// As [`efe_predicted`], with the parameter gain of each state scaled by
/// `novelty[s]`: the probability that `s` has not already been visited
/// earlier on the imagined path (its counts would already be updated).
pub fn efe_with_novelty(
    model: &GenerativeModel,
    cache: &EfeCache,
    q_next: &[f64],
    prefs: &Preferences,
    collision_prob: f64,
    novelty: Option<&[f64]>,
) -> EfeBreakdown {
    let w = prefs.pragmatic_weight;
    let mut b = EfeBreakdown {
        state_info_gain: state_info_gain(model, cache, q_next),
        expected_collision: expected_collision(collision_prob, prefs.c_c),
        ..EfeBreakdown::default()
    };
    let (mut gain, mut eo, mut ep, mut es) = (0.0, 0.0, 0.0, 0.0);
    for (s, &q) in q_next.iter().enumerate() {
        if q < MASS_CUTOFF {
            continue;
        }
        let m = novelty.map_or(1.0, |n| n[s]);
        gain += q * m * (cache.gain_o[s] + cache.gain_p[s]);
        eo += q * cache.pref_o[s];
        ep += q * cache.pref_p[s];
        es += q * prefs.state(s);
    }
    b.param_info_gain = gain;
    b.utility_o = -w * eo;
    b.utility_p = -w * ep;
    b.utility_s = -w * es;
    b.finish()
}

/// Predicts the state belief under `action` and scores it.
pub fn efe_step(
    model: &GenerativeModel,
    belief: &Categorical,
    action: usize,
    prefs: &Preferences,
    collision_prob: f64,
) -> Result<EfeBreakdown> {
    if belief.len() != model.n_states() {
        return Err(Error::DimensionMismatch {
            expected: model.n_states(),
            found: belief.len(),
        });
    }
    if action >= model.actions().len() {
        return Err(Error::IndexOutOfRange {
            what: "action",
            index: action,
            len: model.actions().len(),
        });
    }
    let cache = EfeCache::new(model, prefs);
    let q = predict_state(model, belief.probs(), action);
    Ok(efe_predicted(model, &cache, &q, prefs, collision_prob))
}

/// Goal preference over states: `max_o C_o(o)` over the observations a state
/// is more likely than not to produce, zero elsewhere.
pub fn goal_state_preference(model: &GenerativeModel, prefs: &Preferences) -> Vec<f64> {
    let mut cs = vec![0.0f64; model.n_states()];
    for (s, v) in cs.iter_mut().enumerate() {
        for (o, _) in model.a_o.explicit(s) {
            let c = prefs.observation(o);
            if c > 0.0 && model.a_o.prob(o, s) >= 0.5 {
                *v = v.max(c);
            }
        }
    }
    cs
}

/// Backward propagation of a state preference along listed edges.
///
/// `Cs_n(s) = max(Cs_{n-1}(s), δ·max_{a,s'} B̃(s'|s,a)·Cs_{n-1}(s'))` for
/// `n = 1..depth`, with `B̃` the transition probabilities restricted to edges.
/// The result is `H(s) = ln(ε)·Cs_depth(s)`, all zeros when `Cs_0` is zero.
pub fn inductive_prior(model: &GenerativeModel, cs0: &[f64], depth: usize, epsilon: f64, discount: f64) -> Vec<f64> {
    let n = model.n_states();
    let mut cs: Vec<f64> = (0..n).map(|s| cs0.get(s).copied().unwrap_or(0.0).max(0.0)).collect();
    if cs.iter().all(|v| *v == 0.0) {
        return vec![0.0; n];
    }
    let edges: Vec<(usize, usize, f64)> = model
        .b_s
        .slices()
        .enumerate()
        .filter(|(a, _)| !model.actions().is_stay(*a))
        .flat_map(|(a, slice)| {
            (0..n).flat_map(move |from| {
                slice
                    .explicit(from)
                    .filter(move |(to, _)| *to != from && model.is_edge(from, a, *to))
                    .map(move |(to, _)| (from, to, slice.prob(to, from)))
            })
        })
        .collect();
    for _ in 0..depth {
        let prev = cs.clone();
        let mut changed = false;
        for &(from, to, p) in &edges {
            let v = discount * p * prev[to];
            if v > cs[from] {
                cs[from] = v;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let ln_eps = epsilon.ln();
    cs.iter().map(|c| ln_eps * c).collect()
}

/// `softmax(-γ·g - h)`.
pub fn policy_posterior(g: &[f64], gamma: f64, h: &[f64]) -> Result<Categorical> {
    if g.is_empty() {
        return Err(Error::Empty("policy set"));
    }
    if g.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: g.len(),
            found: h.len(),
        });
    }
    let logits: Vec<f64> = g.iter().zip(h).map(|(g, h)| -gamma * g - h).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Categorical::from_weights(logits.iter().map(|l| (l - max).exp()).collect())
}

/// A node of the search tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNode {
    pub belief: Vec<f64>,
    /// Per state, the probability it has not been visited on the path so far.
    pub novelty: Vec<f64>,
    pub pose_estimate: Option<(f64, f64)>,
    pub incoming_action: Option<usize>,
    pub children: Vec<usize>,
    pub visit_count: u32,
    /// Sum over visits of the expected free energy from this node down.
    pub total_g: f64,
    /// Expected free energy of the step into this node.
    pub g_value: f64,
    pub breakdown: EfeBreakdown,
    pub depth: usize,
    pub parent: Option<usize>,
    pub expanded: bool,
}

impl PolicyNode {
    pub fn mean_g(&self) -> f64 {
        if self.visit_count == 0 {
            self.g_value
        } else {
            self.total_g / self.visit_count as f64
        }
    }
}

/// Inputs to one planning call beyond the model and preferences.
#[derive(Debug, Clone, Default)]
pub struct PlanContext {
    /// Collision probability per action at the root (from the range sensor).
    pub root_collision: Vec<f64>,
    /// Inductive prior per state; empty disables it.
    pub inductive: Vec<f64>,
    /// Actions allowed at the root regardless of edges (besides stay).
    pub root_actions: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildSummary {
    pub action: usize,
    pub visits: u32,
    pub mean_g: f64,
    pub h: f64,
    pub probability: f64,
    pub breakdown: EfeBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub action: usize,
    pub children: Vec<ChildSummary>,
    pub tree_size: usize,
}

struct Search<'a> {
    model: &'a GenerativeModel,
    prefs: &'a Preferences,
    hp: &'a HyperParams,
    ctx: &'a PlanContext,
    cache: EfeCache,
    nodes: Vec<PolicyNode>,
    g_min: f64,
    g_max: f64,
}

impl Search<'_> {
    /// Stay plus every action with an edge out of the most likely state.
    fn feasible(&self, belief: &[f64], is_root: bool) -> Vec<usize> {
        let actions = self.model.actions();
        let from = argmax(belief);
        let mut out: Vec<usize> = match (&self.ctx.root_actions, is_root) {
            (Some(list), true) => list.clone(),
            _ => (0..actions.len())
                .filter(|&a| !actions.is_stay(a) && self.model.edge_target(from, a).is_some())
                .collect(),
        };
        if let Some(stay) = actions.stay() {
            if !out.contains(&stay) {
                out.push(stay);
            }
        }
        out.sort_unstable();
        out
    }

    fn score(&self, belief: &[f64], novelty: &[f64], action: usize, is_root: bool) -> (Vec<f64>, EfeBreakdown) {
        let q = predict_state(self.model, belief, action);
        let collision = if is_root {
            self.ctx.root_collision.get(action).copied().unwrap_or(0.0)
        } else {
            0.0
        };
        let b = efe_with_novelty(self.model, &self.cache, &q, self.prefs, collision, Some(novelty));
        (q, b)
    }

    /// Creates one child per feasible action. Each child is scored with its
    /// own G plus a greedy rollout to the planning depth, counted as its first
    /// visit. Returns the best (lowest) of those values.
    fn expand(&mut self, idx: usize) -> f64 {
        let is_root = self.nodes[idx].parent.is_none();
        let belief = self.nodes[idx].belief.clone();
        let novelty = self.nodes[idx].novelty.clone();
        let depth = self.nodes[idx].depth;
        let steps = self.hp.mcts_depth.saturating_sub(depth + 1);
        let mut best = f64::INFINITY;
        for a in self.feasible(&belief, is_root) {
            let (q, b) = self.score(&belief, &novelty, a, is_root);
            let child_novelty = visit(&novelty, &q);
            let value = b.total + self.rollout(&q, &child_novelty, steps);
            best = best.min(value);
            self.g_min = self.g_min.min(value);
            self.g_max = self.g_max.max(value);
            let pose = self.model.state_bin(argmax(&q)).map(|bin| self.model.bins.center(bin));
            self.nodes.push(PolicyNode {
                belief: q,
                novelty: child_novelty,
                pose_estimate: pose,
                incoming_action: Some(a),
                children: Vec::new(),
                visit_count: 1,
                total_g: value,
                g_value: b.total,
                breakdown: b,
                depth: depth + 1,
                parent: Some(idx),
                expanded: false,
            });
            let child = self.nodes.len() - 1;
            self.nodes[idx].children.push(child);
        }
        self.nodes[idx].expanded = true;
        best
    }

    /// Greedy rollout: at each step take the action with the lowest single-step G.
    fn rollout(&self, start: &[f64], novelty: &[f64], steps: usize) -> f64 {
        let mut belief = start.to_vec();
        let mut novelty = novelty.to_vec();
        let mut total = 0.0;
        for _ in 0..steps {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for a in self.feasible(&belief, false) {
                let (q, b) = self.score(&belief, &novelty, a, false);
                if best.as_ref().is_none_or(|(g, _)| b.total < *g) {
                    best = Some((b.total, q));
                }
            }
            let Some((g, q)) = best else { break };
            total += g;
            novelty = visit(&novelty, &q);
            belief = q;
        }
        total
    }

    fn ucb(&self, parent: usize, child: usize) -> f64 {
        let c = &self.nodes[child];
        if c.visit_count == 0 {
            return f64::INFINITY;
        }
        let span = self.g_max - self.g_min;
        let reward = if span > 1e-12 {
            (self.g_max - c.mean_g()) / span
        } else {
            0.5
        };
        let n_parent = self.nodes[parent].visit_count.max(1) as f64;
        reward + self.hp.ucb_c * (n_parent.ln() / c.visit_count as f64).sqrt()
    }

    fn select(&self) -> usize {
        let mut idx = 0;
        while self.nodes[idx].expanded && !self.nodes[idx].children.is_empty() {
            let mut best = self.nodes[idx].children[0];
            let mut best_score = f64::NEG_INFINITY;
            for &c in &self.nodes[idx].children {
                let s = self.ucb(idx, c);
                if s > best_score {
                    best_score = s;
                    best = c;
                }
            }
            idx = best;
        }
        idx
    }

    fn backpropagate(&mut self, leaf: usize, rollout: f64) {
        let mut ret = rollout;
        let mut idx = Some(leaf);
        while let Some(i) = idx {
            if self.nodes[i].parent.is_some() {
                ret += self.nodes[i].g_value;
            }
            let node = &mut self.nodes[i];
            node.visit_count += 1;
            node.total_g += ret;
            let mean = node.mean_g();
            if node.parent.is_some() {
                self.g_min = self.g_min.min(mean);
                self.g_max = self.g_max.max(mean);
            }
            idx = self.nodes[i].parent;
        }
    }
}

/// Novelty after visiting a state drawn from `q`.
fn visit(novelty: &[f64], q: &[f64]) -> Vec<f64> {
    novelty.iter().zip(q).map(|(m, p)| m * (1.0 - p)).collect()
}

/// Plans one action from `belief` with AIF tree search.
///
/// Each simulation selects a leaf by UCB1 on range-normalized `-G`, expands
/// it with one child per feasible action, rolls out greedily to the planning
/// depth and backs the accumulated `G` up the path. The root action is the
/// argmax of `softmax(-γ·Ḡ - H)`; exact ties are broken with `rng`.
pub fn mcts_plan(
    model: &GenerativeModel,
    belief: &Categorical,
    prefs: &Preferences,
    hp: &HyperParams,
    ctx: &PlanContext,
    rng: &mut impl Rng,
) -> Result<PlanResult> {
    if belief.len() != model.n_states() {
        return Err(Error::DimensionMismatch {
            expected: model.n_states(),
            found: belief.len(),
        });
    }
    let actions = model.actions();
    let fallback = actions.stay().unwrap_or(0);
    let mut search = Search {
        model,
        prefs,
        hp,
        ctx,
        cache: EfeCache::new(model, prefs),
        nodes: vec![PolicyNode {
            belief: belief.probs().to_vec(),
            novelty: visit(&vec![1.0; belief.len()], belief.probs()),
            pose_estimate: model.state_bin(belief.argmax()).map(|b| model.bins.center(b)),
            incoming_action: None,
            children: Vec::new(),
            visit_count: 0,
            total_g: 0.0,
            g_value: 0.0,
            breakdown: EfeBreakdown::default(),
            depth: 0,
            parent: None,
            expanded: false,
        }],
        g_min: f64::INFINITY,
        g_max: f64::NEG_INFINITY,
    };
    for _ in 0..hp.mcts_simulations {
        let leaf = search.select();
        let r = if search.nodes[leaf].depth < hp.mcts_depth && !search.nodes[leaf].expanded {
            search.expand(leaf)
        } else {
            let steps = hp.mcts_depth.saturating_sub(search.nodes[leaf].depth);
            let leaf_node = &search.nodes[leaf];
            search.rollout(&leaf_node.belief, &leaf_node.novelty, steps)
        };
        if r.is_finite() {
            search.backpropagate(leaf, r);
        }
    }
    let root_children = search.nodes[0].children.clone();
    if root_children.is_empty() {
        return Ok(PlanResult {
            action: fallback,
            children: Vec::new(),
            tree_size: search.nodes.len(),
        });
    }
    let h_of = |q: &[f64]| -> f64 {
        if ctx.inductive.is_empty() {
            return 0.0;
        }
        let h: f64 = q.iter().zip(&ctx.inductive).map(|(q, h)| q * h).sum();
        match hp.inductive_sign {
            InductiveSign::Subtract => h,
            InductiveSign::Add => -h,
        }
    };
    let g: Vec<f64> = root_children.iter().map(|&c| search.nodes[c].mean_g()).collect();
    let h: Vec<f64> = root_children.iter().map(|&c| h_of(&search.nodes[c].belief)).collect();
    let post = policy_posterior(&g, hp.gamma, &h)?;
    let best = post.max();
    let tied: Vec<usize> = (0..post.len()).filter(|&i| post.get(i) >= best * (1.0 - 1e-9)).collect();
    let pick = if tied.len() == 1 {
        tied[0]
    } else {
        tied[rng.random_range(0..tied.len())]
    };
    let children = root_children
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let node = &search.nodes[c];
            ChildSummary {
                action: node.incoming_action.expect("child has an action"),
                visits: node.visit_count,
                mean_g: g[i],
                h: h[i],
                probability: post.get(i),
                breakdown: node.breakdown,
            }
        })
        .collect();
    Ok(PlanResult {
        action: search.nodes[root_children[pick]].incoming_action.expect("child has an action"),
        children,
        tree_size: search.nodes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::categorical::{entropy, kl_divergence};
    use crate::model::ActionSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Line of `n` visited nodes along +x, linked both ways under actions 0 and 6.
    fn line(n: usize) -> GenerativeModel {
        let mut m = GenerativeModel::new(ActionSet::new(13).unwrap(), 0.5);
        for i in 0..n {
            let s = m.expand_state_dim(i as f64 + 0.25, 0.25);
            m.expand_observation_dim(s).unwrap();
        }
        for i in 0..n - 1 {
            m.b_s.slice_mut(0).set(i + 1, i, 8.0).unwrap();
            m.b_s.slice_mut(6).set(i, i + 1, 8.0).unwrap();
        }
        m
    }

    #[test]
    fn uninformative_step_is_collision_only() {
        let mut m = GenerativeModel::new(ActionSet::new(3).unwrap(), 0.5);
        m.expand_state_dim(0.25, 0.25);
        m.a_o.push_row();
        m.a_o.push_row();
        m.a_o.set(0, 0, 1e6).unwrap();
        m.a_o.set(1, 0, 1e6).unwrap();
        m.a_p.set(0, 0, 1e6).unwrap();
        let prefs = Preferences::default();
        let b = efe_step(&m, &Categorical::delta(1, 0), 2, &prefs, 0.0).unwrap();
        assert!(b.state_info_gain.abs() < 1e-9);
        assert!(b.param_info_gain.abs() < 1e-6);
        assert!((b.total - b.expected_collision).abs() < 1e-6);
    }

    #[test]
    fn no_observations_yet_is_finite() {
        let mut m = GenerativeModel::new(ActionSet::new(13).unwrap(), 0.5);
        let a = m.expand_state_dim(0.25, 0.25);
        let b = m.expand_state_dim(1.25, 0.25);
        m.b_s.slice_mut(0).set(b, a, 8.0).unwrap();
        let e = efe_step(&m, &Categorical::delta(2, a), 0, &Preferences::default(), 0.0).unwrap();
        assert!(e.total.is_finite());
    }

    #[test]
    fn collision_dominates() {
        let hit = expected_collision(1.0, -10.0);
        let free = expected_collision(0.0, -10.0);
        assert!((hit - (10.0 + (-10.0f64).exp().ln_1p())).abs() < 1e-12);
        assert!(free < 1e-4);
        let m = line(2);
        let prefs = Preferences::default();
        let blocked = efe_step(&m, &Categorical::delta(2, 0), 0, &prefs, 1.0).unwrap();
        let open = efe_step(&m, &Categorical::delta(2, 0), 0, &prefs, 0.0).unwrap();
        assert!(blocked.total - open.total > 9.9);
    }

    #[test]
    fn state_info_gain_matches_enumeration() {
        let mut m = GenerativeModel::new(ActionSet::new(3).unwrap(), 0.5);
        m.expand_state_dim(0.25, 0.25);
        m.expand_state_dim(1.25, 0.25);
        m.a_o.push_row();
        m.a_o.push_row();
        m.a_o.set(0, 0, 0.9).unwrap();
        m.a_o.set(1, 0, 0.1).unwrap();
        m.a_o.set(0, 1, 0.1).unwrap();
        m.a_o.set(1, 1, 0.9).unwrap();
        let q = vec![0.5, 0.5];
        let cache = EfeCache::new(&m, &Preferences::default());
        let got = state_info_gain(&m, &cache, &q);
        let prior = Categorical::new(q.clone()).unwrap();
        let mut expected = 0.0;
        for o in 0..2 {
            let joint: Vec<f64> = (0..2).map(|s| q[s] * m.a_o.prob(o, s)).collect();
            let p_o: f64 = joint.iter().sum();
            let post = Categorical::from_weights(joint).unwrap();
            expected += p_o * kl_divergence(&post, &prior).unwrap();
        }
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        let _ = entropy(&prior);
    }

    #[test]
    fn unvisited_states_promise_more_learning() {
        let mut m = line(2);
        let fresh = m.expand_state_dim(0.25, 1.25);
        m.b_s.slice_mut(3).set(fresh, 0, 1.0).unwrap();
        let prefs = Preferences::default();
        let known = efe_step(&m, &Categorical::delta(3, 0), 0, &prefs, 0.0).unwrap();
        let novel = efe_step(&m, &Categorical::delta(3, 0), 3, &prefs, 0.0).unwrap();
        assert!(novel.param_info_gain > known.param_info_gain);
        assert!(novel.total < known.total);
    }

    #[test]
    fn inductive_prior_cases() {
        let m = line(3);
        assert!(inductive_prior(&m, &[0.0; 3], 2, 0.001, 0.9).iter().all(|h| *h == 0.0));
        let h = inductive_prior(&m, &[0.0, 0.0, 1.0], 2, 0.001, 0.9);
        assert!(h[0] < 0.0);
        let p = m.b_s.prob(1, 0, 0);
        assert!((h[0] - 0.001f64.ln() * 0.81 * p * p).abs() < 1e-9);
        let short = inductive_prior(&m, &[0.0, 0.0, 1.0], 1, 0.001, 0.9);
        assert_eq!(short[0], 0.0);
        assert!(short[1] < 0.0);
    }

    #[test]
    fn posterior_examples() {
        let u = policy_posterior(&[2.0, 2.0, 2.0], 4.0, &[0.0; 3]).unwrap();
        assert!(u.probs().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-12));
        let t = policy_posterior(&[1.0, 5.0], 0.0, &[0.0; 2]).unwrap();
        assert!((t.get(0) - 0.5).abs() < 1e-12);
        let p = policy_posterior(&[1.0, 2.0], 1.0, &[0.0; 2]).unwrap();
        let e = (-1.0f64).exp();
        assert!((p.get(0) - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((p.get(0) - 0.731).abs() < 1e-3);
        assert!(policy_posterior(&[], 1.0, &[]).is_err());
    }

    #[test]
    fn single_feasible_action_is_forced() {
        let m = line(1);
        let hp = HyperParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = mcts_plan(&m, &Categorical::delta(1, 0), &Preferences::default(), &hp, &PlanContext::default(), &mut rng)
            .unwrap();
        assert_eq!(r.action, 12);
    }

    #[test]
    fn goal_to_the_right_is_chosen() {
        let m = line(3);
        let mut prefs = Preferences::default();
        prefs.set_observation(2, 1.0);
        prefs.pragmatic_weight = 10.0;
        let hp = HyperParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = mcts_plan(&m, &Categorical::delta(3, 1), &prefs, &hp, &PlanContext::default(), &mut rng).unwrap();
        assert_eq!(r.action, 0);
    }

    #[test]
    fn planning_is_reproducible() {
        let m = line(4);
        let hp = HyperParams::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            mcts_plan(&m, &Categorical::delta(4, 1), &Preferences::default(), &hp, &PlanContext::default(), &mut rng)
                .unwrap()
        };
        assert_eq!(run(5), run(5));
    }
}
