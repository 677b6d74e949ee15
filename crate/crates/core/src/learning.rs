//! Dirichlet count updates for transitions and likelihoods.
//!
//! A transition entry moves by `q'(s')·q(s)·b·λ` where `λ` depends on what
//! the agent learned about the move and in which direction the edge is
//! traversed. Results are clamped to the count bounds, so strongly negative
//! rates bring an edge down to the floor.

use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::counts::{DirichletCounts, TransitionCounts};
use crate::error::{Error, Result};
use crate::model::ActionSet;

/// Products `q'(s')·q(s)` below this are skipped.
pub const PAIR_WEIGHT_CUTOFF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionOutcome {
    /// The move was executed and succeeded.
    Possible,
    /// The move was executed and blocked.
    Impossible,
    /// Lidar says the move would succeed.
    PredictedPossible,
    /// Lidar says the move would be blocked.
    PredictedImpossible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reverse,
}

/// Learning rate for an outcome and traversal direction.
pub fn lambda_for(outcome: TransitionOutcome, direction: Direction) -> f64 {
    use TransitionOutcome::*;
    let magnitude = match (direction, outcome) {
        (Direction::Forward, Possible | Impossible) => 7.0,
        (Direction::Forward, PredictedPossible | PredictedImpossible) => 5.0,
        (Direction::Reverse, Possible | Impossible) => 5.0,
        (Direction::Reverse, PredictedPossible | PredictedImpossible) => 3.0,
    };
    match outcome {
        Possible | PredictedPossible => magnitude,
        Impossible | PredictedImpossible => -magnitude,
    }
}

fn support(q: &[f64]) -> Vec<(usize, f64)> {
    q.iter().copied().enumerate().filter(|(_, p)| *p > 0.0).collect()
}

/// Applies `b[s', s] += q_next(s')·q_prev(s)·b[s', s]·λ` to one action slice.
pub fn update_slice(slice: &mut DirichletCounts, q_prev: &[f64], q_next: &[f64], lambda: f64) -> Result<()> {
    if q_prev.len() != slice.cols() || q_next.len() != slice.rows() {
        return Err(Error::DimensionMismatch {
            expected: slice.cols(),
            found: q_prev.len(),
        });
    }
    let prev = support(q_prev);
    let next = support(q_next);
    for &(s, qs) in &prev {
        for &(n, qn) in &next {
            let w = qs * qn;
            if w < PAIR_WEIGHT_CUTOFF {
                continue;
            }
            let b = slice.get(n, s);
            slice.set(n, s, b + w * b * lambda)?;
        }
    }
    Ok(())
}

/// Updates the forward entry `(s' | s, a)` and, for moves, the reverse entry
/// `(s | s', opposite(a))`.
pub fn update_transition(
    b: &mut TransitionCounts,
    actions: &ActionSet,
    q_prev: &Categorical,
    q_next: &Categorical,
    action: usize,
    outcome: TransitionOutcome,
) -> Result<()> {
    if action >= b.n_actions() {
        return Err(Error::IndexOutOfRange {
            what: "action",
            index: action,
            len: b.n_actions(),
        });
    }
    let forward = lambda_for(outcome, Direction::Forward);
    update_slice(b.slice_mut(action), q_prev.probs(), q_next.probs(), forward)?;
    if !actions.is_stay(action) {
        let reverse = lambda_for(outcome, Direction::Reverse);
        let opp = actions.opposite(action);
        update_slice(b.slice_mut(opp), q_next.probs(), q_prev.probs(), reverse)?;
    }
    Ok(())
}

/// Adds `amount·q(s)` to `counts[row, s]` for every state in the support.
pub fn reinforce(counts: &mut DirichletCounts, row: usize, q: &Categorical, amount: f64) -> Result<()> {
    if q.len() != counts.cols() {
        return Err(Error::DimensionMismatch {
            expected: counts.cols(),
            found: q.len(),
        });
    }
    for (s, p) in support(q.probs()) {
        if p * amount.abs() >= PAIR_WEIGHT_CUTOFF {
            counts.add(row, s, amount * p)?;
        }
    }
    Ok(())
}

/// Adds `rate` to the count pairing `observation` with `state`.
pub fn reinforce_observation(a_o: &mut DirichletCounts, state: usize, observation: usize, rate: f64) -> Result<()> {
    a_o.add(observation, state, rate).map(|_| ())
}
