//! Belief inference over states and position bins.
//!
//! The posterior is computed by exact Bayes on the discrete categoricals, so
//! the KL term of the free energy vanishes and the reported VFE is the
//! negative log evidence `-ln Σ_s prior(s)·L_o(s)·L_p(s)`.
//!
//! Localisation resolves to one of four outcomes depending on how confident
//! the agent is in its motion, its position and its observation match.

use serde::{Deserialize, Serialize};

use crate::categorical::Categorical;
use crate::error::{Error, Result};
use crate::model::GenerativeModel;

/// Dimension to which beliefs are zero-padded before the lost test.
///
/// The z-score of a vector of length `n` never exceeds `sqrt(n - 1)`, so an
/// unpadded test with threshold 4 would report every map with fewer than 17
/// states as lost.
pub const CONFIDENCE_MIN_DIM: usize = 20;

/// Posterior beliefs after one inference step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub q_s: Categorical,
    pub q_p: Categorical,
    pub vfe: f64,
    pub confident: bool,
}

impl BeliefState {
    /// Certain belief in one state and one bin.
    pub fn certain(n_states: usize, state: usize, n_bins: usize, bin: usize) -> Self {
        Self {
            q_s: Categorical::delta(n_states, state),
            q_p: Categorical::delta(n_bins, bin),
            vfe: 0.0,
            confident: true,
        }
    }

    pub fn most_likely_state(&self) -> usize {
        self.q_s.argmax()
    }
}

/// Motion-predicted priors over states and bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub q_s: Categorical,
    pub q_p: Categorical,
}

/// Result of matching the current observation against the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMatch {
    /// Recognised, and it belongs to the state motion predicts.
    KnownAtExpected,
    /// Recognised, but it belongs to some other state.
    KnownElsewhere,
    NoMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalisationOutcome {
    /// Beliefs follow the motion prediction.
    TrustPrediction,
    /// Beliefs (and position) snap to the recognised observation's state.
    TrustPerception,
    /// Neither motion nor perception localises the agent; it re-localises by
    /// seeking familiar observations.
    Lost,
    /// The agent knows where it is but not what it sees: the observation is
    /// added to the believed state.
    NovelObservationAtKnownState,
}

fn pad(values: &[f64], n: usize) -> Vec<f64> {
    let mut v = values.to_vec();
    v.resize(n.max(v.len()), 0.0);
    v
}

fn normalize_or_uniform(weights: Vec<f64>) -> Categorical {
    Categorical::from_weights(weights.clone()).unwrap_or_else(|_| Categorical::uniform(weights.len().max(1)))
}

/// Pushes the previous beliefs through `B_s` and `B_p` under `action`.
///
/// Beliefs shorter than the current model (states or bins added since) are
/// zero-padded first.
pub fn predict_beliefs(model: &GenerativeModel, prev: &BeliefState, action: usize) -> Result<Priors> {
    if action >= model.actions().len() {
        return Err(Error::IndexOutOfRange {
            what: "action",
            index: action,
            len: model.actions().len(),
        });
    }
    let q_s = pad(prev.q_s.probs(), model.n_states());
    let q_p = pad(prev.q_p.probs(), model.n_bins());
    if q_s.len() != model.n_states() || q_p.len() != model.n_bins() {
        return Err(Error::DimensionMismatch {
            expected: model.n_states(),
            found: q_s.len(),
        });
    }
    Ok(Priors {
        q_s: normalize_or_uniform(model.b_s.predict(&q_s, action)),
        q_p: normalize_or_uniform(model.b_p.predict(&q_p, action)),
    })
}

/// `L_o(s) = Σ_o P(o|s)·w(o)` for sparse observation weights.
///
/// With no weights at all the observation is uninformative and every state
/// gets likelihood one.
pub fn observation_likelihood(model: &GenerativeModel, weights: &[(usize, f64)]) -> Vec<f64> {
    let n = model.n_states();
    if weights.iter().all(|(_, w)| *w <= 0.0) {
        return vec![1.0; n];
    }
    (0..n)
        .map(|s| weights.iter().map(|&(o, w)| w * model.a_o.prob(o, s)).sum())
        .collect()
}

/// `L_p(s) = Σ_b P(b|s)·e(b)`.
pub fn position_likelihood(model: &GenerativeModel, evidence: &[f64]) -> Result<Vec<f64>> {
    if evidence.len() != model.n_bins() {
        return Err(Error::DimensionMismatch {
            expected: model.n_bins(),
            found: evidence.len(),
        });
    }
    let total: f64 = evidence.iter().sum();
    Ok((0..model.n_states())
        .map(|s| {
            let sum = model.a_p.column_sum(s);
            let mut l = total * crate::counts::COUNT_FLOOR / sum;
            for (b, v) in model.a_p.explicit(s) {
                l += evidence[b] * (v - crate::counts::COUNT_FLOOR) / sum;
            }
            l
        })
        .collect())
}

/// Isotropic Gaussian evidence over existing bins centred on `(x, y)`.
pub fn gaussian_position_evidence(model: &GenerativeModel, x: f64, y: f64, sigma: f64) -> Vec<f64> {
    (0..model.n_bins())
        .map(|b| {
            let (bx, by) = model.bins.center(b);
            let d2 = (bx - x).powi(2) + (by - y).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Spreads a position belief with a Gaussian kernel of width `sigma` over
/// bin centres, modelling motion noise. A non-positive width is a no-op.
pub fn blur_positions(model: &GenerativeModel, q_p: &Categorical, sigma: f64) -> Categorical {
    if !(sigma > 0.0) {
        return q_p.clone();
    }
    let centers: Vec<(f64, f64)> = (0..model.n_bins()).map(|b| model.bins.center(b)).collect();
    let mut out = vec![0.0; centers.len()];
    for (from, &p) in q_p.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let (fx, fy) = centers[from];
        for (to, &(tx, ty)) in centers.iter().enumerate() {
            let d2 = (tx - fx).powi(2) + (ty - fy).powi(2);
            out[to] += p * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    Categorical::from_weights(out).unwrap_or_else(|_| q_p.clone())
}

/// Exact posterior given priors, an observation likelihood per state and
/// position evidence per bin.
///
/// All-zero joint evidence leaves the priors in place and marks the belief
/// as not confident.
pub fn posterior_update(
    model: &GenerativeModel,
    priors: &Priors,
    obs_likelihood: &[f64],
    pos_evidence: &[f64],
    zscore_threshold: f64,
) -> Result<BeliefState> {
    let n = model.n_states();
    if priors.q_s.len() != n || obs_likelihood.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: obs_likelihood.len().min(priors.q_s.len()),
        });
    }
    if pos_evidence.len() != priors.q_p.len() {
        return Err(Error::DimensionMismatch {
            expected: priors.q_p.len(),
            found: pos_evidence.len(),
        });
    }
    if obs_likelihood.iter().chain(pos_evidence).any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidDistribution("evidence must be non-negative".into()));
    }
    let l_p = position_likelihood(model, pos_evidence)?;

    let q_p_weights: Vec<f64> = priors.q_p.probs().iter().zip(pos_evidence).map(|(p, e)| p * e).collect();
    let q_p = Categorical::from_weights(q_p_weights).unwrap_or_else(|_| priors.q_p.clone());

    let joint: Vec<f64> = (0..n)
        .map(|s| priors.q_s.get(s) * obs_likelihood[s] * l_p[s])
        .collect();
    let evidence: f64 = joint.iter().sum();
    if !(evidence > 0.0 && evidence.is_finite()) {
        return Ok(BeliefState {
            q_s: priors.q_s.clone(),
            q_p,
            vfe: f64::INFINITY,
            confident: false,
        });
    }
    let q_s = Categorical::from_weights(joint)?;
    let confident = is_confident(&q_s, zscore_threshold);
    Ok(BeliefState {
        q_s,
        q_p,
        vfe: -evidence.ln(),
        confident,
    })
}

/// `(max - mean) / std` of a probability vector, population std.
///
/// Returns 0 for uniform vectors and for vectors shorter than two.
pub fn zscore_confidence(q: &Categorical) -> f64 {
    zscore_slice(q.probs())
}

fn zscore_slice(p: &[f64]) -> f64 {
    if p.len() < 2 {
        return 0.0;
    }
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-15 {
        return 0.0;
    }
    let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (max - mean) / std
}

/// Lost test: z-score of the belief, zero-padded to [`CONFIDENCE_MIN_DIM`].
pub fn is_confident(q: &Categorical, threshold: f64) -> bool {
    zscore_confidence(&q.padded(CONFIDENCE_MIN_DIM)) >= threshold - 1e-9
}

/// Four-way localisation decision.
///
/// | observation        | motion conf. | position conf. | outcome                         |
/// |--------------------|--------------|----------------|---------------------------------|
/// | known at expected  | any          | any            | `TrustPrediction`               |
/// | known elsewhere    | high         | any            | `TrustPrediction`               |
/// | known elsewhere    | low          | any            | `TrustPerception`               |
/// | no match           | any          | high           | `NovelObservationAtKnownState`  |
/// | no match           | any          | low            | `Lost`                          |
pub fn resolve_localisation(
    motion_confident: bool,
    obs_match: ObservationMatch,
    position_confident: bool,
) -> LocalisationOutcome {
    use LocalisationOutcome::*;
    match (obs_match, motion_confident, position_confident) {
        (ObservationMatch::KnownAtExpected, _, _) => TrustPrediction,
        (ObservationMatch::KnownElsewhere, true, _) => TrustPrediction,
        (ObservationMatch::KnownElsewhere, false, _) => TrustPerception,
        (ObservationMatch::NoMatch, _, true) => NovelObservationAtKnownState,
        (ObservationMatch::NoMatch, _, false) => Lost,
    }
}

/// Everything the agent needs from one localisation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Localisation {
    pub belief: BeliefState,
    pub outcome: LocalisationOutcome,
    pub motion_confident: bool,
    pub position_confident: bool,
    /// State predicted by motion and position alone.
    pub expected_state: usize,
}

/// Inputs describing the sensed observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationEvidence {
    /// Weights over stored observations (empty when nothing was recognised).
    pub weights: Vec<(usize, f64)>,
    /// State owning the best-matching observation, if any.
    pub matched_state: Option<usize>,
}

/// Full localisation step: predict, weigh position and observation evidence,
/// then resolve the outcome and shape the final beliefs accordingly.
///
/// When motion is not confident the transition prior is replaced by a
/// uniform prior over states.
pub fn localise(
    model: &GenerativeModel,
    prev: &BeliefState,
    action: usize,
    observation: &ObservationEvidence,
    pos_evidence: &[f64],
    motion_sigma: f64,
    zscore_threshold: f64,
) -> Result<Localisation> {
    let mut priors = predict_beliefs(model, prev, action)?;
    priors.q_p = blur_positions(model, &priors.q_p, motion_sigma);
    let n = model.n_states();

    let q_p_post = Categorical::from_weights(
        priors.q_p.probs().iter().zip(pos_evidence).map(|(p, e)| p * e).collect(),
    )
    .unwrap_or_else(|_| priors.q_p.clone());
    let motion_confident = is_confident(&q_p_post, zscore_threshold);
    if !motion_confident {
        priors.q_s = Categorical::uniform(n);
    }

    let flat = vec![1.0; n];
    let motion_only = posterior_update(model, &priors, &flat, pos_evidence, zscore_threshold)?;
    let expected_state = motion_only.q_s.argmax();
    let position_confident = motion_only.confident;

    let obs_match = match observation.matched_state {
        None => ObservationMatch::NoMatch,
        Some(s) if s == expected_state => ObservationMatch::KnownAtExpected,
        Some(_) => ObservationMatch::KnownElsewhere,
    };
    let outcome = resolve_localisation(motion_confident, obs_match, position_confident);

    let l_o = observation_likelihood(model, &observation.weights);
    let belief = match outcome {
        LocalisationOutcome::TrustPrediction if obs_match == ObservationMatch::KnownAtExpected => {
            posterior_update(model, &priors, &l_o, pos_evidence, zscore_threshold)?
        }
        LocalisationOutcome::TrustPrediction | LocalisationOutcome::NovelObservationAtKnownState => motion_only,
        LocalisationOutcome::TrustPerception => {
            let matched = observation.matched_state.expect("known elsewhere has a state");
            let flat_priors = Priors {
                q_s: Categorical::uniform(n),
                q_p: priors.q_p.clone(),
            };
            let flat_pos = vec![1.0; pos_evidence.len()];
            let mut b = posterior_update(model, &flat_priors, &l_o, &flat_pos, zscore_threshold)?;
            if let Some(bin) = model.state_bin(matched) {
                b.q_p = Categorical::delta(model.n_bins(), bin);
            }
            b
        }
        LocalisationOutcome::Lost => {
            let mut b = posterior_update(model, &priors, &l_o, pos_evidence, zscore_threshold)?;
            b.confident = false;
            b
        }
    };
    Ok(Localisation {
        belief,
        outcome,
        motion_confident,
        position_confident,
        expected_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ActionSet;

    /// Two states at x = 0 and x = 1 with one observation each and an edge
    /// 0 -> 1 under action 0.
    fn two_state_model() -> GenerativeModel {
        let mut m = GenerativeModel::new(ActionSet::new(13).unwrap(), 0.5);
        let s0 = m.expand_state_dim(0.25, 0.25);
        let s1 = m.expand_state_dim(1.25, 0.25);
        m.expand_observation_dim(s0).unwrap();
        m.expand_observation_dim(s1).unwrap();
        m.b_s.slice_mut(0).set(s1, s0, 10.0).unwrap();
        m.b_s.slice_mut(6).set(s0, s1, 10.0).unwrap();
        m
    }

    fn belief_at(m: &GenerativeModel, s: usize) -> BeliefState {
        let bin = m.state_bin(s).unwrap();
        BeliefState::certain(m.n_states(), s, m.n_bins(), bin)
    }

    #[test]
    fn stay_keeps_beliefs() {
        let m = two_state_model();
        let prev = belief_at(&m, 1);
        let pri = predict_beliefs(&m, &prev, 12).unwrap();
        assert!(pri.q_s.get(1) > 0.99);
    }

    #[test]
    fn deterministic_chain_moves_delta() {
        let m = two_state_model();
        let pri = predict_beliefs(&m, &belief_at(&m, 0), 0).unwrap();
        assert_eq!(pri.q_s.argmax(), 1);
        assert!(pri.q_s.get(1) > 0.999);
    }

    #[test]
    fn predict_rejects_bad_action() {
        let m = two_state_model();
        assert!(predict_beliefs(&m, &belief_at(&m, 0), 13).is_err());
    }

    #[test]
    fn uniform_evidence_is_identity() {
        let m = two_state_model();
        let priors = Priors {
            q_s: Categorical::new(vec![0.3, 0.7]).unwrap(),
            q_p: Categorical::uniform(m.n_bins()),
        };
        let b = posterior_update(&m, &priors, &[1.0, 1.0], &vec![1.0; m.n_bins()], 4.0).unwrap();
        for s in 0..2 {
            assert!((b.q_s.get(s) - priors.q_s.get(s)).abs() < 1e-12);
        }
        assert!(b.vfe.abs() < 1e-12);
    }

    #[test]
    fn hand_bayes_example() {
        let m = two_state_model();
        let priors = Priors {
            q_s: Categorical::uniform(2),
            q_p: Categorical::uniform(m.n_bins()),
        };
        let b = posterior_update(&m, &priors, &[0.9, 0.1], &vec![1.0; m.n_bins()], 4.0).unwrap();
        assert!((b.q_s.get(0) - 0.9).abs() < 1e-9);
        assert!((b.q_s.get(1) - 0.1).abs() < 1e-9);
        assert!((b.vfe - -(0.5f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn zero_evidence_returns_prior_unconfident() {
        let m = two_state_model();
        let priors = Priors {
            q_s: Categorical::delta(2, 0),
            q_p: Categorical::uniform(m.n_bins()),
        };
        let b = posterior_update(&m, &priors, &[0.0, 0.0], &vec![1.0; m.n_bins()], 4.0).unwrap();
        assert_eq!(b.q_s, priors.q_s);
        assert!(!b.confident);
    }

    #[test]
    fn consistent_delta_evidence_minimises_vfe() {
        let m = two_state_model();
        let priors = Priors {
            q_s: Categorical::delta(2, 0),
            q_p: Categorical::uniform(m.n_bins()),
        };
        let flat = vec![1.0; m.n_bins()];
        let agree = posterior_update(&m, &priors, &[1.0, 0.01], &flat, 4.0).unwrap();
        let disagree = posterior_update(&m, &priors, &[0.01, 1.0], &flat, 4.0).unwrap();
        assert_eq!(agree.q_s.argmax(), 0);
        assert!(agree.vfe < disagree.vfe);
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore_confidence(&Categorical::uniform(10)), 0.0);
        let mut v = vec![0.01 / 9.0; 10];
        v[0] = 0.99;
        let z = zscore_confidence(&Categorical::new(v).unwrap());
        assert!((z - 3.0).abs() < 1e-6, "{z}");
        let mut v = vec![0.1 / 99.0; 100];
        v[0] = 0.9;
        let z = zscore_confidence(&Categorical::new(v).unwrap());
        assert!((z - 9.95).abs() < 0.01, "{z}");
    }

    #[test]
    fn resolve_table_is_total() {
        use LocalisationOutcome::*;
        use ObservationMatch::*;
        for motion in [false, true] {
            for pos in [false, true] {
                assert_eq!(resolve_localisation(motion, KnownAtExpected, pos), TrustPrediction);
                assert_eq!(
                    resolve_localisation(motion, KnownElsewhere, pos),
                    if motion { TrustPrediction } else { TrustPerception }
                );
                assert_eq!(
                    resolve_localisation(motion, NoMatch, pos),
                    if pos { NovelObservationAtKnownState } else { Lost }
                );
            }
        }
    }
}
