//! Categorical distributions and the information-theoretic primitives used
//! throughout inference and planning.
//!
//! Both [`entropy`] and [`kl_divergence`] follow the `0 · ln 0 = 0` convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a categorical's entries.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Validates `probs` as-is. Use [`Categorical::from_weights`] to normalize.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("dimension must be at least 1".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {bad} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("dimension must be at least 1".into()));
        }
        if let Some(bad) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidDistribution(format!("weight {bad} is negative or not finite")));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvariantViolation("weights sum to zero".into()));
        }
        let probs = weights.into_iter().map(|w| w / sum).collect();
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform categorical needs at least one entry");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn delta(n: usize, index: usize) -> Self {
        assert!(index < n, "delta index {index} out of range {n}");
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probs.get(index).copied().unwrap_or(0.0)
    }

    /// Appends zero-probability entries up to `n`.
    pub fn padded(&self, n: usize) -> Self {
        let mut probs = self.probs.clone();
        if probs.len() < n {
            probs.resize(n, 0.0);
        }
        Self { probs }
    }
}

impl TryFrom<Vec<f64>> for Categorical {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Categorical::new(value)
    }
}

impl From<Categorical> for Vec<f64> {
    fn from(value: Categorical) -> Self {
        value.probs
    }
}

/// Lowest index of the maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `KL(q ‖ p) = Σ q ln(q/p)`.
///
/// Returns `+∞` when `p` is zero somewhere `q` is not.
pub fn kl_divergence(q: &Categorical, p: &Categorical) -> Result<f64> {
    kl_slices(q.probs(), p.probs())
}

pub(crate) fn kl_slices(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            found: p.len(),
        });
    }
    let mut kl = 0.0;
    for (&qi, &pi) in q.iter().zip(p) {
        if qi > 0.0 {
            if pi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += qi * (qi / pi).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Shannon entropy in nats.
pub fn entropy(p: &Categorical) -> f64 {
    entropy_slice(p.probs())
}

pub(crate) fn entropy_slice(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}
