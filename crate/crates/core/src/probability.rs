use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of an ingested vector's sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-4;

/// Vectors whose sum is already this close to 1 are stored unchanged.
const RENORMALIZE_EPS: f64 = 1e-12;

/// Means closer than this are treated as tied when taking an argmax.
pub const TIE_EPS: f64 = 1e-12;

/// One local prediction: a probability per class.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates and renormalizes a raw probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::data(format!(
                "a probability vector needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some((k, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::data(format!("probability {p} of class {k} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::data(format!(
                "probabilities sum to {sum}, outside 1 \u{b1} {SUM_TOLERANCE}"
            )));
        }
        if (sum - 1.0).abs() <= RENORMALIZE_EPS {
            return Ok(Self(probs));
        }
        Ok(Self(probs.into_iter().map(|p| p / sum).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn max_prob(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Most probable class, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for ProbabilityVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        ProbabilityVector::new(raw).map_err(serde::de::Error::custom)
    }
}

impl AsRef<[f64]> for ProbabilityVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest value; values within [`TIE_EPS`] of the maximum are
/// tied and the lowest such index wins.
pub fn argmax(values: &[f64]) -> usize {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .position(|&v| v >= max - TIE_EPS)
        .unwrap_or(0)
}
