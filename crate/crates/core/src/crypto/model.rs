use serde::{Deserialize, Serialize};

use super::CryptoError;
use crate::codec::{Digest, Encoder};
use crate::ParticipantId;

/// A toy linear model `y = weights . x + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub version: u64,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lineage_parent: Option<ParticipantId>,
}

impl ModelWeights {
    pub fn new(version: u64, weights: Vec<f64>, bias: f64) -> Self {
        Self {
            version,
            weights,
            bias,
            lineage_parent: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn apply(&self, input: &[f64]) -> Result<f64, CryptoError> {
        linear_apply(&self.weights, self.bias, input)
    }

    /// One deterministic training step: every parameter moves a fraction
    /// `step` of the way toward `target`. The version advances by one.
    pub fn trained_toward(&self, target: &ModelWeights, step: f64) -> ModelWeights {
        let weights = self
            .weights
            .iter()
            .zip(&target.weights)
            .map(|(w, t)| w + step * (t - w))
            .collect();
        ModelWeights {
            version: self.version + 1,
            weights,
            bias: self.bias + step * (target.bias - self.bias),
            lineage_parent: self.lineage_parent,
        }
    }

    pub(crate) fn encode_parameters(&self, e: &mut Encoder) {
        e.f64s(&self.weights).f64(self.bias);
    }
}

pub(crate) fn linear_apply(weights: &[f64], bias: f64, input: &[f64]) -> Result<f64, CryptoError> {
    if weights.len() != input.len() {
        return Err(CryptoError::DimensionMismatch {
            expected: weights.len(),
            got: input.len(),
        });
    }
    Ok(weights.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias)
}

/// Digest over the model parameters (weights and bias). Version and lineage
/// are metadata and do not enter the digest.
pub fn model_digest(m: &ModelWeights) -> Result<Digest, CryptoError> {
    if let Some(i) = m.weights.iter().position(|w| !w.is_finite()) {
        return Err(CryptoError::NonFiniteWeight(i));
    }
    if !m.bias.is_finite() {
        return Err(CryptoError::NonFiniteWeight(m.weights.len()));
    }
    let mut e = Encoder::new();
    e.raw(b"model/v1");
    m.encode_parameters(&mut e);
    Ok(Digest::of(e.as_slice()))
}
