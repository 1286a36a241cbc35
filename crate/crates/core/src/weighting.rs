//! IRT-based transforms of binary grammatical-item vectors.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::PfVector;
use crate::irt::{irf, AbilityEstimate, ItemParameters};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("feature vector has {features} items but {items} item parameters were given")]
    LengthMismatch { features: usize, items: usize },
    #[error("{0:?} needs a writer ability estimate")]
    MissingAbility(TransformMode),
    #[error("alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("input vector is not binary")]
    NotBinary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformMode {
    /// `g`
    Identity,
    /// `g * b`
    MultiplyB,
    /// `P(theta)`
    Prob,
    /// `g * P(theta)`
    MultiplyProb,
    /// `alpha g + (1 - alpha) P(theta)`
    AddProb,
}

impl TransformMode {
    pub const ALL: [TransformMode; 5] = [
        Self::Identity,
        Self::MultiplyB,
        Self::Prob,
        Self::MultiplyProb,
        Self::AddProb,
    ];

    pub fn needs_ability(self) -> bool {
        matches!(self, Self::Prob | Self::MultiplyProb | Self::AddProb)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::MultiplyB => "multiply_b",
            Self::Prob => "prob",
            Self::MultiplyProb => "multiply_prob",
            Self::AddProb => "add_prob",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub mode: TransformMode,
    pub alpha: f64,
    /// Logistic scaling factor; the calibration value is reused.
    pub d: f64,
}

impl TransformSpec {
    pub fn new(mode: TransformMode) -> Self {
        Self {
            mode,
            alpha: 0.5,
            d: 1.0,
        }
    }
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self::new(TransformMode::Identity)
    }
}

/// Applies `spec` to one writer's binary usage vector. Items dropped from
/// calibration keep `g` under `multiply_b`/`multiply_prob` and use a
/// probability of 0.5 under `prob`/`add_prob`.
pub fn apply_transform(
    g: &PfVector,
    items: &[ItemParameters],
    theta: Option<&AbilityEstimate>,
    spec: &TransformSpec,
) -> Result<Vec<f64>, TransformError> {
    if g.len() != items.len() {
        return Err(TransformError::LengthMismatch {
            features: g.len(),
            items: items.len(),
        });
    }
    if !(0.0..=1.0).contains(&spec.alpha) {
        return Err(TransformError::BadAlpha(spec.alpha));
    }
    if !g.binary || g.values.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(TransformError::NotBinary);
    }
    let theta = match (spec.mode.needs_ability(), theta) {
        (true, None) => return Err(TransformError::MissingAbility(spec.mode)),
        (_, t) => t.map(|t| t.theta),
    };
    let prob = |item: &ItemParameters| match theta {
        Some(t) if item.is_calibrated() => irf(t, item, spec.d),
        _ => 0.5,
    };
    let alpha = spec.alpha;
    Ok(g.values
        .iter()
        .zip(items)
        .map(|(&gj, item)| match spec.mode {
            TransformMode::Identity => gj,
            TransformMode::MultiplyB if item.is_calibrated() => gj * item.b,
            TransformMode::MultiplyB => gj,
            TransformMode::Prob => prob(item),
            TransformMode::MultiplyProb if item.is_calibrated() => gj * prob(item),
            TransformMode::MultiplyProb => gj,
            TransformMode::AddProb => alpha * gj + (1.0 - alpha) * prob(item),
        })
        .collect())
}
