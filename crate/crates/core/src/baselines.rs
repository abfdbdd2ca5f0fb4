//! Reference defenses sharing the split training loop: plain split
//! learning, Max Norm gradient noise, and the single-component ablations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::FeaturePartition;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::trainer::{train, GafmConfig, SplitModel, TrainOutput, CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    Gafm,
    Vanilla,
    MaxNorm,
    GanOnly,
    PenaltyOnly,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Gafm,
        MethodKind::Vanilla,
        MethodKind::MaxNorm,
        MethodKind::GanOnly,
        MethodKind::PenaltyOnly,
    ];

    /// Whether predictions pass through the active party's generator.
    pub fn uses_generator(self) -> bool {
        matches!(self, MethodKind::Gafm | MethodKind::GanOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Gafm => "gafm",
            MethodKind::Vanilla => "vanilla",
            MethodKind::MaxNorm => "maxnorm",
            MethodKind::GanOnly => "gan_only",
            MethodKind::PenaltyOnly => "penalty_only",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .or(match key.as_str() {
                "max_norm" => Some(MethodKind::MaxNorm),
                "gan" | "ganonly" => Some(MethodKind::GanOnly),
                "penalty" | "penaltyonly" => Some(MethodKind::PenaltyOnly),
                "splitnn" => Some(MethodKind::Vanilla),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// Per-example gradient of batch-mean binary cross entropy against the true labels.
pub fn vanilla_cut_gradient(y_tilde: &[f64], labels: &[u8]) -> Vec<f64> {
    let n = y_tilde.len() as f64;
    y_tilde
        .iter()
        .zip(labels)
        .map(|(&y, &l)| {
            let y = y.clamp(CLAMP, 1.0 - CLAMP);
            (y - f64::from(l)) / (n * y * (1.0 - y))
        })
        .collect()
}

/// Noise scale for each example: `sqrt(max_j g_j^2 / g_i^2 - 1)`, zero for zero gradients.
pub fn max_norm_sigmas(grads: &[f64]) -> Vec<f64> {
    let max_sq = grads.iter().fold(0.0f64, |m, g| m.max(g * g));
    grads
        .iter()
        .map(|&g| {
            if g == 0.0 {
                0.0
            } else {
                (max_sq / (g * g) - 1.0).max(0.0).sqrt()
            }
        })
        .collect()
}

/// Max Norm perturbation `g (1 + zeta)`, `zeta ~ N(0, sigma^2)`, which lifts every
/// example's expected squared gradient to the batch maximum.
pub fn max_norm_perturb<R: Rng + ?Sized>(grads: &[f64], rng: &mut R) -> Vec<f64> {
    max_norm_sigmas(grads)
        .into_iter()
        .zip(grads)
        .map(|(s, &g)| {
            let z: f64 = StandardNormal.sample(rng);
            g * (1.0 + s * z)
        })
        .collect()
}

/// Initializes and trains one method on a training split.
pub fn run_baseline(
    kind: MethodKind,
    train_features: &Matrix<f64>,
    labels: Vec<u8>,
    partition: &FeaturePartition,
    config: &GafmConfig,
) -> Result<(SplitModel, TrainOutput)> {
    let mut model = SplitModel::init(kind, train_features, labels, partition, config)?;
    let out = train(&mut model, config)?;
    Ok((model, out))
}
