//! Registration objectives and their analytic gradients.

mod histogram;
mod terms;
mod total;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use histogram::{mi_loss, mutual_information, JointHistogram, MASS_FLOOR};
pub use terms::{background_mse, consistency_loss, joint_loss, smoothness_loss, ConsistencyMetric, JointLoss};
pub use total::{total_loss, InverseGradient, LossOptions, TotalLoss};

/// Scalar loss with its gradient with respect to one image.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Term weights of the overall objective.
///
/// `lambda1` scales the smoothness term, `lambda2` (alpha) the negated mutual
/// information, `lambda3` (beta) the background prior and `lambda4` the dual
/// consistency term. `gamma` is the intensity below which a fixed-image pixel
/// counts as background.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 4.0,
            lambda3: 100.0,
            lambda4: 100.0,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64, gamma: f64) -> Result<Self> {
        let w = Self {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
            gamma,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.lambda2
    }

    pub fn beta(&self) -> f64 {
        self.lambda3
    }
}

/// Unweighted term values and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mi_term: f64,
    pub background_term: f64,
    pub smooth_term: f64,
    pub consistency_term: f64,
}

impl LossBreakdown {
    pub fn from_terms(w: &LossWeights, mi: f64, background: f64, smooth: f64, consistency: f64) -> Self {
        Self {
            total: w.lambda1 * smooth + w.lambda2 * mi + w.lambda3 * background + w.lambda4 * consistency,
            mi_term: mi,
            background_term: background,
            smooth_term: smooth,
            consistency_term: consistency,
        }
    }

    pub fn weighted_sum(&self, w: &LossWeights) -> f64 {
        w.lambda1 * self.smooth_term
            + w.lambda2 * self.mi_term
            + w.lambda3 * self.background_term
            + w.lambda4 * self.consistency_term
    }

    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.mi_term,
            self.background_term,
            self.smooth_term,
            self.consistency_term,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}
