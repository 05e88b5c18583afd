use serde::{Deserialize, Serialize};

use super::{mi_loss, LossValue};
use crate::error::{Error, Result};
use crate::image::{check_dims, check_same, Image2D};
use crate::transform::DisplacementField;

/// Summed squared error over fixed-image background pixels (`fixed < gamma`).
/// The gradient is taken with respect to `registered`.
pub fn background_mse(fixed: &Image2D, registered: &Image2D, gamma: f64) -> Result<LossValue> {
    check_same(fixed.dims(), registered.dims())?;
    let mut value = 0.0;
    let grad = fixed
        .data()
        .iter()
        .zip(registered.data())
        .map(|(&f, &r)| {
            if f < gamma {
                let d = f - r;
                value += d * d;
                -2.0 * d
            } else {
                0.0
            }
        })
        .collect();
    Ok(LossValue { value, grad })
}

/// Components of the prior-knowledge joint loss.
#[derive(Clone, Debug, PartialEq)]
pub struct JointLoss {
    /// `alpha * mi + beta * background`.
    pub value: f64,
    pub mi: f64,
    pub background: f64,
    pub grad: Vec<f64>,
}

/// `alpha * (-MI(fixed, registered)) + beta * background_mse(fixed, registered)`.
pub fn joint_loss(
    fixed: &Image2D,
    registered: &Image2D,
    alpha: f64,
    beta: f64,
    gamma: f64,
    bins: usize,
    kernel_sigma: f64,
) -> Result<JointLoss> {
    let mi = mi_loss(fixed, registered, bins, kernel_sigma)?;
    let bg = background_mse(fixed, registered, gamma)?;
    let grad = mi
        .grad
        .iter()
        .zip(&bg.grad)
        .map(|(a, b)| alpha * a + beta * b)
        .collect();
    Ok(JointLoss {
        value: alpha * mi.value + beta * bg.value,
        mi: mi.value,
        background: bg.value,
        grad,
    })
}

/// Sum of squared forward differences of both field components along x and
/// y. Differences that would step off the last row or column are omitted.
pub fn smoothness_loss(phi: &DisplacementField) -> Result<(f64, DisplacementField)> {
    let (h, w) = phi.dims();
    check_dims("field for smoothness", h, w, 2)?;
    let mut value = 0.0;
    let mut grad = DisplacementField::zeros(h, w)?;
    for c in 0..2 {
        let d = phi.component(c);
        let g = grad.component_mut(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let diff = d[i + 1] - d[i];
                    value += diff * diff;
                    g[i + 1] += 2.0 * diff;
                    g[i] -= 2.0 * diff;
                }
                if y + 1 < h {
                    let diff = d[i + w] - d[i];
                    value += diff * diff;
                    g[i + w] += 2.0 * diff;
                    g[i] -= 2.0 * diff;
                }
            }
        }
    }
    Ok((value, grad))
}

/// Similarity used between the back-warped prediction and the affine result.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyMetric {
    /// Mean squared error over pixels.
    #[default]
    Mse,
    /// `1 - NCC` with global normalized cross-correlation.
    Ncc,
}

impl std::str::FromStr for ConsistencyMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "ncc" => Ok(Self::Ncc),
            other => Err(Error::InvalidParameter(format!("consistency metric {other:?}"))),
        }
    }
}

/// Dual consistency loss between `m_inv` and `m_affine`; the gradient is
/// with respect to `m_inv`.
pub fn consistency_loss(m_inv: &Image2D, m_affine: &Image2D, metric: ConsistencyMetric) -> Result<LossValue> {
    check_same(m_inv.dims(), m_affine.dims())?;
    let n = m_inv.len() as f64;
    match metric {
        ConsistencyMetric::Mse => {
            let mut value = 0.0;
            let grad = m_inv
                .data()
                .iter()
                .zip(m_affine.data())
                .map(|(&a, &b)| {
                    let d = a - b;
                    value += d * d;
                    2.0 * d / n
                })
                .collect();
            Ok(LossValue { value: value / n, grad })
        }
        ConsistencyMetric::Ncc => {
            let (ma, mb) = (m_inv.mean(), m_affine.mean());
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for (&a, &b) in m_inv.data().iter().zip(m_affine.data()) {
                sab += (a - ma) * (b - mb);
                saa += (a - ma) * (a - ma);
                sbb += (b - mb) * (b - mb);
            }
            let denom = (saa * sbb).sqrt();
            if denom < 1e-12 {
                return Ok(LossValue {
                    value: 1.0,
                    grad: vec![0.0; m_inv.len()],
                });
            }
            let ncc = sab / denom;
            let grad = m_inv
                .data()
                .iter()
                .zip(m_affine.data())
                .map(|(&a, &b)| -((b - mb) / denom - ncc * (a - ma) / saa))
                .collect();
            Ok(LossValue { value: 1.0 - ncc, grad })
        }
    }
}
