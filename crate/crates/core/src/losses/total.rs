use serde::{Deserialize, Serialize};

use super::{consistency_loss, joint_loss, smoothness_loss, ConsistencyMetric, LossBreakdown, LossWeights};
use crate::error::{Error, Result};
use crate::image::{check_same, Image2D};
use crate::transform::field::invert_field_vjp;
use crate::transform::warp::{sample_points, warp_adjoint_slice, warp_grad_slice, warp_slice};
use crate::transform::{invert_field, BorderMode, DisplacementField};

/// How the consistency gradient treats the inverse field's dependence on
/// the forward field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseGradient {
    /// Differentiate through both nested samplings of the inverse construction.
    #[default]
    Full,
    /// Treat the inverse field as a constant (straight-through).
    Frozen,
}

impl std::str::FromStr for InverseGradient {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "frozen" | "straight_through" => Ok(Self::Frozen),
            other => Err(Error::InvalidParameter(format!("inverse gradient mode {other:?}"))),
        }
    }
}

/// Estimator and gradient settings shared by every loss evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossOptions {
    pub bins: usize,
    pub kernel_sigma: f64,
    pub consistency: ConsistencyMetric,
    pub inverse_gradient: InverseGradient,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self {
            bins: 32,
            kernel_sigma: 1.0 / 32.0,
            consistency: ConsistencyMetric::Mse,
            inverse_gradient: InverseGradient::Full,
        }
    }
}

/// Output of [`total_loss`].
#[derive(Clone, Debug, PartialEq)]
pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    pub grad: DisplacementField,
    pub registered: Image2D,
    pub inverse_field: DisplacementField,
    pub inverse_image: Image2D,
}

/// Overall deformable objective at field `phi`:
///
/// ```text
/// m_d     = warp(m_affine, phi)
/// phi_inv = invert_field(phi)
/// m_d_inv = warp(m_d, phi_inv)
/// loss    = l1 * SL(phi) + l2 * (-MI(fixed, m_d)) + l3 * BG(fixed, m_d)
///         + l4 * C(m_d_inv, m_affine)
/// ```
///
/// The gradient follows every path to `phi`, including through `m_d` inside
/// the consistency term and (in [`InverseGradient::Full`]) through `phi_inv`.
pub fn total_loss(
    fixed: &Image2D,
    m_affine: &Image2D,
    phi: &DisplacementField,
    weights: &LossWeights,
    opts: &LossOptions,
) -> Result<TotalLoss> {
    check_same(fixed.dims(), m_affine.dims())?;
    check_same(fixed.dims(), phi.dims())?;
    let (h, w) = fixed.dims();
    let n = h * w;

    let fwd_pts = sample_points(phi, 1.0);
    let md = Image2D::from_raw(h, w, warp_slice(m_affine.data(), h, w, &fwd_pts, BorderMode::Zero));
    let psi = invert_field(phi);
    let inv_pts = sample_points(&psi, 1.0);
    let md_inv = Image2D::from_raw(h, w, warp_slice(md.data(), h, w, &inv_pts, BorderMode::Zero));

    let (smooth, smooth_grad) = smoothness_loss(phi)?;
    let jl = joint_loss(
        fixed,
        &md,
        weights.lambda2,
        weights.lambda3,
        weights.gamma,
        opts.bins,
        opts.kernel_sigma,
    )?;
    let cons = consistency_loss(&md_inv, m_affine, opts.consistency)?;
    let breakdown = LossBreakdown::from_terms(weights, jl.mi, jl.background, smooth, cons.value);

    let mut grad = smooth_grad.scaled(weights.lambda1);
    // dL/d(m_d) collects the joint loss and the consistency path through m_d_inv.
    let mut g_md = jl.grad;
    if weights.lambda4 != 0.0 {
        let g_inv: Vec<f64> = cons.grad.iter().map(|g| weights.lambda4 * g).collect();
        let back = warp_adjoint_slice(h, w, &inv_pts, &g_inv, BorderMode::Zero);
        for (a, b) in g_md.iter_mut().zip(back) {
            *a += b;
        }
        if opts.inverse_gradient == InverseGradient::Full {
            let (gu, gv) = warp_grad_slice(md.data(), h, w, &inv_pts, &g_inv, BorderMode::Zero);
            let g_psi = DisplacementField::from_raw(h, w, gu, gv);
            grad.add_assign(&invert_field_vjp(phi, &g_psi));
        }
    }
    debug_assert_eq!(g_md.len(), n);
    let (gu, gv) = warp_grad_slice(m_affine.data(), h, w, &fwd_pts, &g_md, BorderMode::Zero);
    grad.add_assign(&DisplacementField::from_raw(h, w, gu, gv));

    Ok(TotalLoss {
        breakdown,
        grad,
        registered: md,
        inverse_field: psi,
        inverse_image: md_inv,
    })
}
