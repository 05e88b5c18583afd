use super::pyramid::build_pyramid;
use super::{adam_step, AdamState, OptimConfig};
use crate::error::{Error, Result};
use crate::image::{check_same, Image2D};
use crate::losses::{joint_loss, LossBreakdown};
use crate::transform::{warp, warp_grad, AffineParams, BorderMode};

/// Output of [`register_affine`].
#[derive(Clone, Debug, PartialEq)]
pub struct AffineOutcome {
    pub params: AffineParams,
    /// The moving image warped by `params`.
    pub m_affine: Image2D,
    /// Joint-loss breakdown at every iterate, all levels in order.
    pub trace: Vec<LossBreakdown>,
    /// Loss of the identity transform at full resolution.
    pub initial_loss: f64,
    /// Loss of the returned parameters at full resolution.
    pub best_loss: f64,
    pub diverged: bool,
}

/// Joint loss of `warp(moving, theta)` against `fixed` and its gradient with
/// respect to the six parameters.
pub fn affine_objective(
    fixed: &Image2D,
    moving: &Image2D,
    params: &AffineParams,
    cfg: &OptimConfig,
) -> Result<(LossBreakdown, [f64; 6])> {
    let (h, w) = fixed.dims();
    let field = params.to_field(h, w)?;
    let warped = warp(moving, &field, BorderMode::Zero)?;
    let wts = &cfg.weights;
    let jl = joint_loss(
        fixed,
        &warped,
        wts.lambda2,
        wts.lambda3,
        wts.gamma,
        cfg.bins,
        cfg.kernel_sigma,
    )?;
    let breakdown = LossBreakdown::from_terms(wts, jl.mi, jl.background, 0.0, 0.0);
    let field_grad = warp_grad(moving, &field, &jl.grad, BorderMode::Zero)?;
    Ok((breakdown, AffineParams::grad_from_field(&field_grad)))
}

/// Fits an affine transform from identity by Adam on the joint loss, coarse
/// to fine. Parameters live in normalized coordinates and carry over between
/// levels unchanged. The best full-resolution iterate is returned; identity
/// is always a candidate.
pub fn register_affine(fixed: &Image2D, moving: &Image2D, cfg: &OptimConfig) -> Result<AffineOutcome> {
    check_same(fixed.dims(), moving.dims())?;
    cfg.validate()?;
    let (h, w) = fixed.dims();
    let identity = AffineParams::identity();
    let initial = affine_objective(fixed, moving, &identity, cfg)?.0.total;
    if !initial.is_finite() {
        return Err(Error::NonFinite("affine loss at identity"));
    }
    let mut outcome = AffineOutcome {
        params: identity,
        m_affine: moving.clone(),
        trace: Vec::new(),
        initial_loss: initial,
        best_loss: initial,
        diverged: false,
    };
    if cfg.affine_iters == 0 {
        return Ok(outcome);
    }

    let fixed_pyr = build_pyramid(fixed, &cfg.pyramid_levels)?;
    let moving_pyr = build_pyramid(moving, &cfg.pyramid_levels)?;
    let hp = cfg.affine_adam();
    let mut theta = identity.theta;
    let mut best = (initial, identity);

    'levels: for ((factor, f), (_, m)) in fixed_pyr.iter().zip(&moving_pyr) {
        let finest = *factor == 1;
        let mut state = AdamState::new(6);
        for it in 0..=cfg.affine_iters {
            let params = AffineParams { theta };
            let (bd, grad) = affine_objective(f, m, &params, cfg)?;
            if !bd.total.is_finite() {
                log::warn!("affine stage: non-finite loss at level {factor}, iteration {it}");
                outcome.diverged = true;
                break 'levels;
            }
            outcome.trace.push(bd);
            if finest && bd.total < best.0 {
                best = (bd.total, params);
            }
            if it == cfg.affine_iters {
                break;
            }
            if adam_step(&mut theta, &grad, &mut state, &hp).is_err() {
                outcome.diverged = true;
                break 'levels;
            }
        }
        log::debug!("affine stage: level {factor} done, theta = {theta:?}");
    }

    outcome.params = best.1;
    outcome.best_loss = best.0;
    outcome.m_affine = if best.1.is_identity() {
        moving.clone()
    } else {
        warp(moving, &best.1.to_field(h, w)?, BorderMode::Zero)?
    };
    Ok(outcome)
}
