use super::{register_affine, register_deformable, OptimConfig};
use crate::error::Result;
use crate::image::{check_same, Image2D};
use crate::losses::LossBreakdown;
use crate::transform::{invert_field, warp, AffineParams, BorderMode, DisplacementField};

/// Everything produced by a two-stage registration.
#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationResult {
    pub affine: AffineParams,
    /// Dense field applied after the affine warp, full resolution.
    pub field: DisplacementField,
    pub m_affine: Image2D,
    /// `warp(m_affine, field)`.
    pub m_registered: Image2D,
    /// `warp(m_registered, invert_field(field))`.
    pub m_inverse: Image2D,
    /// Affine-stage joint loss per iterate.
    pub affine_trace: Vec<LossBreakdown>,
    /// Deformable-stage total loss per iterate.
    pub loss_trace: Vec<LossBreakdown>,
    /// Total loss of the returned field.
    pub final_loss: LossBreakdown,
    /// Diagnostics such as `affine_diverged`.
    pub flags: Vec<String>,
}

/// Affine stage, then the deformable stage on its frozen output.
pub fn register_pipeline(fixed: &Image2D, moving: &Image2D, cfg: &OptimConfig) -> Result<RegistrationResult> {
    check_same(fixed.dims(), moving.dims())?;
    cfg.validate()?;
    let mut flags = Vec::new();

    let aff = register_affine(fixed, moving, cfg).map_err(|e| e.in_stage("affine stage"))?;
    if aff.diverged {
        flags.push("affine_diverged".to_string());
    }
    let def = register_deformable(fixed, &aff.m_affine, cfg).map_err(|e| e.in_stage("deformable stage"))?;
    if def.diverged {
        flags.push("deformable_diverged".to_string());
    }

    let m_registered = warp(&aff.m_affine, &def.field, BorderMode::Zero)?;
    let m_inverse = warp(&m_registered, &invert_field(&def.field), BorderMode::Zero)?;
    Ok(RegistrationResult {
        affine: aff.params,
        field: def.field,
        m_affine: aff.m_affine,
        m_registered,
        m_inverse,
        affine_trace: aff.trace,
        loss_trace: def.trace,
        final_loss: def.best,
        flags,
    })
}
