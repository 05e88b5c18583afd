use super::pyramid::build_pyramid;
use super::{adam_step, AdamState, OptimConfig};
use crate::error::{Error, Result};
use crate::image::{check_same, Image2D};
use crate::losses::{total_loss, LossBreakdown};
use crate::transform::DisplacementField;

/// Output of [`register_deformable`].
#[derive(Clone, Debug, PartialEq)]
pub struct DeformableOutcome {
    pub field: DisplacementField,
    /// Loss breakdown at every iterate, all levels in order.
    pub trace: Vec<LossBreakdown>,
    /// Loss of the zero field at full resolution.
    pub initial: LossBreakdown,
    /// Loss of the returned field.
    pub best: LossBreakdown,
    pub diverged: bool,
}

fn split(params: &[f64], h: usize, w: usize) -> Result<DisplacementField> {
    let n = h * w;
    DisplacementField::new(h, w, params[..n].to_vec(), params[n..].to_vec())
}

fn flatten(field: &DisplacementField) -> Vec<f64> {
    field.u().iter().chain(field.v()).copied().collect()
}

/// Fits a dense displacement field on top of the frozen affine result by
/// Adam on the total loss, coarse to fine. The field starts at zero on the
/// coarsest level and is upsampled between levels. The best full-resolution
/// iterate is returned; the zero field is always a candidate.
pub fn register_deformable(fixed: &Image2D, m_affine: &Image2D, cfg: &OptimConfig) -> Result<DeformableOutcome> {
    check_same(fixed.dims(), m_affine.dims())?;
    cfg.validate()?;
    let (h, w) = fixed.dims();
    let opts = cfg.loss_options();
    let zero = DisplacementField::zeros(h, w)?;
    let initial = total_loss(fixed, m_affine, &zero, &cfg.weights, &opts)?.breakdown;
    if !initial.total.is_finite() {
        return Err(Error::NonFinite("deformable loss at zero field"));
    }
    let mut outcome = DeformableOutcome {
        field: zero.clone(),
        trace: Vec::new(),
        initial,
        best: initial,
        diverged: false,
    };
    if cfg.field_iters == 0 {
        return Ok(outcome);
    }

    let fixed_pyr = build_pyramid(fixed, &cfg.pyramid_levels)?;
    let moving_pyr = build_pyramid(m_affine, &cfg.pyramid_levels)?;
    let hp = cfg.field_adam();
    let mut best = (initial, zero);
    let mut field: Option<(usize, DisplacementField)> = None;

    'levels: for ((factor, f), (_, m)) in fixed_pyr.iter().zip(&moving_pyr) {
        let (lh, lw) = f.dims();
        let start = match field.take() {
            None => DisplacementField::zeros(lh, lw)?,
            Some((prev, phi)) => phi.upsample(lh, lw, (prev / factor) as f64)?,
        };
        let finest = *factor == 1;
        let mut params = flatten(&start);
        let mut state = AdamState::new(params.len());
        let mut phi = start;
        for it in 0..=cfg.field_iters {
            let t = total_loss(f, m, &phi, &cfg.weights, &opts)?;
            if !t.breakdown.total.is_finite() {
                log::warn!("deformable stage: non-finite loss at level {factor}, iteration {it}");
                outcome.diverged = true;
                break 'levels;
            }
            outcome.trace.push(t.breakdown);
            if finest && t.breakdown.total < best.0.total {
                best = (t.breakdown, phi.clone());
            }
            if it == cfg.field_iters {
                break;
            }
            if adam_step(&mut params, &flatten(&t.grad), &mut state, &hp).is_err() {
                outcome.diverged = true;
                break 'levels;
            }
            phi = match split(&params, lh, lw) {
                Ok(p) => p,
                Err(_) => {
                    outcome.diverged = true;
                    break 'levels;
                }
            };
        }
        log::debug!(
            "deformable stage: level {factor} done, max |phi| = {:.3}",
            phi.max_magnitude()
        );
        field = Some((*factor, phi));
    }

    outcome.best = best.0;
    outcome.field = best.1;
    Ok(outcome)
}
