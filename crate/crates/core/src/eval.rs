//! Lesion overlap scores and registration reports.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::{check_same, Mask2D};
use crate::losses::LossBreakdown;
use crate::optim::RegistrationResult;
use crate::transform::{folding_count, warp, AffineParams, BorderMode, DisplacementField};

/// Pixel overlap between a predicted mask and a reference mask.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapScores {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Set when at least one denominator was zero.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize, both_empty: bool, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Dice, precision and recall of `predicted` with `reference` as ground truth.
///
/// A zero denominator scores 1 when both masks are empty and 0 otherwise,
/// and sets `degenerate`.
pub fn overlap(predicted: &Mask2D, reference: &Mask2D) -> Result<OverlapScores> {
    check_same(reference.dims(), predicted.dims())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &r) in predicted.data().iter().zip(reference.data()) {
        match (p, r) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let both_empty = tp + fp + fn_ == 0;
    let mut degenerate = false;
    Ok(OverlapScores {
        dice: ratio(2 * tp, 2 * tp + fp + fn_, both_empty, &mut degenerate),
        precision: ratio(tp, tp + fp, both_empty, &mut degenerate),
        recall: ratio(tp, tp + fn_, both_empty, &mut degenerate),
        tp,
        fp,
        fn_,
        degenerate,
    })
}

/// Carries a mask through the affine warp and then the dense warp with
/// bilinear weights and a zero border, keeping values strictly above 0.5.
pub fn warp_mask(mask: &Mask2D, affine: &AffineParams, field: &DisplacementField) -> Result<Mask2D> {
    let (h, w) = mask.dims();
    check_same((h, w), field.dims())?;
    if affine.is_identity() && field.u().iter().chain(field.v()).all(|&d| d == 0.0) {
        return Ok(mask.clone());
    }
    let img = mask.to_image();
    let img = if affine.is_identity() {
        img
    } else {
        warp(&img, &affine.to_field(h, w)?, BorderMode::Zero)?
    };
    let img = warp(&img, field, BorderMode::Zero)?;
    Ok(Mask2D::from_image_threshold(&img, 0.5))
}

/// Overlap before registration, after the affine stage and after the full
/// pipeline, with field diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub undef: Option<OverlapScores>,
    pub affine: Option<OverlapScores>,
    pub full: Option<OverlapScores>,
    pub folding: usize,
    pub loss: LossBreakdown,
    pub flags: Vec<String>,
}

impl RegistrationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Builds the report of a registration. Overlap scores need both masks;
/// the fixed-image mask is the reference.
pub fn evaluate_registration(
    result: &RegistrationResult,
    moving_mask: Option<&Mask2D>,
    fixed_mask: Option<&Mask2D>,
) -> Result<RegistrationReport> {
    let folding = if result.field.height() >= 3 && result.field.width() >= 3 {
        folding_count(&result.field)?.count
    } else {
        0
    };
    let (undef, affine, full) = match (moving_mask, fixed_mask) {
        (Some(mm), Some(fm)) => {
            check_same(result.m_affine.dims(), mm.dims())?;
            let (h, w) = mm.dims();
            let zero = DisplacementField::zeros(h, w)?;
            (
                Some(overlap(mm, fm)?),
                Some(overlap(&warp_mask(mm, &result.affine, &zero)?, fm)?),
                Some(overlap(&warp_mask(mm, &result.affine, &result.field)?, fm)?),
            )
        }
        _ => (None, None, None),
    };
    Ok(RegistrationReport {
        undef,
        affine,
        full,
        folding,
        loss: result.final_loss,
        flags: result.flags.clone(),
    })
}
