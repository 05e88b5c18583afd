use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image2D;
use crate::losses::{total_loss, LossOptions, LossWeights};
use crate::transform::DisplacementField;

/// Finite-difference step used by [`gradcheck`].
pub const FD_STEP: f64 = 1e-5;

/// Largest instance side accepted by [`gradcheck`].
pub const MAX_GRADCHECK_SIZE: usize = 16;

/// Agreement between the analytic total-loss gradient and central finite
/// differences over every field entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub size: usize,
    pub entries: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub max_abs_error: f64,
    /// Largest rounding resolution below which differences count as exact.
    pub noise_floor: f64,
    /// Index of the worst entry in `[u..., v...]` order.
    pub worst_index: usize,
}

/// Random test instance: a fixed image with a zero background ring, a
/// differently textured moving image and a field whose fractional parts stay
/// away from the bilinear kinks.
pub fn gradcheck_instance(size: usize, seed: u64) -> Result<(Image2D, Image2D, DisplacementField)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = (size as f64 - 1.0) / 2.0;
    let radius = 0.4 * size as f64;
    let mut blobs = |n: usize| -> Vec<(f64, f64, f64, f64)> {
        (0..n)
            .map(|_| {
                (
                    rng.random_range(0.0..size as f64),
                    rng.random_range(0.0..size as f64),
                    rng.random_range(1.5..0.3 * size as f64 + 2.0),
                    rng.random_range(0.2..0.8),
                )
            })
            .collect()
    };
    let render = |bl: &[(f64, f64, f64, f64)], y: usize, x: usize| -> f64 {
        let s: f64 = bl
            .iter()
            .map(|&(bx, by, r, a)| a * (-((x as f64 - bx).powi(2) + (y as f64 - by).powi(2)) / (2.0 * r * r)).exp())
            .sum();
        0.15 + 0.8 * s.min(1.0)
    };
    let fb = blobs(4);
    let mb = blobs(4);
    let fixed = Image2D::from_fn(size, size, |y, x| {
        let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt();
        if d > radius {
            0.0
        } else {
            render(&fb, y, x)
        }
    })?;
    let moving = Image2D::from_fn(size, size, |y, x| render(&mb, y, x).sqrt())?;
    let entry = |rng: &mut ChaCha8Rng| rng.random_range(-1i32..1) as f64 + rng.random_range(0.05..0.95);
    let n = size * size;
    let u = (0..n).map(|_| entry(&mut rng)).collect();
    let v = (0..n).map(|_| entry(&mut rng)).collect();
    Ok((fixed, moving, DisplacementField::new(size, size, u, v)?))
}

/// Compares the analytic gradient of the total loss with central differences
/// of step [`FD_STEP`] on a random instance.
///
/// The relative error of an entry is `|a - n| / max(|a|, |n|)`. Differences
/// below the rounding resolution of the difference quotient,
/// `4 eps max(|L+|, |L-|, 1) / (2h)`, count as exact.
pub fn gradcheck(size: usize, weights: &LossWeights, opts: &LossOptions, seed: u64) -> Result<GradcheckReport> {
    if !(3..=MAX_GRADCHECK_SIZE).contains(&size) {
        return Err(Error::InvalidParameter(format!(
            "gradcheck size must lie in [3, {MAX_GRADCHECK_SIZE}], got {size}"
        )));
    }
    weights.validate()?;
    let (fixed, moving, phi) = gradcheck_instance(size, seed)?;
    let analytic = total_loss(&fixed, &moving, &phi, weights, opts)?.grad;
    let eval =
        |p: &DisplacementField| -> Result<f64> { Ok(total_loss(&fixed, &moving, p, weights, opts)?.breakdown.total) };

    let n = size * size;
    let mut report = GradcheckReport {
        size,
        entries: 2 * n,
        max_rel_error: 0.0,
        mean_rel_error: 0.0,
        max_abs_error: 0.0,
        noise_floor: 0.0,
        worst_index: 0,
    };
    let mut sum = 0.0;
    for c in 0..2 {
        for i in 0..n {
            let mut plus = phi.clone();
            let mut minus = phi.clone();
            plus.component_mut(c)[i] += FD_STEP;
            minus.component_mut(c)[i] -= FD_STEP;
            let (lp, lm) = (eval(&plus)?, eval(&minus)?);
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic.component(c)[i];
            let abs = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            // Rounding resolution of the difference quotient.
            let noise = 4.0 * f64::EPSILON * lp.abs().max(lm.abs()).max(1.0) / (2.0 * FD_STEP);
            report.noise_floor = report.noise_floor.max(noise);
            let rel = if abs <= noise { 0.0 } else { abs / scale };
            sum += rel;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_index = c * n + i;
            }
        }
    }
    report.mean_rel_error = sum / (2 * n) as f64;
    if !report.max_rel_error.is_finite() {
        return Err(Error::NonFinite("gradcheck"));
    }
    Ok(report)
}
