//! Coarse-to-fine multi-contrast 2D image registration.
//!
//! A moving image is first aligned to a fixed image with a global affine
//! transform, then refined with a dense displacement field. The dense stage
//! is regularized by a smoothness penalty and a dual consistency term that
//! warps the registered image back through an extrapolated inverse field.
//! Similarity across contrasts is measured with a Parzen-window mutual
//! information estimate plus a background-suppression prior.
//!
//! Coordinates: pixel centers sit on integer coordinates, origin top-left,
//! `x` is the column index and `y` the row index. Warping is backward:
//! `out(p) = img(p + field(p))`.

pub mod cli;
pub mod error;
pub mod eval;
pub mod image;
pub mod io;
pub mod losses;
pub mod optim;
pub mod synthetic;
pub mod transform;

pub use error::{Error, Result};
pub use eval::{overlap, warp_mask, OverlapScores, RegistrationReport};
pub use image::{Image2D, Mask2D};
pub use losses::{LossBreakdown, LossWeights};
pub use optim::{OptimConfig, RegistrationResult};
pub use transform::{AffineParams, BorderMode, DisplacementField};
