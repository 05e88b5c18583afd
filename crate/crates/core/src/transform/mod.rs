//! Affine and dense transforms, bilinear warping and field diagnostics.

mod affine;
pub(crate) mod field;
mod jacobian;
pub mod warp;

pub use affine::AffineParams;
pub use field::{compose, invert_field, invert_field_iterative, DisplacementField};
pub use jacobian::{folding_count, Folding};
pub use warp::{warp, warp_adjoint, warp_grad, BorderMode, SamplePoint};
