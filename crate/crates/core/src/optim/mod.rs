//! Two-stage registration by gradient descent: a global affine fit on the
//! joint loss, then a dense field on the total loss with the affine result
//! frozen.

mod adam;
mod affine;
mod config;
mod deformable;
mod gradcheck;
mod pipeline;
mod pyramid;

pub use adam::{adam_step, AdamParams, AdamState};
pub use affine::{affine_objective, register_affine, AffineOutcome};
pub use config::{OptimConfig, CONFIG_KEYS};
pub use deformable::{register_deformable, DeformableOutcome};
pub use gradcheck::{gradcheck, gradcheck_instance, GradcheckReport, FD_STEP, MAX_GRADCHECK_SIZE};
pub use pipeline::{register_pipeline, RegistrationResult};
pub use pyramid::{build_pyramid, MIN_LEVEL_SIDE};
