//! Dense reverse-mode automatic differentiation.
//!
//! Values live in row-major [`Tensor`]s. A forward pass records every op on a
//! [`Tape`] that borrows a [`ParamSet`]; [`Tape::backward`] replays the record
//! in reverse and returns per-parameter [`Gradients`]. The crate is sized for
//! micro transformers trained on one CPU, so it favours clarity over fusion.

mod checkpoint;
mod error;
mod float;
mod gradcheck;
mod nn;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{load_params, read_params, save_params, write_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{AutodiffError, Result};
pub use float::Float;
pub use gradcheck::{finite_difference_check, GradCheckReport, ParamCheck};
pub use nn::{multi_head_attention, AttentionMask};
pub use params::{Gradients, Init, ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
