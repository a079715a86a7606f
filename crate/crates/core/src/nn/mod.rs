//! Small reverse-mode autodiff engine over dense `f64` tensors.
//!
//! A forward pass records every operation on a [`Tape`]; [`Tape::backward`]
//! replays the record in reverse. Trainable values live in a [`ParamSet`]
//! and are bound onto a fresh tape for each pass.

mod adam;
mod gradcheck;
mod layers;
mod params;
mod tape;
mod tensor;

use alloc::string::String;

pub use adam::{Adam, AdamState};
pub use gradcheck::grad_check;
pub use layers::{GruCell, Linear, Mlp2};
pub use params::{BoundParams, ParamId, ParamSet, Parameter};
pub use tape::{Gradients, SetAxis, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("segment {0} has no rows")]
    EmptySegment(usize),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("non-finite value encountered during gradient check")]
    NonFinite,
}
