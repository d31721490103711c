//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! Everything is computed in f64. A [`Tape`] records each op together with
//! the activations its backward rule needs; [`Tape::reverse_accumulate`]
//! replays the record once in reverse and sums gradient contributions for
//! tensors that feed several ops. Named parameters live in a [`ParamStore`]
//! whose registration order is stable, and [`check::finite_diff_check`]
//! verifies any scalar-valued graph against central differences.

pub mod check;
mod error;
mod ops;
mod params;
mod tape;
mod tensor;

pub use check::{finite_diff_check, DEFAULT_STEP};
pub use error::{Error, Result};
pub use ops::SIGMOID_MAX;
pub use params::{ParamStore, ParamView};
pub use tape::{ActivationKind, Gradients, PoolKind, Tape, TensorId};
pub use tensor::Tensor;
