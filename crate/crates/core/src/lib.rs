//! Spiking recurrent networks built from a spiking ConvLSTM whose gates can
//! be modulated by a spiking convolutional block attention module, trained
//! end to end with surrogate gradients on event-camera streams.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the tensor index arithmetic they implement.
#![allow(clippy::needless_range_loop)]

pub mod aer;
pub mod cbam;
pub mod checkpoint;
#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod convlstm;
pub mod error;
pub mod features;
mod kernels;
pub mod model;
pub mod neuron;
pub mod optim;
pub mod param;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{Gradients, SpikeMode, Tape, Var};
pub use tensor::Tensor;
