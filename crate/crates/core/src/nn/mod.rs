//! Neural building blocks with exact gradients.

pub mod dropout;
pub mod kernels;
pub mod params;
pub mod transformer;

pub use dropout::{dropout, dropout_mask, span_zero, ProsodyDropout};
pub use kernels::Mat;
pub use params::{Container, ParamId, ParameterSet, Tensor};
pub use transformer::{DecodeState, Mode, Tape, Transformer, TransformerConfig};
