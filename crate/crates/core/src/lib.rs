//! Prosody-aware multi-stream language modeling over (unit, duration, log-F0)
//! segment streams, with samplers, metrics and a synthetic corpus generator.

pub mod config;
pub mod corpus;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod mstlm;
pub mod nn;
pub mod numeric;
pub mod pipeline;
pub mod quantizer;
pub mod representation;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};
