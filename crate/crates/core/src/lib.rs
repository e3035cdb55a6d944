//! Per-sample information in linearized neural networks.
//!
//! Training is approximated by the network's first-order expansion around
//! its initial weights, which makes the trained weights, and their change when a
//! single sample is dropped, closed-form functions of the tangent kernel.
//! From those leave-one-out changes the crate computes weight-space and
//! prediction-space information scores.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod info;
pub mod ingest;
pub mod linalg;
pub mod loo;
pub mod model;
pub mod ntk;
pub mod oracle;
pub mod pipeline;
pub mod sgdcov;
pub mod synth;

pub use error::{Error, FormatError, Result};
pub use nalgebra;
