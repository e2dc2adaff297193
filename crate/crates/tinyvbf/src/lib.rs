//! Plane-wave ultrasound beamforming toolkit.
//!
//! The crate covers the full path from raw radio-frequency channel data to
//! quantitative image-quality numbers:
//!
//! - [`data`] — acquisition data model, pixel grids and on-disk containers
//! - [`tof`] — plane-wave time-of-flight correction
//! - [`beamform`] — DAS and MVDR reference beamformers, Hilbert envelope
//! - [`model`] — floating-point transformer beamformer forward pass with
//!   parameter and FLOP accounting
//! - [`quant`] — Q-format fixed-point arithmetic and the quantized forward
//!   pass that serves as the bit-exact golden reference
//! - [`accel`] — functional simulator of the 4-PE accelerator dataflow with
//!   cycle accounting
//! - [`postproc`] — envelope, log compression and image output
//! - [`metrics`] — contrast and resolution metrics
//! - [`phantom`] — synthetic RF data generation for desk-scale evaluation

// Validation guards use `!(x > 0.0)` on purpose: unlike `x <= 0.0` the
// negated form also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accel;
pub mod beamform;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod postproc;
pub mod quant;
pub mod tof;

pub use error::{Error, Result};
