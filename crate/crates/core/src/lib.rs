//! Online person re-identification under fixed time segments.
//!
//! A stream of detection crops is screened, bucketed into segments of
//! `tau` minutes, reduced to a diverse per-camera subset, pseudo-labeled by
//! density clustering and handed to a trainer. Each stage is a standalone
//! module; [`pipeline`] wires them together and checks the schedule against
//! the segment deadline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod budget;
pub mod cluster;
mod error;
pub mod filter;
mod metric;
pub mod oracle;
pub mod pipeline;
pub mod report;
mod scalar;
pub mod sds;
pub mod segment;
pub mod stream;

pub use error::{Error, Result};
pub use metric::Metric;
pub use scalar::Scalar;

/// Default floating-point type for features and geometry.
pub type Real = f64;
pub type Crop = stream::CropRecord<Real>;
pub type Crop32 = stream::CropRecord<f32>;
pub type Selection = sds::SubsetSelection<Real>;
