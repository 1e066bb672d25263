//! Search-based generation of multi-vehicle deadlock scenarios.

// Config checks are written `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod feedback;
pub mod fuzzer;
pub mod generation;
pub mod geometry;
pub mod oracle;
pub mod prediction;
pub mod road_network;
pub mod scalar;
pub mod scenario;
pub mod simulator;

pub use scalar::Scalar;

/// Planar point in meters (double precision).
pub type Point = geometry::Point2<f64>;
pub type Segment = geometry::Segment<f64>;
