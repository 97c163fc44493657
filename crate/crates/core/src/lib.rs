//! Cycle-level model of a lane-based, reconfigurable precision array.
//!
//! Operands are decomposed into 8-bit limbs ([`precision`]), mapped onto a
//! logical systolic array assembled from MPRA lanes ([`geometry`], [`mapper`]),
//! then either simulated register by register ([`syssim`]) or costed in closed
//! form ([`costmodel`]). [`scheduler`] searches dataflows and mapping knobs per
//! operator and [`workloads`] carries the benchmark catalogue.

pub mod costmodel;
pub mod geometry;
pub mod mapper;
pub mod ops;
pub mod precision;
pub mod scheduler;
pub mod syssim;
pub mod verify;
pub mod workloads;

pub use costmodel::{CostError, CostEstimate, ThroughputTable};
pub use geometry::{ArrayShape, GtaConfig};
pub use mapper::{Dataflow, Knobs, MappingPlan, TilingDirection};
pub use ops::{GemmOperands, Matrix, PGemmOp, VectorKind, VectorOp};
pub use precision::{DataType, PrecisionSpec, Wide};
pub use syssim::{SimResult, Timing};
