//! Wireless-powered cognitive radio frame design.
//!
//! Secondary users harvest energy from a Poisson field of multi-antenna power
//! beacons, sense a wideband spectrum with sub-Nyquist (compressive)
//! sampling, and transmit in whatever time is left over. This crate provides
//! the pieces needed to analyse and optimize that frame:
//!
//! * [`mathkit`]: special functions, seeded random streams, dense SVD.
//! * [`wpt`]: beacon-field sampling, slot powers and power-outage
//!   probabilities (closed form and Monte Carlo).
//! * [`sensing`]: sparse spectrum synthesis, compressive measurement, greedy
//!   sparse recovery, energy detection and analytic false-alarm curves.
//! * [`completion`]: fusion-center matrix assembly and nuclear-norm matrix
//!   completion via singular-value thresholding.
//! * [`throughput`]: single-user and cooperative throughput objectives, the
//!   constraint set, and grid / random / local optimizers.
//! * [`harness`]: configuration, scenario runners and CSV result tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod completion;
pub mod error;
pub mod harness;
pub mod mathkit;
pub mod sensing;
pub mod throughput;
pub mod units;
pub mod wpt;

pub use error::{Error, Result};
pub use mathkit::{CMatrix, RMatrix, SimRng};
pub use sensing::{MeasurementOp, SensingParams, SpectrumScene};
pub use throughput::{DesignTuple, Method, OptResult, ProblemSpec, Variant};
pub use wpt::{FrameSplit, PbDraw, PowerThresholds, WptParams};

/// Tool version stamped into result-table metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
