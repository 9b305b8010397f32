//! Randomization-based confidence sets for the local average treatment effect
//! in completely randomized experiments with noncompliance.
//!
//! The confidence set collects every effect `beta` that a studentized
//! Anderson-Rubin randomization test does not reject. Each AR statistic is a
//! ratio of quadratics in `beta`, so the set is computed exactly from the
//! crossings of those functions instead of on a grid.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod ar;
pub mod cli;
pub mod cs;
pub mod data;
pub mod error;
pub mod estimators;
pub mod interval;
pub mod linalg;
pub mod poly;
pub mod randomization;
pub mod simulation;
#[doc(hidden)]
pub mod testutil;

pub use ar::{OlsFit, RationalQuadratic};
pub use cs::{Algorithm, ConfidenceSetResult};

pub use data::{ColumnMap, DataDiagnostics, ExperimentData};
pub use error::{Error, Result};
pub use interval::{Interval, IntervalUnion};
pub use poly::Poly4;
pub use randomization::DrawSet;
