//! Finite-dimensional projections of the master equation on domains with
//! an invariant interior, and the tools to study them numerically.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod disc;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod linearized;
pub mod measures;
pub mod mfg;
pub mod model;
pub mod nash;
pub mod norms;
pub mod particles;

pub use error::{Error, Result};
pub use geometry::{build_disk_domain, build_interval_domain, DomainGrid, GridDescriptor, Shape};
pub use measures::{wasserstein1, MeasureField};
pub use mfg::{solve_mfg, MfgSolution, SolverConfig};
pub use model::ModelSpec;
