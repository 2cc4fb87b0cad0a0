//! Numerical core for comparing two notions of a lower Ricci curvature bound
//! on the flat coordinate 2-torus `[0,1)²` equipped with a low-regularity
//! Riemannian metric:
//!
//! * the *distributional* bound, probed by mollifying the metric and checking
//!   `Ric(g_ε) ≥ (K − δ) g_ε` along an ε-sweep ([`curvature::bound_check`]);
//! * the *synthetic* bound, probed through displacement convexity of the
//!   entropy along Wasserstein geodesics ([`entropy::convexity_check`]).
//!
//! Everything in this crate is a pure function of its inputs and needs only
//! `alloc`. File formats, the scenario runner and the CLI live in the
//! companion `curvlab` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod linalg;
pub(crate) mod math;

pub mod curvature;
pub mod entropy;
pub mod expr;
pub mod geodesic;
pub mod grid;
pub mod metric;
pub mod mollify;
pub mod transport;

pub use error::{Error, Result};
pub use expr::FieldExpr;
pub use grid::{Kernel, PeriodicGridField, Rank};
pub use linalg::{Mat2, Vec2};
pub use metric::{MetricModel, MetricSource, Regularity, SmoothedMetric};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
