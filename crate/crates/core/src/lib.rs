//! Growth velocity estimation from longitudinal z-scores.
//!
//! The crate covers the whole pipeline used to flag children whose growth has
//! faltered:
//!
//! - [`data`]: ingestion of `(child_id, age, zscore)` tables with exclusion rules
//! - [`spline`]: degree-1 B-spline bases for broken-stick models
//! - [`mixed`]: REML fits of random-slope and broken-stick mixed models
//! - [`velocity`]: the SDS, RS, ARS and MRS families (plus conditional variants)
//! - [`classify`]: two-component Gaussian mixtures, threshold rules and agreement
//! - [`simulation`]: synthetic cohorts with known faltering subgroups

pub mod classify;
pub mod data;
pub mod error;
pub mod linalg;
pub mod mixed;
pub mod optim;
pub mod rng;
pub mod simulation;
pub mod spline;
pub mod velocity;

pub use error::{Error, Result};
