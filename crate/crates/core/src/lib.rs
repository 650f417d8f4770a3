//! Conformalised conditional normalising flows for multi-step forecasting.
//!
//! A GRU summarises each series' context window; a stack of conditional
//! affine coupling layers models the joint density of the flattened future.
//! The exact conditional log-density of held-out futures serves as an
//! inductive-conformal score, which yields joint prediction regions with
//! finite-sample marginal coverage. Regions are materialised by grid or
//! flow-sample scans and may split into several disjoint components.

pub mod conformal;
pub mod data;
pub mod encoder;
pub mod error;
pub mod flow;
pub mod numerics;
pub mod regions;

pub use error::{Error, Result};
