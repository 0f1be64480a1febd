//! Continual multi-label classification with replay consolidation and label
//! propagation (RCLP), seven reference strategies, and a benchmark harness that
//! runs them over a New-Instances-and-New-Classes task stream.
//!
//! The crate is organised bottom-up:
//!
//! - [`numeric`]: dense matrices, a small MLP with a feature tap, hand-derived
//!   gradients, Adam, and binary cross-entropy.
//! - [`stream`]: synthetic task streams with label co-occurrence and domain
//!   shift, plus CSV manifest ingestion.
//! - [`buffer`]: the episodic replay memory with forward-stamped admission and
//!   backward consolidation.
//! - [`strategies`]: the eight training strategies behind one interface.
//! - [`metrics`]: F1, AUC, stream averages, forgetting and relative gap.
//! - [`harness`]: experiment configs, multi-seed runs and result files.

pub mod buffer;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod strategies;
pub mod stream;

pub use error::{Error, Result};
