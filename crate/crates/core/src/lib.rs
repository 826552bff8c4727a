//! Desk-scale simulation of soft-prompt storage and retrieval on
//! non-volatile compute-in-memory (NVCiM) crossbars.
//!
//! The pipeline has two modes. In training mode samples accumulate in a
//! bounded [`selection::DataBuffer`]; when it fills, k-means picks one
//! representative per cluster, a soft prompt is tuned for each with
//! magnitude-dependent noise injection ([`tuning`]), and the prompt is
//! encoded ([`codec`]) and programmed into simulated multi-level cells
//! ([`store`]). In inference mode a query is matched against every stored
//! prompt with a weighted multi-scale dot product computed over the cells'
//! noisy read values.
//!
//! [`harness`] drives the whole thing on synthetic workloads and produces
//! sweep reports.

pub mod codec;
pub mod device;
pub mod error;
pub mod harness;
pub mod rng;
pub mod selection;
pub mod store;
pub mod tuning;

pub use error::{Error, Result};
