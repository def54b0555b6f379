//! Differential checkpointing for data-parallel training, built on reuse of
//! the compressed gradients the training loop already produces.
//!
//! The pieces, bottom to top:
//!
//! - [`model`]: deterministic synthetic workload (layered least squares),
//!   Adam, and multi-worker gradient synchronization.
//! - [`compress`]: gradient sparsification; the compressed gradient doubles
//!   as a differential checkpoint payload.
//! - [`store`]: the `.ld` binary checkpoint format (full / differential /
//!   batched) with CRC validation and atomic writes.
//! - [`queue`]: bounded FIFO handing gradients from the training thread to
//!   the checkpointing thread without copies.
//! - [`pipeline`]: the training producer + checkpointing consumer, batched
//!   writes, and baseline checkpointing strategies.
//! - [`recovery`]: serial and parallel reconstruction from a full checkpoint
//!   plus a differential chain.
//! - [`tuner`]: wasted-time cost model, closed-form optimal configuration,
//!   grid-search validation, stepwise adaptation.
//! - [`sim`]: failure-injection simulator measuring wasted time and
//!   effective training ratio per checkpointing policy.
//! - [`replica`]: the no-compression variant: layer-wise gradient streaming
//!   into a host-memory model replica with asynchronous persistence.
//!
//! See the crate `examples/` directory for one runnable program per
//! capability, and the `lowdiff` binary for the batch CLI.

pub mod cli;
pub mod compress;
pub mod config;
pub mod store;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod queue;
pub mod recovery;
pub mod replica;
pub mod sim;
pub mod tuner;
mod rng;

pub use error::{Error, Result};
