//! Equivariant flow-matching policies with an acceleration-regularized training
//! objective, plus the numerical harness that checks their guarantees.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and all IO
//! live in the companion `equiflow` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod group;
mod math;
pub mod nn;
pub mod sampler;
pub mod toybench;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
