//! Simulation and exact verification engine for interactive protocol
//! compression: correlated one-shot sampling, correlated pointer jumping,
//! exact information costs of protocol trees, and compression of protocols
//! down to their internal information cost.

pub mod bits;
pub mod cli;
pub mod cpj;
pub mod engine;
pub mod error;
pub mod info;
pub mod onesamp;
pub mod prototree;
pub mod sharedrand;
pub mod wire;

pub use error::{Error, Result};
