//! Desk-scale self-supervised learning with guided positive sampling.
//!
//! Positive pairs can come from data augmentation alone, from nearest-neighbor
//! search in a frozen prior embedding space, or from a live FIFO support
//! queue. Five objectives (NT-Xent, BYOL, Barlow, VICReg, and the queue-based
//! NT-Xent variant) share one exact-gradient engine, and the training loop is
//! deterministic given its seed.

pub mod augment;
pub mod data;
pub mod error;
pub mod image;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
