//! Horizon-truncated gradient training.
//!
//! Each block's parameter gradient is taken through a look-ahead window of `h`
//! blocks: `h = 1` is forward-forward style local learning, `h = T` is full
//! back-propagation, and everything in between trades gradient fidelity for
//! activation memory. The crate also carries a closed-form oracle for deep
//! linear chains, memory accountants, and an objective-driven horizon picker.

pub mod cli;
pub mod error;
pub mod export;
pub mod gradients;
pub mod lintheory;
pub mod network;
pub mod numerics;
pub mod selection;
pub mod trainer;

pub use error::{Error, Result};
