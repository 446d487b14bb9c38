//! Cooperative multi-agent value learning with sliding-window subtask
//! recognition, mutual-information intrinsic rewards, a learned one-step
//! inference network, and subtask-conditioned monotonic mixing.
//!
//! The crate is `no_std` with `alloc`; file formats, the CLI and diagnostics
//! live in the `smaug` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod env;
pub mod error;
pub mod gradsuite;
pub mod intrinsic;
pub mod mixer;
pub mod trainer;
pub mod numerics;
pub mod window;
pub mod worldmodel;

pub use error::{Error, Result};
