//! Allocation-only core of an on-the-fly category discovery pipeline that
//! learns to discover by creating its own pseudo-unknowns.
//!
//! Training sees only labeled known classes; while it runs, pseudo-unknown
//! samples are synthesized from cross-class mixup anchors by a single
//! normalized gradient-ascent step on predictive entropy minus batch kernel
//! density, and a dual hinge keeps known and pseudo-unknown prototype scores
//! on opposite sides of an adaptive threshold. Inference is a strictly
//! sequential stream that either matches a prototype or spawns a new one.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the CLI and
//! wall-clock instrumentation live in `ltc-cli`.

#![no_std]

extern crate alloc;

pub mod datakit;
pub mod error;
pub mod evalkit;
pub mod math;
pub mod mkee;
pub mod losses;
pub mod neuralcore;
pub mod pipeline;
pub mod protodict;

pub use error::{LtcError, Result};
