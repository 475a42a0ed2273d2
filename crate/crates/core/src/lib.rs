//! Deep bag-of-words classification of fungus microscopy scans.
//!
//! Scans are contrast-stretched, segmented and cut into FBP-gated patches
//! ([`imaging`]); each patch becomes a set of local descriptors
//! ([`descriptors`]) that is pooled against a learned vocabulary ([`vocab`],
//! [`encode`]) and classified ([`learn`]). [`eval`] runs the
//! preparation-wise cross-validation protocol and the explanatory reports.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod descriptors;
pub mod encode;
pub mod error;
pub mod eval;
pub mod formats;
pub mod imaging;
pub mod labels;
pub mod learn;
pub mod pipeline;
pub mod synth;
pub mod vocab;

pub use error::{Error, Result};
pub use labels::{PatchLabel, Species};
