//! Conditional sequence diffusion for long multi-segment trajectories.
//!
//! A denoiser predicts clean frame blocks from noisy ones under a label and
//! optional history. On top of it sit three ways of producing a long
//! sequence from a stream of labeled prompts: independent or history
//! conditioned chains per segment, inpainting after the previous segment's
//! tail, and one joint chain whose overlapping per-segment views are
//! averaged at the transitions.

pub mod config;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod ndcore;
pub mod sampling;
pub mod schedule;

pub use error::{Error, Result};
