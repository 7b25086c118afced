//! Multi-task grasp detection pipeline: grasp/object geometry, anchor
//! encode/decode across three prediction scales, the multi-task loss with
//! analytic gradients, relation-graph post-processing, grasp-sequence
//! planning with a scene simulator, and the rectangle-metric / mAPg
//! evaluation stack.
//!
//! The crate deliberately contains no convolutional backbone: head tensors
//! are either synthesized, loaded from tensor bundles, or optimized directly
//! by the toy trainer, which is enough to exercise and verify every stage of
//! the pipeline end to end.

pub mod anchor_codec;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod planner;
pub mod postprocess;
pub mod selftest;
pub mod toytrain;

pub use error::{Error, Result};
