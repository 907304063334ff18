//! boxforge: the algorithmic core of an anchor-based comic page detector,
//! without the network.
//!
//! Comic pages stack frames, faces, bodies and text on top of each other,
//! so objects of similar shape and position compete for the same anchor
//! boxes during training-time assignment and some objects end up with
//! none. This crate implements everything needed to demonstrate and
//! measure that failure and the per-category fix:
//!
//! - [`geometry`]: box arithmetic, IoU, offset encode/decode
//! - [`anchors`]: the SSD300 anchor grid, per-category replication, and
//!   parameter accounting for both detection-head layouts
//! - [`matcher`]: standard vs. forked ground-truth assignment and the
//!   conflict report comparing them
//! - [`loss`]: the weighted category-wise multibox loss, its softmax
//!   baseline, hard-negative mining, and analytic gradients
//! - [`postprocess`]: decode, score, NMS, top-k
//! - [`eval`]: PASCAL-VOC AP/mAP and best-threshold recall/precision/F
//! - [`annotation`]: the Manga109-style corpus data model and utilities
//! - [`synth`]: seed-controlled fixtures

pub mod anchors;
pub mod annotation;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod matcher;
pub mod postprocess;
pub mod synth;

pub use error::{Error, Result};
