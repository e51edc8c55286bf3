//! Desk-scale video instance segmentation built around query embeddings.
//!
//! The pipeline segments each frame independently with a small query-based
//! head, then links instances across frames by Hungarian matching of the
//! per-frame query embeddings. The crate bundles everything needed to
//! exercise that idea end to end on synthetic occlusion videos:
//!
//! - [`matching`]: rectangular min-cost assignment plus the cosine / mask-IoU
//!   score matrices used for tracking and training.
//! - [`tracker`]: online per-video association with implicit birth and death
//!   through null queries.
//! - [`seghead`]: a toy differentiable segmentation head whose masks come
//!   from convolving query embeddings with the feature map, trained with
//!   bipartite-matched classification + mask losses.
//! - [`metrics`]: video-level AP/AR evaluation over spatio-temporal IoU.
//! - [`synth`]: deterministic synthetic occlusion-video generation, an
//!   oracle prediction source, and annotation sub-sampling.
//! - [`analysis`]: identity-switch and association-accuracy measurements
//!   against generated ground truth.
//! - [`datio`]: versioned JSON file formats with run-length-encoded masks.
//!
//! Batch entry points accept an [`Execution`] policy; with the default
//! `parallel` feature they fan out over rayon, otherwise they run
//! sequentially with identical results.

pub mod analysis;
pub mod datio;
pub mod error;
pub mod matching;
pub mod metrics;
pub mod par;
pub mod seghead;
pub mod synth;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
pub use par::Execution;
