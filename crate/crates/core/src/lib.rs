//! Zero-shot classification diagnostics over precomputed image and prompt
//! embeddings.
//!
//! * [`container`] and [`catalog`]: the `CMME` embedding container and the
//!   prompt manifest.
//! * [`matcher`]: cosine scores, description-averaged class similarities,
//!   argmax prediction and the class-by-prompt H matrix.
//! * [`cmm`]: class-wise matching margins from pseudo-labels, worst-k margin
//!   and worst-class identification.
//! * [`ensemble`]: softmax template weights, median selection and the full
//!   margin-weighted ensemble pipeline.
//! * [`metrics`]: per-class accuracy, worst@k, harmonic and geometric means.
//! * [`cli`]: the `cpe` command line.

pub mod catalog;
pub mod cli;
pub mod cmm;
pub mod container;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod matcher;
pub mod metrics;
pub mod synthetic;

pub use catalog::{PromptCatalog, TextBank};
pub use container::EmbeddingMatrix;
pub use error::{Error, Result};
