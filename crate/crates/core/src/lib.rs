//! Self-supervised cell representation learning for histopathology.
//!
//! The pipeline: ingest slide images + instance masks into normalized cell
//! crops and masked environment patches; train a two-branch contrastive model
//! (cell views against a momentum encoder with a negative queue, plus a
//! cell-environment cross-modal loss); extract embeddings; cluster and score
//! them; optionally fine-tune a supervised head; and group whole slides by
//! their cell-cluster distributions.

pub mod augment;
pub mod config;
pub mod error;
pub mod imgproc;
pub mod ingest;
pub mod nets;
pub mod rng;

pub use error::{Result, VoltaError};
