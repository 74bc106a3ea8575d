//! Cross-modal hashing for long-tailed paired data.
//!
//! Two modality networks produce real-valued features that are enriched with
//! a prototype memory (class centroids weighted by a small network) before
//! being quantized to binary codes. Training alternates between gradient
//! steps on the networks and a closed-form update of the shared code matrix.
//! Retrieval ranks bit-packed codes by Hamming distance and reports mean
//! average precision, split into head and tail classes.

mod binio;
pub mod dataset;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod hashing;
pub mod retrieval;
pub mod tensor;

pub use error::{Error, Result};
