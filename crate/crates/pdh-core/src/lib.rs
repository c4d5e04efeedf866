//! Part-based deep hashing for person re-identification at desk scale.
//!
//! The pipeline trains one small hash network per horizontal image part with
//! a relaxed triplet loss, concatenates per-part binary codes, and retrieves
//! by packed Hamming distance with O(n) counting-sort ranking. Evaluation
//! follows the cross-camera CMC/mAP protocol with optional multiple-query
//! pooling.

pub mod dataio;
pub mod error;
pub mod evalkit;
pub mod hamcode;
pub mod netcore;
pub mod parts;
pub mod triplet;

pub use error::{Error, Result};
