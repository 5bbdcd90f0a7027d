//! Greenwashing-risk pipeline for sustainability-report text.
//!
//! - [`lexicon`]: hedging detection and attribute assembly
//! - [`labeling`]: linear risk equations and least-squares coefficient fitting
//! - [`corpus`]: report ingestion, paragraph-aligned chunking, dataset splits and persistence
//! - [`classifier`]: hashed n-gram logistic regression and the multi-seed protocol
//! - [`evaluation`]: metrics, majority voting and per-company tables
//! - [`emissions`]: relative emissions and outlier flags

pub mod classifier;
pub mod corpus;
pub mod emissions;
pub mod error;
pub mod evaluation;
pub mod labeling;
pub mod lexicon;
pub mod text;

pub use error::{Error, Result};

/// Serializes a `bool` as the integer 0 or 1 and rejects any other value.
pub(crate) mod bit {
    use serde::de::{self, Deserialize, Deserializer};
    use serde::Serializer;

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u64::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(de::Error::custom(format!("expected 0 or 1, got {other}"))),
        }
    }
}
