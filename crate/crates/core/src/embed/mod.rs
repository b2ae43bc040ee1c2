//! Embedding vectors, on-disk stores and the encoder abstraction.
//!
//! The ECG and text encoders are external and frozen. This module only sees
//! their outputs: precomputed stores ([`FileProvider`]), a remote encoder
//! ([`HttpProvider`]) or a deterministic stand-in for tests ([`SyntheticProvider`]).

mod provider;
mod store;
mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use provider::{EmbeddingProvider, FileProvider, HttpProvider, ProviderConfig};
pub use store::{read_store, write_jsonl, write_store, EmbeddingStore, StoreFormat, DEFAULT_DIM};
pub use synthetic::{synthetic_embed, SyntheticProvider};

/// Tolerance on the norm of a vector that is supposed to be unit length.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("vector contains non-finite values")]
    NonFinite,
    #[error("bad magic: not a ZEB1 or ZEB JSONL store")]
    BadMagic,
    #[error("store is truncated: {0}")]
    TruncatedFile(String),
    #[error("{0} unexpected trailing bytes after the last record")]
    TrailingData(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("id is {0} bytes long; the store format allows at most 65535")]
    IdTooLong(usize),
    #[error("invalid dimension {0}")]
    InvalidDim(usize),
    #[error("id is not valid UTF-8")]
    InvalidUtf8,
    #[error("no embedding for {0:?}")]
    MissingKey(String),
    #[error("encoder returned HTTP {status}: {body}")]
    HttpError { status: u16, body: String },
    #[error("encoder request failed: {0}")]
    Transport(String),
    #[error("malformed store line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A dense embedding stored as binary32 values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Euclidean norm, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_NORM_TOLERANCE
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(values: Vec<f32>) -> Self {
        Self(values)
    }
}

/// Scale to unit Euclidean norm.
pub fn l2_normalize(v: &EmbeddingVector) -> Result<EmbeddingVector, EmbedError> {
    l2_normalize_f64(v.0.iter().map(|&x| f64::from(x)).collect())
}

pub(crate) fn l2_normalize_f64(values: Vec<f64>) -> Result<EmbeddingVector, EmbedError> {
    let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(EmbedError::NonFinite);
    }
    if norm <= 1e-12 {
        return Err(EmbedError::ZeroVector);
    }
    Ok(EmbeddingVector(
        values.into_iter().map(|x| (x / norm) as f32).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_basis_unchanged() {
        let mut e1 = vec![0.0f32; 768];
        e1[0] = 1.0;
        let v = EmbeddingVector::new(e1.clone());
        assert_eq!(l2_normalize(&v).unwrap().as_slice(), e1.as_slice());
    }

    #[test]
    fn three_four_five() {
        let mut raw = vec![0.0f32; 768];
        raw[0] = 3.0;
        raw[1] = 4.0;
        let n = l2_normalize(&EmbeddingVector::new(raw)).unwrap();
        assert_abs_diff_eq!(n.as_slice()[0], 0.6, epsilon = 1e-7);
        assert_abs_diff_eq!(n.as_slice()[1], 0.8, epsilon = 1e-7);
        assert!(n.as_slice()[2..].iter().all(|&x| x == 0.0));
        assert_abs_diff_eq!(n.norm(), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_and_nan_rejected() {
        assert!(matches!(
            l2_normalize(&EmbeddingVector::new(vec![0.0; 768])),
            Err(EmbedError::ZeroVector)
        ));
        assert!(matches!(
            l2_normalize(&EmbeddingVector::new(vec![f32::NAN, 1.0])),
            Err(EmbedError::NonFinite)
        ));
    }
}
