use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{l2_normalize_f64, EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::kb::KnowledgeBase;

fn keyed_rng(seed: u64, domain: &str, key: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"zeta-synthetic\0");
    hasher.update(seed.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Deterministic pseudo-random unit vector for `key`.
///
/// Components are i.i.d. standard normal draws from a stream keyed by
/// `(seed, key)`, so distinct keys give nearly orthogonal vectors at large `dim`.
pub fn synthetic_embed(key: &str, seed: u64, dim: usize) -> EmbeddingVector {
    assert!(dim >= 2, "synthetic embeddings need dim >= 2");
    let mut rng = keyed_rng(seed, "embed", key);
    l2_normalize_f64(gaussian(&mut rng, dim)).expect("gaussian draw is nonzero")
}

/// Stand-in encoder with an optional recoverable ground truth.
///
/// Texts and unplanted ECG ids map to [`synthetic_embed`] vectors. A planted ECG
/// id tagged with conditions `C` maps to the normalized mean of every positive
/// observation embedding of `C`, plus i.i.d. Gaussian noise of std `sigma`.
#[derive(Debug, Clone)]
pub struct SyntheticProvider {
    seed: u64,
    dim: usize,
    sigma: f64,
    kb: Option<Arc<KnowledgeBase>>,
    planted: HashMap<String, Vec<String>>,
}

impl SyntheticProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 2, "synthetic embeddings need dim >= 2");
        Self {
            seed,
            dim,
            sigma: 0.0,
            kb: None,
            planted: HashMap::new(),
        }
    }

    /// Enable planted mode: `planted` maps ECG ids to the conditions they carry.
    pub fn planted(
        mut self,
        kb: Arc<KnowledgeBase>,
        planted: HashMap<String, Vec<String>>,
        sigma: f64,
    ) -> Self {
        self.kb = Some(kb);
        self.planted = planted;
        self.sigma = sigma;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn text_key(text: &str) -> String {
        format!("text:{text}")
    }

    fn planted_vector(
        &self,
        id: &str,
        conditions: &[String],
    ) -> Result<EmbeddingVector, EmbedError> {
        let kb = self
            .kb
            .as_ref()
            .ok_or_else(|| EmbedError::MissingKey(format!("knowledge base for planted id {id}")))?;
        let mut sum = vec![0.0f64; self.dim];
        let mut n = 0usize;
        for code in conditions {
            let entry = kb.conditions.get(code).ok_or_else(|| {
                EmbedError::MissingKey(format!("condition {code} planted in {id}"))
            })?;
            for text in &entry.positives {
                let v = synthetic_embed(&Self::text_key(text), self.seed, self.dim);
                for (s, x) in sum.iter_mut().zip(v.as_slice()) {
                    *s += f64::from(*x);
                }
                n += 1;
            }
        }
        if n == 0 {
            return Ok(synthetic_embed(&format!("ecg:{id}"), self.seed, self.dim));
        }
        let mut noise = keyed_rng(self.seed, "noise", id);
        let values = sum
            .into_iter()
            .map(|s| {
                let eps: f64 = StandardNormal.sample(&mut noise);
                s / n as f64 + self.sigma * eps
            })
            .collect();
        l2_normalize_f64(values)
    }
}

impl EmbeddingProvider for SyntheticProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn get_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        Ok(synthetic_embed(&Self::text_key(text), self.seed, self.dim))
    }

    fn get_ecg(&self, id: &str) -> Result<EmbeddingVector, EmbedError> {
        match self.planted.get(id) {
            Some(conditions) => self.planted_vector(id, conditions),
            None => Ok(synthetic_embed(&format!("ecg:{id}"), self.seed, self.dim)),
        }
    }
}
