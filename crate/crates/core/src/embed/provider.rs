use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{
    l2_normalize, EmbedError, EmbeddingStore, EmbeddingVector, SyntheticProvider, DEFAULT_DIM,
};
use crate::kb::KnowledgeBase;

/// Source of ECG and observation-text embeddings.
///
/// Implementations return unit-norm vectors of length [`dim`](Self::dim),
/// except text vectors when text normalization is explicitly disabled.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn get_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn get_ecg(&self, id: &str) -> Result<EmbeddingVector, EmbedError>;

    /// Whether text vectors are unit length (so dot products are cosines).
    fn normalizes_text(&self) -> bool {
        true
    }

    fn get_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.get_text(t)).collect()
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn get_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).get_text(text)
    }
    fn get_ecg(&self, id: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).get_ecg(id)
    }
    fn normalizes_text(&self) -> bool {
        (**self).normalizes_text()
    }
    fn get_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).get_texts(texts)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn get_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).get_text(text)
    }
    fn get_ecg(&self, id: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).get_ecg(id)
    }
    fn normalizes_text(&self) -> bool {
        (**self).normalizes_text()
    }
    fn get_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).get_texts(texts)
    }
}

fn ensure_unit(v: EmbeddingVector, what: &str) -> Result<EmbeddingVector, EmbedError> {
    if v.is_unit() {
        Ok(v)
    } else {
        debug!(what, norm = v.norm(), "normalizing encoder output");
        l2_normalize(&v)
    }
}

/// Lookups into precomputed stores.
#[derive(Debug, Clone)]
pub struct FileProvider {
    ecg: Option<EmbeddingStore>,
    text: Option<EmbeddingStore>,
    text_norm: bool,
}

impl FileProvider {
    /// Both stores, when given, must share a dimension.
    pub fn new(
        ecg: Option<EmbeddingStore>,
        text: Option<EmbeddingStore>,
    ) -> Result<Self, EmbedError> {
        if let (Some(e), Some(t)) = (&ecg, &text) {
            if e.dim() != t.dim() {
                return Err(EmbedError::DimMismatch {
                    expected: e.dim(),
                    found: t.dim(),
                });
            }
        }
        if ecg.is_none() && text.is_none() {
            return Err(EmbedError::InvalidDim(0));
        }
        Ok(Self {
            ecg,
            text,
            text_norm: true,
        })
    }

    /// Return text vectors as stored instead of rescaling them.
    pub fn without_text_norm(mut self) -> Self {
        self.text_norm = false;
        self
    }

    fn lookup(store: &Option<EmbeddingStore>, key: &str) -> Result<EmbeddingVector, EmbedError> {
        store
            .as_ref()
            .and_then(|s| s.get(key))
            .cloned()
            .ok_or_else(|| EmbedError::MissingKey(key.to_string()))
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.ecg
            .as_ref()
            .or(self.text.as_ref())
            .map(EmbeddingStore::dim)
            .expect("at least one store")
    }

    fn get_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let v = Self::lookup(&self.text, text)?;
        if self.text_norm {
            ensure_unit(v, text)
        } else {
            Ok(v)
        }
    }

    fn get_ecg(&self, id: &str) -> Result<EmbeddingVector, EmbedError> {
        ensure_unit(Self::lookup(&self.ecg, id)?, id)
    }

    fn normalizes_text(&self) -> bool {
        self.text_norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Kind {
    Text,
    Ecg,
}

#[derive(Deserialize)]
struct EncodeResponse {
    dim: usize,
    values: Vec<f32>,
}

/// Client for a remote encoder service.
///
/// `POST {base}/encode/text` with `{"text": ...}` and `POST {base}/encode/ecg`
/// with `{"id": ...}`; both answer `{"dim": n, "values": [...]}`. Responses
/// are cached per key for the life of the provider.
pub struct HttpProvider {
    base_url: String,
    dim: usize,
    token: Option<String>,
    text_norm: bool,
    max_in_flight: usize,
    agent: ureq::Agent,
    cache: Mutex<HashMap<(Kind, String), EmbeddingVector>>,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.base_url)
            .field("dim", &self.dim)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            dim,
            token: None,
            text_norm: true,
            max_in_flight: 4,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Bearer token read from the named environment variable, if set.
    pub fn with_token_env(mut self, var: &str) -> Self {
        self.token = std::env::var(var).ok().filter(|t| !t.is_empty());
        if self.token.is_none() {
            warn!(
                var,
                "encoder token variable is unset; sending unauthenticated requests"
            );
        }
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn without_text_norm(mut self) -> Self {
        self.text_norm = false;
        self
    }

    fn fetch(&self, kind: Kind, key: &str) -> Result<EmbeddingVector, EmbedError> {
        let cache_key = (kind, key.to_string());
        if let Some(v) = self.cache.lock().expect("cache lock").get(&cache_key) {
            return Ok(v.clone());
        }
        let (path, body) = match kind {
            Kind::Text => ("encode/text", serde_json::json!({ "text": key })),
            Kind::Ecg => ("encode/ecg", serde_json::json!({ "id": key })),
        };
        let mut request = self.agent.post(&format!("{}/{path}", self.base_url));
        if let Some(token) = &self.token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        let response = match request.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let text = r.into_string().unwrap_or_default();
                return Err(EmbedError::HttpError {
                    status,
                    body: text.chars().take(200).collect(),
                });
            }
            Err(e) => return Err(EmbedError::Transport(e.to_string())),
        };
        let parsed: EncodeResponse = response
            .into_json()
            .map_err(|e| EmbedError::Transport(format!("bad encoder response: {e}")))?;
        if parsed.dim != self.dim || parsed.values.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                found: if parsed.dim != self.dim {
                    parsed.dim
                } else {
                    parsed.values.len()
                },
            });
        }
        let v = EmbeddingVector::new(parsed.values);
        let v = if kind == Kind::Ecg || self.text_norm {
            ensure_unit(v, key)?
        } else {
            v
        };
        self.cache
            .lock()
            .expect("cache lock")
            .insert(cache_key, v.clone());
        Ok(v)
    }
}

impl EmbeddingProvider for HttpProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn get_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.fetch(Kind::Text, text)
    }

    fn get_ecg(&self, id: &str) -> Result<EmbeddingVector, EmbedError> {
        self.fetch(Kind::Ecg, id)
    }

    fn normalizes_text(&self) -> bool {
        self.text_norm
    }

    /// Fetches with at most `max_in_flight` concurrent requests.
    fn get_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<EmbeddingVector, EmbedError>>>> =
            texts.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..self.max_in_flight.min(texts.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= texts.len() {
                        break;
                    }
                    let r = self.get_text(texts[i]);
                    *results[i].lock().expect("slot") = Some(r);
                });
            }
        });
        results
            .into_iter()
            .map(|slot| slot.into_inner().expect("slot").expect("every slot filled"))
            .collect()
    }
}

fn default_seed() -> u64 {
    42
}
fn default_dim() -> usize {
    DEFAULT_DIM
}
fn default_timeout() -> u64 {
    30
}
fn default_in_flight() -> usize {
    4
}

/// Which encoder to use; the `kind` tag selects the variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderConfig {
    File {
        #[serde(default)]
        ecg_store: Option<PathBuf>,
        #[serde(default)]
        text_store: Option<PathBuf>,
        #[serde(default)]
        no_text_norm: bool,
    },
    Http {
        base_url: String,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default)]
        token_env: Option<String>,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        no_text_norm: bool,
    },
    Synthetic {
        #[serde(default = "default_seed")]
        seed: u64,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        sigma: f64,
        /// Labels CSV whose sample labels are planted into the ECG embeddings.
        #[serde(default)]
        planted_labels: Option<PathBuf>,
        #[serde(default)]
        kb: Option<PathBuf>,
    },
}

impl ProviderConfig {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, EmbedError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Instantiate the provider. `kb` overrides the synthetic `kb` path.
    pub fn build(
        &self,
        kb: Option<Arc<KnowledgeBase>>,
    ) -> Result<Arc<dyn EmbeddingProvider>, EmbedError> {
        Ok(match self {
            ProviderConfig::File {
                ecg_store,
                text_store,
                no_text_norm,
            } => {
                let ecg = ecg_store.as_ref().map(EmbeddingStore::load).transpose()?;
                let text = text_store.as_ref().map(EmbeddingStore::load).transpose()?;
                let p = FileProvider::new(ecg, text)?;
                Arc::new(if *no_text_norm {
                    p.without_text_norm()
                } else {
                    p
                })
            }
            ProviderConfig::Http {
                base_url,
                dim,
                timeout_secs,
                token_env,
                max_in_flight,
                no_text_norm,
            } => {
                let mut p = HttpProvider::new(base_url, *dim, Duration::from_secs(*timeout_secs))
                    .with_max_in_flight(*max_in_flight);
                if let Some(var) = token_env {
                    p = p.with_token_env(var);
                }
                Arc::new(if *no_text_norm {
                    p.without_text_norm()
                } else {
                    p
                })
            }
            ProviderConfig::Synthetic {
                seed,
                dim,
                sigma,
                planted_labels,
                kb: kb_path,
            } => {
                if *dim < 2 {
                    return Err(EmbedError::InvalidDim(*dim));
                }
                let provider = SyntheticProvider::new(*seed, *dim);
                match planted_labels {
                    None => Arc::new(provider),
                    Some(labels) => {
                        let kb = match (kb, kb_path) {
                            (Some(kb), _) => kb,
                            (None, Some(path)) => {
                                Arc::new(KnowledgeBase::load(path).map_err(|e| {
                                    EmbedError::MissingKey(format!("knowledge base: {e}"))
                                })?)
                            }
                            (None, None) => {
                                return Err(EmbedError::MissingKey(
                                    "planted mode needs a knowledge base".into(),
                                ))
                            }
                        };
                        let raw = std::fs::read_to_string(labels)?;
                        let samples = crate::eval::parse_labels_csv(&raw).map_err(|e| {
                            EmbedError::Malformed {
                                line: 0,
                                message: e.to_string(),
                            }
                        })?;
                        let planted = samples
                            .into_iter()
                            .map(|(id, labels)| (id, labels.into_iter().collect()))
                            .collect();
                        Arc::new(provider.planted(kb, planted, *sigma))
                    }
                }
            }
        })
    }
}
