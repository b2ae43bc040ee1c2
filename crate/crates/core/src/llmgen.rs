//! Candidate observation generation with chat-completion models.
//!
//! Every reply is archived verbatim (successful or not), so the pool can be
//! rebuilt from the archive without network access.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kb::{parse_llm_response, ConditionId, KbError, ObservationCandidate};

/// The observation prompt with a `${Condition}` placeholder.
pub const PROMPT_TEMPLATE: &str = include_str!("../resources/observation_prompt.txt");

const PLACEHOLDER: &str = "${Condition}";

/// Default number of models queried at once.
pub const DEFAULT_CONCURRENCY: usize = 3;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("condition display name is empty")]
    EmptyCondition,
    #[error("no models configured")]
    NoModels,
    #[error("{model}: authentication failed (HTTP {status})")]
    AuthError { model: String, status: u16 },
    #[error("{model}: rate limited after {attempts} attempts")]
    RateLimited { model: String, attempts: u32 },
    #[error("{model}: HTTP {status}: {body}")]
    Http {
        model: String,
        status: u16,
        body: String,
    },
    #[error("{model}: transport error: {message}")]
    Transport { model: String, message: String },
    #[error("{model}: empty response")]
    EmptyResponse { model: String },
    #[error("{model}: environment variable {var} is not set")]
    MissingToken { model: String, var: String },
    #[error("no fixture response at {0}")]
    MissingFixture(PathBuf),
    #[error("no model produced a usable response for {0}")]
    AllModelsFailed(String),
    #[error("archive line {line}: {source}")]
    Archive {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Parse(#[from] KbError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `sha256:` plus 16 hex digits of the template bytes.
pub fn template_version() -> String {
    let digest = Sha256::digest(PROMPT_TEMPLATE.as_bytes());
    format!("sha256:{}", &hex::encode(digest)[..16])
}

pub fn render_prompt(condition: &ConditionId) -> Result<String, GenError> {
    if condition.display_name.trim().is_empty() {
        return Err(GenError::EmptyCondition);
    }
    Ok(PROMPT_TEMPLATE.replace(PLACEHOLDER, &condition.display_name))
}

fn default_temperature() -> f64 {
    0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Model id sent on the wire, if it differs from `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl ModelConfig {
    pub fn wire_model(&self) -> &str {
        self.model.as_deref().unwrap_or(&self.name)
    }
}

pub fn load_model_configs(path: &Path) -> Result<Vec<ModelConfig>, GenError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Exponential backoff with proportional jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base: Duration,
    pub factor: f64,
    /// Each delay is stretched by a uniform factor in `[1, 1 + jitter]`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base: Duration::from_secs(1),
            factor: 2.0,
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based), without jitter.
    pub fn nominal_delay(&self, retry: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(retry as i32 - 1))
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let stretch = 1.0 + rand::thread_rng().gen_range(0.0..=self.jitter.max(0.0));
        self.nominal_delay(retry).mul_f64(stretch)
    }

    /// Upper bound on total sleep across all retries.
    pub fn max_total_backoff(&self) -> Duration {
        (1..self.max_attempts)
            .map(|r| self.nominal_delay(r).mul_f64(1.0 + self.jitter.max(0.0)))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub content: String,
    pub attempts: u32,
}

pub trait ChatClient: Send + Sync {
    fn complete(
        &self,
        model: &ModelConfig,
        condition: &ConditionId,
        prompt: &str,
    ) -> Result<ChatReply, GenError>;
}

/// OpenAI-style chat-completion client.
pub struct HttpChatClient {
    agent: ureq::Agent,
    policy: RetryPolicy,
}

impl HttpChatClient {
    pub fn new(timeout: Duration, policy: RetryPolicy) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            policy,
        }
    }

    fn token(model: &ModelConfig) -> Result<Option<String>, GenError> {
        match &model.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| GenError::MissingToken {
                    model: model.name.clone(),
                    var: var.clone(),
                }),
        }
    }

    fn extract_content(model: &ModelConfig, body: &serde_json::Value) -> Result<String, GenError> {
        let content = body
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .unwrap_or_default();
        if content.trim().is_empty() {
            return Err(GenError::EmptyResponse {
                model: model.name.clone(),
            });
        }
        Ok(content.to_string())
    }
}

impl Default for HttpChatClient {
    fn default() -> Self {
        Self::new(Duration::from_secs(120), RetryPolicy::default())
    }
}

impl ChatClient for HttpChatClient {
    fn complete(
        &self,
        model: &ModelConfig,
        _condition: &ConditionId,
        prompt: &str,
    ) -> Result<ChatReply, GenError> {
        let token = Self::token(model)?;
        let payload = serde_json::json!({
            "model": model.wire_model(),
            "messages": [{"role": "user", "content": prompt}],
            "temperature": model.temperature,
        });
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.agent.post(&model.endpoint);
            if let Some(t) = &token {
                req = req.set("Authorization", &format!("Bearer {t}"));
            }
            let failure = match req.send_json(&payload) {
                Ok(resp) => {
                    let body: serde_json::Value =
                        resp.into_json().map_err(|e| GenError::Transport {
                            model: model.name.clone(),
                            message: format!("unreadable response body: {e}"),
                        })?;
                    return Self::extract_content(model, &body).map(|content| ChatReply {
                        content,
                        attempts: attempt,
                    });
                }
                Err(ureq::Error::Status(status @ (401 | 403), _)) => {
                    return Err(GenError::AuthError {
                        model: model.name.clone(),
                        status,
                    })
                }
                Err(ureq::Error::Status(429, _)) => GenError::RateLimited {
                    model: model.name.clone(),
                    attempts: attempt,
                },
                Err(ureq::Error::Status(status, resp)) => {
                    let body: String = resp
                        .into_string()
                        .unwrap_or_default()
                        .chars()
                        .take(200)
                        .collect();
                    let err = GenError::Http {
                        model: model.name.clone(),
                        status,
                        body,
                    };
                    if status < 500 {
                        return Err(err);
                    }
                    err
                }
                Err(ureq::Error::Transport(t)) => GenError::Transport {
                    model: model.name.clone(),
                    message: t.to_string(),
                },
            };
            if attempt >= self.policy.max_attempts {
                return Err(failure);
            }
            let delay = self.policy.delay(attempt);
            tracing::warn!(model = %model.name, attempt, ?delay, error = %failure, "retrying chat completion");
            std::thread::sleep(delay);
        }
    }
}

/// Replays canned replies from `{dir}/{model}/{CODE}.txt`.
#[derive(Debug, Clone)]
pub struct FixtureChatClient {
    dir: PathBuf,
}

impl FixtureChatClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl ChatClient for FixtureChatClient {
    fn complete(
        &self,
        model: &ModelConfig,
        condition: &ConditionId,
        _prompt: &str,
    ) -> Result<ChatReply, GenError> {
        let path = self
            .dir
            .join(&model.name)
            .join(format!("{}.txt", condition.code));
        let content = std::fs::read_to_string(&path).map_err(|_| GenError::MissingFixture(path))?;
        if content.trim().is_empty() {
            return Err(GenError::EmptyResponse {
                model: model.name.clone(),
            });
        }
        Ok(ChatReply {
            content,
            attempts: 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestFingerprint {
    pub template_version: String,
    pub wire_model: String,
    pub temperature: f64,
}

/// One model's attempt at one condition, archived whether or not it parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub condition: ConditionId,
    pub model: String,
    pub fingerprint: RequestFingerprint,
    /// Absent only when the call itself failed.
    pub raw_response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<ObservationCandidate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    pub timestamp: DateTime<Utc>,
}

impl GenRecord {
    pub fn is_success(&self) -> bool {
        self.candidates.is_some()
    }
}

fn generate_one(
    client: &dyn ChatClient,
    condition: &ConditionId,
    model: &ModelConfig,
    prompt: &str,
) -> GenRecord {
    let fingerprint = RequestFingerprint {
        template_version: template_version(),
        wire_model: model.wire_model().to_string(),
        temperature: model.temperature,
    };
    let (raw_response, attempts, parsed) = match client.complete(model, condition, prompt) {
        Ok(reply) => {
            let parsed =
                parse_llm_response(&reply.content, condition, &model.name).map_err(GenError::from);
            (Some(reply.content), reply.attempts, parsed)
        }
        Err(e) => (None, 0, Err(e)),
    };
    if let Err(e) = &parsed {
        tracing::warn!(model = %model.name, condition = %condition.code, error = %e, "generation failed");
    }
    let (candidates, error) = match parsed {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    GenRecord {
        condition: condition.clone(),
        model: model.name.clone(),
        fingerprint,
        raw_response,
        candidates,
        error,
        attempts,
        timestamp: Utc::now(),
    }
}

/// Query every model for one condition, at most `concurrency` at a time.
///
/// Per-model failures are recorded in the returned records; records come back
/// in `models` order.
pub fn generate_condition(
    condition: &ConditionId,
    models: &[ModelConfig],
    client: &dyn ChatClient,
    concurrency: usize,
) -> Result<Vec<GenRecord>, GenError> {
    if models.is_empty() {
        return Err(GenError::NoModels);
    }
    let prompt = render_prompt(condition)?;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<GenRecord>>> = models.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..concurrency.clamp(1, models.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= models.len() {
                    break;
                }
                let rec = generate_one(client, condition, &models[i], &prompt);
                *slots[i].lock().expect("slot") = Some(rec);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot").expect("filled"))
        .collect())
}

/// Candidate lists of the successful records, ready for pool building.
pub fn successful_candidates(
    condition: &str,
    records: &[GenRecord],
) -> Result<Vec<Vec<ObservationCandidate>>, GenError> {
    let lists: Vec<_> = records
        .iter()
        .filter_map(|r| r.candidates.clone())
        .collect();
    if lists.is_empty() {
        return Err(GenError::AllModelsFailed(condition.to_string()));
    }
    Ok(lists)
}

/// Re-parse archived raw replies; no network involved.
pub fn reparse(record: &GenRecord) -> Result<Vec<ObservationCandidate>, GenError> {
    let raw = record
        .raw_response
        .as_deref()
        .ok_or_else(|| GenError::EmptyResponse {
            model: record.model.clone(),
        })?;
    Ok(parse_llm_response(raw, &record.condition, &record.model)?)
}

/// Append-only JSONL archive of generation records.
pub struct GenArchive {
    file: Mutex<std::fs::File>,
}

impl GenArchive {
    pub fn open(path: &Path) -> Result<Self, GenError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, records: &[GenRecord]) -> Result<(), GenError> {
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r)?);
            buf.push('\n');
        }
        let mut f = self.file.lock().expect("archive lock");
        f.write_all(buf.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }
}

pub fn read_archive(path: &Path) -> Result<Vec<GenRecord>, GenError> {
    std::fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| GenError::Archive {
                line: i + 1,
                source,
            })
        })
        .collect()
}
