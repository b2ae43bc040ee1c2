use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use zeta_core::embed::{EmbeddingProvider, ProviderConfig};
use zeta_core::infer::{EmbeddedKnowledgeBase, InferenceConfig};
use zeta_core::kb::{
    append_review_event, read_review_log, replay, CandidatePool, KnowledgeBase, ReviewEvent,
};
use zeta_core::study::{
    append_answer, read_answer_log, AnswerBook, Recorded, StudyAnswer, StudySession,
};

use crate::ServiceError;

fn default_listen() -> String {
    "127.0.0.1:8080".to_string()
}

/// Service settings; file values can be overridden by `ZETA_*` variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Holds `review_log.jsonl` and `studies/`.
    pub data_dir: PathBuf,
    /// Candidate pool before any review; never rewritten.
    pub pool: PathBuf,
    /// Where `/api/kb/export` writes, and the KB used for scoring if present.
    pub kb: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderConfig>,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
    /// Study cards link `{waveform_base_url}/{sample_id}.png` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveform_base_url: Option<String>,
    /// Environment variable holding an optional static bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
}

impl ServiceConfig {
    pub fn new(
        data_dir: impl Into<PathBuf>,
        pool: impl Into<PathBuf>,
        kb: impl Into<PathBuf>,
    ) -> Self {
        Self {
            listen: default_listen(),
            data_dir: data_dir.into(),
            pool: pool.into(),
            kb: kb.into(),
            provider: None,
            inference: InferenceConfig::default(),
            static_dir: None,
            waveform_base_url: None,
            token_env: None,
        }
    }

    pub fn apply_env(&mut self) {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        if let Some(v) = var("ZETA_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = var("ZETA_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("ZETA_POOL") {
            self.pool = v.into();
        }
        if let Some(v) = var("ZETA_KB") {
            self.kb = v.into();
        }
    }

    pub fn review_log(&self) -> PathBuf {
        self.data_dir.join("review_log.jsonl")
    }

    pub fn studies_dir(&self) -> PathBuf {
        self.data_dir.join("studies")
    }
}

pub struct ScoringContext {
    pub kb: KnowledgeBase,
    pub embedded: EmbeddedKnowledgeBase,
    pub provider: Arc<dyn EmbeddingProvider>,
}

pub struct SessionState {
    pub session: StudySession,
    pub answers: AnswerBook,
    pub log: PathBuf,
}

pub struct Inner {
    pub cfg: ServiceConfig,
    pub initial_pool: CandidatePool,
    pub pool: RwLock<CandidatePool>,
    /// Serializes every append to disk.
    pub writer: Mutex<()>,
    pub kb: RwLock<Option<KnowledgeBase>>,
    pub scoring: RwLock<Option<Arc<ScoringContext>>>,
    pub sessions: RwLock<BTreeMap<String, SessionState>>,
    pub token: Option<String>,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl std::ops::Deref for AppState {
    type Target = Inner;
    fn deref(&self) -> &Inner {
        &self.0
    }
}

fn load_sessions(dir: &Path) -> Result<BTreeMap<String, SessionState>, ServiceError> {
    let mut out = BTreeMap::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let session = StudySession::load(&path)?;
        let log = dir.join(format!("{}.answers.jsonl", session.session_id));
        let answers = AnswerBook::replay(&session, &read_answer_log(&log)?)?;
        tracing::info!(session = %session.session_id, answers = answers.len(), "loaded study session");
        out.insert(
            session.session_id.clone(),
            SessionState {
                session,
                answers,
                log,
            },
        );
    }
    Ok(out)
}

impl AppState {
    /// Rebuild all state from the pool file and the append-only logs.
    pub fn load(cfg: ServiceConfig) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(&cfg.data_dir)?;
        let initial_pool = CandidatePool::load(&cfg.pool)?;
        let log = cfg.review_log();
        let events = if log.exists() {
            read_review_log(&log)?
        } else {
            Vec::new()
        };
        let pool = replay(&initial_pool, &events)?;
        tracing::info!(
            events = events.len(),
            candidates = pool.candidates.len(),
            "replayed review log"
        );

        let kb = if cfg.kb.exists() {
            Some(KnowledgeBase::load(&cfg.kb)?)
        } else {
            None
        };
        let token = cfg
            .token_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok())
            .filter(|t| !t.is_empty());
        let sessions = load_sessions(&cfg.studies_dir())?;
        let state = Self(Arc::new(Inner {
            initial_pool,
            pool: RwLock::new(pool),
            writer: Mutex::new(()),
            kb: RwLock::new(None),
            scoring: RwLock::new(None),
            sessions: RwLock::new(sessions),
            token,
            cfg,
        }));
        if let Some(kb) = kb {
            state.set_kb(kb)?;
        }
        Ok(state)
    }

    /// Install a knowledge base and, with a provider configured, embed it for scoring.
    ///
    /// The provider is rebuilt for each knowledge base since planted synthetic
    /// embeddings depend on it.
    pub fn set_kb(&self, kb: KnowledgeBase) -> Result<(), ServiceError> {
        let scoring = match &self.cfg.provider {
            Some(cfg) => {
                let provider = cfg.build(Some(Arc::new(kb.clone())))?;
                Some(Arc::new(ScoringContext {
                    embedded: EmbeddedKnowledgeBase::build(&kb, provider.as_ref())?,
                    kb: kb.clone(),
                    provider,
                }))
            }
            None => None,
        };
        *self.kb.write().expect("kb lock") = Some(kb);
        *self.scoring.write().expect("scoring lock") = scoring;
        Ok(())
    }

    pub fn scoring(&self) -> Option<Arc<ScoringContext>> {
        self.scoring.read().expect("scoring lock").clone()
    }

    /// Validate, persist, then apply one review event.
    pub fn review(&self, event: ReviewEvent) -> Result<(), ServiceError> {
        let _w = self.writer.lock().expect("writer lock");
        let mut next = self.pool.read().expect("pool lock").clone();
        next.apply_review(&event)?;
        append_review_event(self.cfg.review_log(), &event)?;
        *self.pool.write().expect("pool lock") = next;
        tracing::info!(candidate = %event.candidate_id, action = %event.action, reviewer = %event.reviewer, "review recorded");
        Ok(())
    }

    pub fn answer(&self, answer: StudyAnswer) -> Result<Option<Recorded>, ServiceError> {
        let _w = self.writer.lock().expect("writer lock");
        let mut sessions = self.sessions.write().expect("sessions lock");
        let Some(state) = sessions.get_mut(&answer.session_id) else {
            return Ok(None);
        };
        let mut book = state.answers.clone();
        let recorded = book.record(&state.session, answer.clone())?;
        if recorded == Recorded::New {
            append_answer(&state.log, &answer)?;
            state.answers = book;
            tracing::info!(session = %answer.session_id, expert = %answer.expert_id, sample = %answer.sample_id, "answer recorded");
        }
        Ok(Some(recorded))
    }
}
