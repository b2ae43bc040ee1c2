//! Structured clinical observations and the curated knowledge base.
//!
//! The pipeline is: raw LLM output is parsed into [`ObservationCandidate`]s,
//! candidates from several models are merged into a [`CandidatePool`], an
//! expert reviews the pool through [`ReviewEvent`]s, and the surviving
//! observations are exported as a [`KnowledgeBase`].

mod export;
mod normalize;
mod parse;
mod pool;
mod review;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{
    export_candidates, export_reviewed, ConditionEntry, KnowledgeBase, ProvenanceRef,
};
pub use normalize::normalize_text;
pub use parse::{parse_llm_response, OBSERVATIONS_PER_POLARITY};
pub use pool::{build_pool, CandidatePool};
pub use review::{
    append_review_event, read_review_log, replay, ReviewAction, ReviewEntry, ReviewEvent,
    ReviewReason, ReviewStatus,
};

/// A diagnostic condition: short code plus a human readable name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionId {
    pub code: String,
    pub display_name: String,
}

impl ConditionId {
    pub fn new(code: impl Into<String>, display_name: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            display_name: display_name.into(),
        }
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

/// Whether an observation argues for or against a condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "Positive",
            Polarity::Negative => "Negative",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }

    fn short(self) -> char {
        match self {
            Polarity::Positive => 'p',
            Polarity::Negative => 'n',
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dataset-specific pool (one benchmark's label set) or the merged cross-dataset pool.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PoolKind {
    Dscp { dataset_id: String },
    Cdcp,
}

impl PoolKind {
    pub fn dscp(dataset_id: impl Into<String>) -> Self {
        PoolKind::Dscp {
            dataset_id: dataset_id.into(),
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolKind::Dscp { dataset_id } => write!(f, "DSCP({dataset_id})"),
            PoolKind::Cdcp => f.write_str("CDCP"),
        }
    }
}

/// One LLM-generated observation together with its provenance and review state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationCandidate {
    pub id: String,
    pub condition: ConditionId,
    pub polarity: Polarity,
    pub text: String,
    pub normalized_text: String,
    pub source_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_pool: Option<PoolKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_index: Option<u8>,
    #[serde(default)]
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<ReviewEntry>,
}

impl ObservationCandidate {
    /// The text as generated, before any revision.
    pub fn original_text(&self) -> &str {
        self.history
            .iter()
            .find_map(|h| (h.action == ReviewAction::Revise).then_some(h.previous_text.as_str()))
            .unwrap_or(&self.text)
    }

    pub fn is_revised(&self) -> bool {
        self.history
            .iter()
            .any(|h| h.action == ReviewAction::Revise)
    }

    /// Key linking a positive to the negative generated alongside it.
    pub fn pair_key(&self) -> Option<(&str, u8)> {
        self.pair_index.map(|i| (self.source_model.as_str(), i))
    }
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("malformed JSON in LLM response: {0}")]
    MalformedJson(String),
    #[error("response has the wrong shape: {0}")]
    WrongShape(String),
    #[error("duplicate {polarity} observation for {condition}: {text:?}")]
    DuplicateObservation {
        condition: String,
        polarity: Polarity,
        text: String,
    },
    #[error("condition label {0:?} is not in the alias map")]
    UnmappedCondition(String),
    #[error("no responses to build a pool from")]
    EmptyResponses,
    #[error("unknown candidate {0:?}")]
    UnknownCandidate(String),
    #[error("revise event for {0:?} has no revised text")]
    MissingRevisedText(String),
    #[error("{action} event for {candidate:?} has no reasons")]
    MissingReasons {
        candidate: String,
        action: ReviewAction,
    },
    #[error("{action} event for {candidate:?} must not carry revised text")]
    UnexpectedRevisedText {
        candidate: String,
        action: ReviewAction,
    },
    #[error("revision of {0:?} is identical to the current text after normalization")]
    UnchangedRevision(String),
    #[error("candidate {0:?} was already rejected")]
    AlreadyRejected(String),
    #[error("condition {condition} has no {polarity} observations left")]
    EmptyPolarity {
        condition: String,
        polarity: Polarity,
    },
    #[error("invalid knowledge base: {0}")]
    InvalidKnowledgeBase(String),
    #[error("review log line {line}: {source}")]
    LogLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dataset-local condition label to canonical condition.
pub type AliasMap = BTreeMap<String, ConditionId>;

/// Pretty JSON with object keys in sorted order.
///
/// Going through `serde_json::Value` sorts keys, so the output is stable
/// regardless of struct field order and hashes reproducibly.
pub(crate) fn canonical_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let value = serde_json::to_value(value)?;
    let mut out = serde_json::to_string_pretty(&value)?;
    out.push('\n');
    Ok(out)
}
