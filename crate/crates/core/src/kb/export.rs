use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    canonical_json, normalize_text, CandidatePool, KbError, ObservationCandidate, Polarity,
    ReviewAction, ReviewStatus,
};

/// Reviewed observations for one condition, in knowledge-base order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEntry {
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    /// `positives[i]` and `negatives[i]` were generated as a pair, for every `i`.
    pub paired: bool,
}

impl ConditionEntry {
    pub fn observations(&self, polarity: Polarity) -> &[String] {
        match polarity {
            Polarity::Positive => &self.positives,
            Polarity::Negative => &self.negatives,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceRef {
    pub candidate_id: String,
    pub action: ReviewAction,
    pub timestamp: DateTime<Utc>,
}

/// The curated observation sets consumed by the scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub version: String,
    pub conditions: BTreeMap<String, ConditionEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<ProvenanceRef>,
}

impl KnowledgeBase {
    /// Build from condition sets, deriving the version from their content.
    pub fn new(conditions: BTreeMap<String, ConditionEntry>) -> Result<Self, KbError> {
        let version = content_version(&conditions)?;
        let kb = Self {
            version,
            conditions,
            provenance: Vec::new(),
        };
        kb.validate()?;
        Ok(kb)
    }

    pub fn from_json(text: &str) -> Result<Self, KbError> {
        let kb: Self = serde_json::from_str(text)?;
        kb.validate()?;
        Ok(kb)
    }

    pub fn to_json(&self) -> Result<String, KbError> {
        Ok(canonical_json(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), KbError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Every distinct observation text, in condition then list order.
    pub fn all_texts(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.conditions
            .values()
            .flat_map(|e| e.positives.iter().chain(&e.negatives))
            .map(String::as_str)
            .filter(|t| seen.insert(*t))
            .collect()
    }

    pub fn validate(&self) -> Result<(), KbError> {
        for (code, entry) in &self.conditions {
            if code.trim().is_empty() {
                return Err(KbError::InvalidKnowledgeBase("empty condition code".into()));
            }
            for polarity in [Polarity::Positive, Polarity::Negative] {
                let texts = entry.observations(polarity);
                if texts.is_empty() {
                    return Err(KbError::EmptyPolarity {
                        condition: code.clone(),
                        polarity,
                    });
                }
                let mut seen = HashSet::new();
                for t in texts {
                    if !seen.insert(normalize_text(t)) {
                        return Err(KbError::InvalidKnowledgeBase(format!(
                            "{code}: duplicate {polarity} observation {t:?}"
                        )));
                    }
                }
            }
            if entry.paired && entry.positives.len() != entry.negatives.len() {
                return Err(KbError::InvalidKnowledgeBase(format!(
                    "{code}: marked paired but has {} positives and {} negatives",
                    entry.positives.len(),
                    entry.negatives.len()
                )));
            }
        }
        Ok(())
    }
}

fn content_version(conditions: &BTreeMap<String, ConditionEntry>) -> Result<String, KbError> {
    let digest = Sha256::digest(canonical_json(conditions)?.as_bytes());
    Ok(format!("sha256:{}", &hex::encode(digest)[..16]))
}

/// Export only expert-accepted (possibly revised) observations.
pub fn export_reviewed(pool: &CandidatePool) -> Result<KnowledgeBase, KbError> {
    export_with(pool, |c| c.status == ReviewStatus::Accepted, None)
}

/// Export every candidate that was not rejected, reviewed or not.
///
/// `limit` caps the observations kept per polarity, taking them in pool order.
pub fn export_candidates(
    pool: &CandidatePool,
    limit: Option<usize>,
) -> Result<KnowledgeBase, KbError> {
    export_with(pool, |c| c.status != ReviewStatus::Rejected, limit)
}

fn export_with(
    pool: &CandidatePool,
    eligible: impl Fn(&ObservationCandidate) -> bool,
    limit: Option<usize>,
) -> Result<KnowledgeBase, KbError> {
    let mut conditions = BTreeMap::new();
    let mut provenance = Vec::new();

    for code in pool.condition_codes() {
        let mut lists: Vec<Vec<&ObservationCandidate>> = Vec::with_capacity(2);
        for polarity in [Polarity::Positive, Polarity::Negative] {
            let mut chosen: Vec<&ObservationCandidate> = pool
                .candidates_for(code, polarity)
                .filter(|c| eligible(c))
                .collect();
            chosen.sort_by(|a, b| {
                (&a.source_model, a.pair_index, &a.source_pool).cmp(&(
                    &b.source_model,
                    b.pair_index,
                    &b.source_pool,
                ))
            });
            let mut seen = HashSet::new();
            chosen.retain(|c| seen.insert(c.normalized_text.as_str()));
            if let Some(n) = limit {
                chosen.truncate(n);
            }
            if chosen.is_empty() {
                return Err(KbError::EmptyPolarity {
                    condition: code.to_string(),
                    polarity,
                });
            }
            lists.push(chosen);
        }
        let negatives = lists.pop().expect("two lists");
        let positives = lists.pop().expect("two lists");

        let paired = positives.len() == negatives.len()
            && positives
                .iter()
                .zip(&negatives)
                .all(|(p, n)| p.pair_key().is_some() && p.pair_key() == n.pair_key());

        for c in positives.iter().chain(&negatives) {
            provenance.extend(c.history.iter().map(|h| ProvenanceRef {
                candidate_id: c.id.clone(),
                action: h.action,
                timestamp: h.timestamp,
            }));
        }
        conditions.insert(
            code.to_string(),
            ConditionEntry {
                positives: positives
                    .iter()
                    .map(|c| c.normalized_text.clone())
                    .collect(),
                negatives: negatives
                    .iter()
                    .map(|c| c.normalized_text.clone())
                    .collect(),
                paired,
            },
        );
    }

    provenance.sort_by(|a, b| (a.timestamp, &a.candidate_id).cmp(&(b.timestamp, &b.candidate_id)));
    let mut kb = KnowledgeBase::new(conditions)?;
    kb.provenance = provenance;
    Ok(kb)
}
