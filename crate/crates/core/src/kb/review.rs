use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{normalize_text, CandidatePool, KbError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewAction {
    Accept,
    Revise,
    Reject,
}

impl fmt::Display for ReviewAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReviewAction::Accept => "accept",
            ReviewAction::Revise => "revise",
            ReviewAction::Reject => "reject",
        })
    }
}

/// The four quality dimensions an expert judges an observation on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReviewReason {
    Correctness,
    Clarity,
    Directness,
    Contrast,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    #[default]
    Unreviewed,
    Accepted,
    Rejected,
}

/// One expert decision on one candidate. A review log is a sequence of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEvent {
    pub candidate_id: String,
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised_text: Option<String>,
    #[serde(default)]
    pub reasons: Vec<ReviewReason>,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// A review event as recorded on the candidate it changed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub action: ReviewAction,
    pub previous_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<ReviewReason>,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CandidatePool {
    /// Validate and apply one review event in place.
    ///
    /// On error the pool is left untouched.
    pub fn apply_review(&mut self, event: &ReviewEvent) -> Result<(), KbError> {
        let id = &event.candidate_id;
        let candidate = self
            .get_mut(id)
            .ok_or_else(|| KbError::UnknownCandidate(id.clone()))?;
        if candidate.status == ReviewStatus::Rejected {
            return Err(KbError::AlreadyRejected(id.clone()));
        }

        let reasons: Vec<ReviewReason> = event
            .reasons
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if event.action != ReviewAction::Accept && reasons.is_empty() {
            return Err(KbError::MissingReasons {
                candidate: id.clone(),
                action: event.action,
            });
        }

        let mut entry = ReviewEntry {
            action: event.action,
            previous_text: candidate.text.clone(),
            new_text: None,
            reasons,
            reviewer: event.reviewer.clone(),
            timestamp: event.timestamp,
            note: event.note.clone(),
        };

        match event.action {
            ReviewAction::Revise => {
                let revised = event
                    .revised_text
                    .as_deref()
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .ok_or_else(|| KbError::MissingRevisedText(id.clone()))?;
                let normalized = normalize_text(revised);
                if normalized.is_empty() {
                    return Err(KbError::MissingRevisedText(id.clone()));
                }
                if normalized == candidate.normalized_text {
                    return Err(KbError::UnchangedRevision(id.clone()));
                }
                entry.new_text = Some(revised.to_string());
                candidate.text = revised.to_string();
                candidate.normalized_text = normalized;
                candidate.status = ReviewStatus::Accepted;
            }
            ReviewAction::Accept | ReviewAction::Reject => {
                if event.revised_text.is_some() {
                    return Err(KbError::UnexpectedRevisedText {
                        candidate: id.clone(),
                        action: event.action,
                    });
                }
                candidate.status = if event.action == ReviewAction::Accept {
                    ReviewStatus::Accepted
                } else {
                    ReviewStatus::Rejected
                };
            }
        }
        candidate.history.push(entry);
        Ok(())
    }
}

/// Fold a review log over an initial pool.
pub fn replay<'a>(
    initial: &CandidatePool,
    events: impl IntoIterator<Item = &'a ReviewEvent>,
) -> Result<CandidatePool, KbError> {
    let mut pool = initial.clone();
    for event in events {
        pool.apply_review(event)?;
    }
    Ok(pool)
}

/// Read a JSON Lines review log. Blank lines are skipped.
pub fn read_review_log(path: impl AsRef<Path>) -> Result<Vec<ReviewEvent>, KbError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut events = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|source| KbError::LogLine {
            line: n + 1,
            source,
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Append one event as a single JSON line, flushing before returning.
pub fn append_review_event(path: impl AsRef<Path>, event: &ReviewEvent) -> Result<(), KbError> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut line = serde_json::to_string(event)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.sync_data()?;
    Ok(())
}
