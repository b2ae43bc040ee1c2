//! Blinded reader study: sample selection, sessions, answers and the report.
//!
//! Per condition, 3 + 3 ground-truth positives with the highest and lowest
//! possibility and the same for negatives are shown to experts without the
//! score or the label. The report splits expert accuracy by whether the
//! model's own thresholded prediction was right (Guidance) or wrong
//! (Misleading), and compares the model alone with expert answers.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{confusion_metrics, render_confusion_table, ConfusionMetrics, EvalError};

pub const DEFAULT_K_PER_ARM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StudyArm {
    PosHigh,
    PosLow,
    NegHigh,
    NegLow,
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("not enough samples for arm {arm:?} of {condition}: need {needed}, have {available}")]
    InsufficientSamples {
        condition: String,
        arm: StudyArm,
        needed: usize,
        available: usize,
    },
    #[error("k per arm must be at least 1")]
    InvalidK,
    #[error("score for {0:?} is NaN")]
    NonFiniteScore(String),
    #[error("duplicate sample {0:?} in scored input")]
    DuplicateSample(String),
    #[error("session {session:?} has no card for sample {sample:?} of {condition:?}")]
    UnknownCard {
        session: String,
        condition: String,
        sample: String,
    },
    #[error("answer is for session {found:?}, not {expected:?}")]
    WrongSession { expected: String, found: String },
    #[error("{expert} already answered {condition}/{sample} differently")]
    ConflictingAnswer {
        expert: String,
        condition: String,
        sample: String,
    },
    #[error("answer log line {line}: {source}")]
    LogLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Model score and ground truth of one sample for the condition under study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sample_id: String,
    pub possibility: f64,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blinding {
    pub hide_possibility: bool,
    pub hide_ground_truth: bool,
    #[serde(default)]
    pub hide_observation_scores: bool,
}

impl Default for Blinding {
    fn default() -> Self {
        Self {
            hide_possibility: true,
            hide_ground_truth: true,
            hide_observation_scores: false,
        }
    }
}

/// One planned card. Holds the private score and truth; never served as is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedSample {
    pub condition: String,
    pub sample_id: String,
    pub arm: StudyArm,
    pub possibility: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPlan {
    pub condition: String,
    pub seed: u64,
    pub blinding: Blinding,
    pub samples: Vec<PlannedSample>,
}

fn take_arm(
    condition: &str,
    pool: &[&ScoredSample],
    k: usize,
    high: bool,
    arm: StudyArm,
    used: &mut HashSet<String>,
) -> Result<Vec<PlannedSample>, StudyError> {
    let mut sorted: Vec<&ScoredSample> = pool
        .iter()
        .copied()
        .filter(|s| !used.contains(&s.sample_id))
        .collect();
    sorted.sort_by(|a, b| {
        let by_score = if high {
            b.possibility.total_cmp(&a.possibility)
        } else {
            a.possibility.total_cmp(&b.possibility)
        };
        by_score.then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    if sorted.len() < k {
        return Err(StudyError::InsufficientSamples {
            condition: condition.to_string(),
            arm,
            needed: k,
            available: sorted.len(),
        });
    }
    Ok(sorted[..k]
        .iter()
        .map(|s| {
            used.insert(s.sample_id.clone());
            PlannedSample {
                condition: condition.to_string(),
                sample_id: s.sample_id.clone(),
                arm,
                possibility: s.possibility,
                label: s.label,
            }
        })
        .collect())
}

/// Pick `k` highest and `k` lowest scored samples within each ground-truth class.
///
/// Arms are disjoint, ties go to the smaller sample id and the returned order
/// is shuffled with `seed` so the arm structure is not visible.
pub fn build_study_plan(
    condition: &str,
    scored: &[ScoredSample],
    k: usize,
    seed: u64,
) -> Result<StudyPlan, StudyError> {
    if k == 0 {
        return Err(StudyError::InvalidK);
    }
    let mut ids = HashSet::new();
    for s in scored {
        if s.possibility.is_nan() {
            return Err(StudyError::NonFiniteScore(s.sample_id.clone()));
        }
        if !ids.insert(s.sample_id.as_str()) {
            return Err(StudyError::DuplicateSample(s.sample_id.clone()));
        }
    }
    let positives: Vec<_> = scored.iter().filter(|s| s.label).collect();
    let negatives: Vec<_> = scored.iter().filter(|s| !s.label).collect();
    let mut used = HashSet::new();
    let mut samples = Vec::with_capacity(4 * k);
    samples.extend(take_arm(
        condition,
        &positives,
        k,
        true,
        StudyArm::PosHigh,
        &mut used,
    )?);
    samples.extend(take_arm(
        condition,
        &positives,
        k,
        false,
        StudyArm::PosLow,
        &mut used,
    )?);
    samples.extend(take_arm(
        condition,
        &negatives,
        k,
        true,
        StudyArm::NegHigh,
        &mut used,
    )?);
    samples.extend(take_arm(
        condition,
        &negatives,
        k,
        false,
        StudyArm::NegLow,
        &mut used,
    )?);
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(StudyPlan {
        condition: condition.to_string(),
        seed,
        blinding: Blinding::default(),
        samples,
    })
}

/// A study session: the planned cards of several conditions in shuffled order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySession {
    pub session_id: String,
    pub seed: u64,
    /// Threshold used to turn the model's possibility into a prediction.
    pub threshold: f64,
    pub blinding: Blinding,
    pub cards: Vec<PlannedSample>,
}

impl StudySession {
    pub fn new(
        session_id: impl Into<String>,
        plans: &[StudyPlan],
        threshold: f64,
        seed: u64,
    ) -> Self {
        let mut cards: Vec<PlannedSample> = plans
            .iter()
            .flat_map(|p| p.samples.iter().cloned())
            .collect();
        cards.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let hide_scores = plans.iter().any(|p| p.blinding.hide_observation_scores);
        Self {
            session_id: session_id.into(),
            seed,
            threshold,
            blinding: Blinding {
                hide_observation_scores: hide_scores,
                ..Blinding::default()
            },
            cards,
        }
    }

    pub fn load(path: &Path) -> Result<Self, StudyError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), StudyError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn card(&self, condition: &str, sample_id: &str) -> Option<&PlannedSample> {
        self.cards
            .iter()
            .find(|c| c.condition == condition && c.sample_id == sample_id)
    }

    /// Position and card of the first one `expert` has not answered yet.
    pub fn next_for<'a>(
        &'a self,
        answers: &AnswerBook,
        expert: &str,
    ) -> Option<(usize, &'a PlannedSample)> {
        self.cards
            .iter()
            .enumerate()
            .find(|(_, c)| answers.get(expert, &c.condition, &c.sample_id).is_none())
    }

    fn model_prediction(&self, card: &PlannedSample) -> bool {
        card.possibility > self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Diagnosis {
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyAnswer {
    pub session_id: String,
    pub condition: String,
    pub sample_id: String,
    pub expert_id: String,
    pub diagnosis: Diagnosis,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    New,
    Duplicate,
}

/// Recorded answers keyed by (expert, condition, sample).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnswerBook {
    answers: BTreeMap<(String, String, String), StudyAnswer>,
}

impl AnswerBook {
    pub fn get(&self, expert: &str, condition: &str, sample: &str) -> Option<&StudyAnswer> {
        self.answers.get(&(
            expert.to_string(),
            condition.to_string(),
            sample.to_string(),
        ))
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StudyAnswer> {
        self.answers.values()
    }

    /// Validate and store. An exact repeat (ignoring timestamp) is a no-op.
    pub fn record(
        &mut self,
        session: &StudySession,
        answer: StudyAnswer,
    ) -> Result<Recorded, StudyError> {
        if answer.session_id != session.session_id {
            return Err(StudyError::WrongSession {
                expected: session.session_id.clone(),
                found: answer.session_id,
            });
        }
        if session.card(&answer.condition, &answer.sample_id).is_none() {
            return Err(StudyError::UnknownCard {
                session: session.session_id.clone(),
                condition: answer.condition,
                sample: answer.sample_id,
            });
        }
        let key = (
            answer.expert_id.clone(),
            answer.condition.clone(),
            answer.sample_id.clone(),
        );
        match self.answers.get(&key) {
            Some(prev) if prev.diagnosis == answer.diagnosis => Ok(Recorded::Duplicate),
            Some(_) => Err(StudyError::ConflictingAnswer {
                expert: answer.expert_id,
                condition: answer.condition,
                sample: answer.sample_id,
            }),
            None => {
                self.answers.insert(key, answer);
                Ok(Recorded::New)
            }
        }
    }

    /// Rebuild from a log; duplicates replay as no-ops.
    pub fn replay<'a>(
        session: &StudySession,
        log: impl IntoIterator<Item = &'a StudyAnswer>,
    ) -> Result<Self, StudyError> {
        let mut book = Self::default();
        for a in log {
            book.record(session, a.clone())?;
        }
        Ok(book)
    }
}

pub fn read_answer_log(path: &Path) -> Result<Vec<StudyAnswer>, StudyError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    std::fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| StudyError::LogLine {
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn append_answer(path: &Path, answer: &StudyAnswer) -> Result<(), StudyError> {
    let mut line = serde_json::to_string(answer)?;
    line.push('\n');
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

pub const GUIDANCE: &str = "Guidance";
pub const MISLEADING: &str = "Misleading";
pub const MODEL_ONLY: &str = "ZETA";
pub const EXPERT_ASSISTED: &str = "Expert + ZETA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub name: String,
    pub n: usize,
    /// `None` when the row has no samples.
    pub metrics: Option<ConfusionMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub session_id: String,
    pub threshold: f64,
    pub n_cards: usize,
    pub n_answers: usize,
    /// Guidance, Misleading, ZETA, Expert + ZETA over every expert's answers.
    pub pooled: Vec<StudyRow>,
    pub per_expert: BTreeMap<String, Vec<StudyRow>>,
}

fn row(name: &str, preds: &[bool], labels: &[bool]) -> Result<StudyRow, StudyError> {
    let metrics = match confusion_metrics(preds, labels) {
        Ok(m) => Some(m),
        Err(EvalError::Empty) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(StudyRow {
        name: name.to_string(),
        n: preds.len(),
        metrics,
    })
}

fn rows_for<'a>(
    session: &StudySession,
    answers: impl Iterator<Item = &'a StudyAnswer>,
) -> Result<Vec<StudyRow>, StudyError> {
    let (mut g_pred, mut g_lab, mut m_pred, mut m_lab) = (vec![], vec![], vec![], vec![]);
    for a in answers {
        let card =
            session
                .card(&a.condition, &a.sample_id)
                .ok_or_else(|| StudyError::UnknownCard {
                    session: session.session_id.clone(),
                    condition: a.condition.clone(),
                    sample: a.sample_id.clone(),
                })?;
        let expert = a.diagnosis == Diagnosis::Present;
        if session.model_prediction(card) == card.label {
            g_pred.push(expert);
            g_lab.push(card.label);
        } else {
            m_pred.push(expert);
            m_lab.push(card.label);
        }
    }
    let model_pred: Vec<bool> = session
        .cards
        .iter()
        .map(|c| session.model_prediction(c))
        .collect();
    let model_lab: Vec<bool> = session.cards.iter().map(|c| c.label).collect();
    let all_pred: Vec<bool> = g_pred.iter().chain(&m_pred).copied().collect();
    let all_lab: Vec<bool> = g_lab.iter().chain(&m_lab).copied().collect();
    Ok(vec![
        row(GUIDANCE, &g_pred, &g_lab)?,
        row(MISLEADING, &m_pred, &m_lab)?,
        row(MODEL_ONLY, &model_pred, &model_lab)?,
        row(EXPERT_ASSISTED, &all_pred, &all_lab)?,
    ])
}

pub fn study_report(
    session: &StudySession,
    answers: &AnswerBook,
) -> Result<StudyReport, StudyError> {
    let experts: std::collections::BTreeSet<&str> =
        answers.iter().map(|a| a.expert_id.as_str()).collect();
    let mut per_expert = BTreeMap::new();
    for e in experts {
        per_expert.insert(
            e.to_string(),
            rows_for(session, answers.iter().filter(|a| a.expert_id == e))?,
        );
    }
    Ok(StudyReport {
        session_id: session.session_id.clone(),
        threshold: session.threshold,
        n_cards: session.cards.len(),
        n_answers: answers.len(),
        pooled: rows_for(session, answers.iter())?,
        per_expert,
    })
}

impl StudyReport {
    /// Two tables: the expert-accuracy split, then model alone vs. assisted.
    pub fn render(&self) -> String {
        let table = |first: &str, names: &[&str]| {
            let rows: Vec<(&str, &ConfusionMetrics)> = self
                .pooled
                .iter()
                .filter(|r| names.contains(&r.name.as_str()))
                .filter_map(|r| r.metrics.as_ref().map(|m| (r.name.as_str(), m)))
                .collect();
            render_confusion_table(first, &rows)
        };
        format!(
            "{}\n{}",
            table("Condition", &[GUIDANCE, MISLEADING]),
            table("Setting", &[MODEL_ONLY, EXPERT_ASSISTED])
        )
    }
}
