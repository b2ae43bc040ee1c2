//! Observation-level scoring and condition classification.
//!
//! For one ECG and one condition, every observation embedding is compared to
//! the ECG embedding by dot product. Positive and negative similarities are
//! then weighed against each other in one of two ways:
//!
//! - [`AggregationMode::Pooled`]: `possibility = σ((mean(s⁺) − mean(s⁻)) / τ)`.
//! - [`AggregationMode::Paired`]: `possibility = meanᵢ σ((s⁺ᵢ − s⁻ᵢ) / τ)`, the
//!   two-way temperature softmax over each generated positive/negative pair.
//!
//! Pooled works for any knowledge base; Paired needs `paired = true`, which
//! expert review usually breaks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::kb::{KnowledgeBase, Polarity};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    #[default]
    Pooled,
    Paired,
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMode::Pooled => "pooled",
            AggregationMode::Paired => "paired",
        })
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pooled" => Ok(Self::Pooled),
            "paired" => Ok(Self::Paired),
            other => Err(format!(
                "unknown aggregation mode {other:?} (expected pooled or paired)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum InferError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTau(f64),
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("dimension mismatch: ECG has {ecg}, observation has {observation}")]
    DimMismatch { ecg: usize, observation: usize },
    #[error("condition {0:?} is not in the knowledge base")]
    UnknownCondition(String),
    #[error("condition {0:?} is not paired; use pooled aggregation")]
    PairingUnavailable(String),
    #[error("condition has no {0} observations")]
    EmptyPolarity(Polarity),
    #[error("knowledge base has no conditions")]
    EmptyKnowledgeBase,
    #[error("sample {id}: {source}")]
    Sample {
        id: String,
        #[source]
        source: Box<InferError>,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

fn default_tau() -> f64 {
    0.5
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub mode: AggregationMode,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            mode: AggregationMode::Pooled,
            threshold: 0.5,
        }
    }
}

impl InferenceConfig {
    pub fn new(tau: f64, mode: AggregationMode, threshold: f64) -> Result<Self, InferError> {
        let cfg = Self {
            tau,
            mode,
            threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), InferError> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(InferError::InvalidTau(self.tau));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(InferError::InvalidThreshold(self.threshold));
        }
        Ok(())
    }
}

/// Dot product accumulated in f64.
pub fn dot(a: &[f32], b: &[f32]) -> Result<f64, InferError> {
    if a.len() != b.len() {
        return Err(InferError::DimMismatch {
            ecg: a.len(),
            observation: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum())
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]` against rounding spill.
pub fn similarity(ecg: &[f32], observation: &[f32]) -> Result<f64, InferError> {
    Ok(dot(ecg, observation)?.clamp(-1.0, 1.0))
}

/// Standard logistic function.
///
/// Negative arguments are computed as `1 − σ(−x)` so that
/// `logistic(x) + logistic(−x) == 1.0` holds exactly in floating point.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        1.0 - 1.0 / (1.0 + x.exp())
    }
}

/// Two-way temperature softmax: `exp(s⁺/τ) / (exp(s⁺/τ) + exp(s⁻/τ))`.
pub fn pair_probability(s_pos: f64, s_neg: f64, tau: f64) -> f64 {
    logistic((s_pos - s_neg) / tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub positive_score: f64,
    pub negative_score: f64,
    pub possibility: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Combine per-observation similarities into condition-level scores.
///
/// Paired mode reads `positives[i]`/`negatives[i]` as pair `i`.
pub fn aggregate(
    positives: &[f64],
    negatives: &[f64],
    tau: f64,
    mode: AggregationMode,
) -> Result<Aggregate, InferError> {
    if positives.is_empty() {
        return Err(InferError::EmptyPolarity(Polarity::Positive));
    }
    if negatives.is_empty() {
        return Err(InferError::EmptyPolarity(Polarity::Negative));
    }
    let positive_score = mean(positives);
    let negative_score = mean(negatives);
    let possibility = match mode {
        AggregationMode::Pooled => logistic((positive_score - negative_score) / tau),
        AggregationMode::Paired => {
            if positives.len() != negatives.len() {
                return Err(InferError::PairingUnavailable(String::new()));
            }
            let probs: Vec<f64> = positives
                .iter()
                .zip(negatives)
                .map(|(&p, &n)| pair_probability(p, n, tau))
                .collect();
            mean(&probs)
        }
    };
    Ok(Aggregate {
        positive_score,
        negative_score,
        possibility,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationScore {
    pub text: String,
    pub polarity: Polarity,
    pub similarity: f64,
    /// Paired mode: this observation's share of its pair's two-way softmax.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionScore {
    pub condition: String,
    pub per_observation: Vec<ObservationScore>,
    pub positive_score: f64,
    pub negative_score: f64,
    pub possibility: f64,
    pub mode_used: AggregationMode,
}

#[derive(Debug, Clone)]
struct EmbeddedCondition {
    positives: Vec<(String, EmbeddingVector)>,
    negatives: Vec<(String, EmbeddingVector)>,
    paired: bool,
}

/// A knowledge base with every observation text embedded once.
#[derive(Debug, Clone)]
pub struct EmbeddedKnowledgeBase {
    version: String,
    dim: usize,
    unit_texts: bool,
    conditions: BTreeMap<String, EmbeddedCondition>,
}

impl EmbeddedKnowledgeBase {
    pub fn build(kb: &KnowledgeBase, provider: &dyn EmbeddingProvider) -> Result<Self, InferError> {
        Self::build_subset(kb, provider, None)
    }

    fn build_subset(
        kb: &KnowledgeBase,
        provider: &dyn EmbeddingProvider,
        only: Option<&str>,
    ) -> Result<Self, InferError> {
        let selected: Vec<_> = kb
            .conditions
            .iter()
            .filter(|(code, _)| only.is_none_or(|o| o == code.as_str()))
            .collect();
        let mut seen = BTreeSet::new();
        let texts: Vec<&str> = selected
            .iter()
            .flat_map(|(_, e)| e.positives.iter().chain(&e.negatives))
            .map(String::as_str)
            .filter(|t| seen.insert(*t))
            .collect();
        let vectors = provider.get_texts(&texts)?;
        let dim = provider.dim();
        let mut by_text: HashMap<&str, EmbeddingVector> = HashMap::with_capacity(texts.len());
        for (t, v) in texts.iter().zip(vectors) {
            if v.dim() != dim {
                return Err(EmbedError::DimMismatch {
                    expected: dim,
                    found: v.dim(),
                }
                .into());
            }
            by_text.insert(t, v);
        }
        let lookup = |list: &[String]| -> Vec<(String, EmbeddingVector)> {
            list.iter()
                .map(|t| (t.clone(), by_text[t.as_str()].clone()))
                .collect()
        };
        let conditions = selected
            .into_iter()
            .map(|(code, e)| {
                (
                    code.clone(),
                    EmbeddedCondition {
                        positives: lookup(&e.positives),
                        negatives: lookup(&e.negatives),
                        paired: e.paired,
                    },
                )
            })
            .collect();
        Ok(Self {
            version: kb.version.clone(),
            dim,
            unit_texts: provider.normalizes_text(),
            conditions,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn condition_codes(&self) -> impl Iterator<Item = &str> {
        self.conditions.keys().map(String::as_str)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.conditions.contains_key(code)
    }

    /// Score one ECG embedding against one condition.
    pub fn score(
        &self,
        ecg: &EmbeddingVector,
        code: &str,
        cfg: &InferenceConfig,
    ) -> Result<ConditionScore, InferError> {
        let cond = self
            .conditions
            .get(code)
            .ok_or_else(|| InferError::UnknownCondition(code.to_string()))?;
        if cfg.mode == AggregationMode::Paired && !cond.paired {
            return Err(InferError::PairingUnavailable(code.to_string()));
        }
        let sims = |list: &[(String, EmbeddingVector)]| -> Result<Vec<f64>, InferError> {
            list.iter()
                .map(|(_, v)| {
                    if self.unit_texts {
                        similarity(ecg.as_slice(), v.as_slice())
                    } else {
                        dot(ecg.as_slice(), v.as_slice())
                    }
                })
                .collect()
        };
        let s_pos = sims(&cond.positives)?;
        let s_neg = sims(&cond.negatives)?;
        let agg = aggregate(&s_pos, &s_neg, cfg.tau, cfg.mode).map_err(|e| match e {
            InferError::PairingUnavailable(_) => InferError::PairingUnavailable(code.to_string()),
            other => other,
        })?;

        let paired = cfg.mode == AggregationMode::Paired;
        let mut per_observation = Vec::with_capacity(s_pos.len() + s_neg.len());
        for (i, ((text, _), &s)) in cond.positives.iter().zip(&s_pos).enumerate() {
            per_observation.push(ObservationScore {
                text: text.clone(),
                polarity: Polarity::Positive,
                similarity: s,
                scaled: paired.then(|| pair_probability(s, s_neg[i], cfg.tau)),
            });
        }
        for (i, ((text, _), &s)) in cond.negatives.iter().zip(&s_neg).enumerate() {
            per_observation.push(ObservationScore {
                text: text.clone(),
                polarity: Polarity::Negative,
                similarity: s,
                scaled: paired.then(|| pair_probability(s, s_pos[i], cfg.tau)),
            });
        }
        Ok(ConditionScore {
            condition: code.to_string(),
            per_observation,
            positive_score: agg.positive_score,
            negative_score: agg.negative_score,
            possibility: agg.possibility,
            mode_used: cfg.mode,
        })
    }

    /// Score every condition; predict those whose possibility exceeds the threshold.
    pub fn classify(
        &self,
        ecg_id: &str,
        ecg: &EmbeddingVector,
        cfg: &InferenceConfig,
    ) -> Result<Classification, InferError> {
        if self.conditions.is_empty() {
            return Err(InferError::EmptyKnowledgeBase);
        }
        if ecg.dim() != self.dim {
            return Err(InferError::DimMismatch {
                ecg: ecg.dim(),
                observation: self.dim,
            });
        }
        let scores = self
            .conditions
            .keys()
            .map(|code| self.score(ecg, code, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let predicted = scores
            .iter()
            .filter(|s| s.possibility > cfg.threshold)
            .map(|s| s.condition.clone())
            .collect();
        Ok(Classification {
            ecg_id: ecg_id.to_string(),
            predicted,
            scores,
        })
    }
}

/// Multi-label prediction for one ECG plus the full score table.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub ecg_id: String,
    pub predicted: BTreeSet<String>,
    pub scores: Vec<ConditionScore>,
}

impl Classification {
    /// Condition with the highest possibility (first code wins ties).
    pub fn top(&self) -> Option<&ConditionScore> {
        self.scores
            .iter()
            .fold(None, |best: Option<&ConditionScore>, s| match best {
                Some(b) if b.possibility >= s.possibility => Some(b),
                _ => Some(s),
            })
    }

    pub fn records(&self) -> impl Iterator<Item = ScoreRecord> + '_ {
        self.scores
            .iter()
            .map(|s| ScoreRecord::from_score(&self.ecg_id, s))
    }
}

/// Scores ECGs against a knowledge base embedded once up front.
pub struct Scorer<'p> {
    provider: &'p dyn EmbeddingProvider,
    kb: EmbeddedKnowledgeBase,
    cfg: InferenceConfig,
}

impl<'p> Scorer<'p> {
    pub fn new(
        kb: &KnowledgeBase,
        provider: &'p dyn EmbeddingProvider,
        cfg: InferenceConfig,
    ) -> Result<Self, InferError> {
        cfg.validate()?;
        if kb.is_empty() {
            return Err(InferError::EmptyKnowledgeBase);
        }
        Ok(Self {
            provider,
            kb: EmbeddedKnowledgeBase::build(kb, provider)?,
            cfg,
        })
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.cfg
    }

    pub fn knowledge_base(&self) -> &EmbeddedKnowledgeBase {
        &self.kb
    }

    pub fn score_condition(&self, ecg_id: &str, code: &str) -> Result<ConditionScore, InferError> {
        let ecg = self.provider.get_ecg(ecg_id)?;
        self.kb.score(&ecg, code, &self.cfg)
    }

    pub fn classify(&self, ecg_id: &str) -> Result<Classification, InferError> {
        let ecg = self.provider.get_ecg(ecg_id)?;
        self.kb.classify(ecg_id, &ecg, &self.cfg)
    }

    /// Classify many ECGs on up to `jobs` threads; output follows input order.
    pub fn classify_many(
        &self,
        ids: &[String],
        jobs: usize,
    ) -> Result<Vec<Classification>, InferError> {
        let jobs = jobs.max(1).min(ids.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<Classification, InferError>>>> =
            ids.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..jobs {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= ids.len() {
                        break;
                    }
                    let r = self.classify(&ids[i]).map_err(|e| InferError::Sample {
                        id: ids[i].clone(),
                        source: Box::new(e),
                    });
                    *slots[i].lock().expect("slot") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot").expect("filled"))
            .collect()
    }
}

/// Score one condition for one ECG, embedding only that condition's observations.
pub fn score_condition(
    ecg_id: &str,
    code: &str,
    kb: &KnowledgeBase,
    provider: &dyn EmbeddingProvider,
    cfg: &InferenceConfig,
) -> Result<ConditionScore, InferError> {
    cfg.validate()?;
    if !kb.conditions.contains_key(code) {
        return Err(InferError::UnknownCondition(code.to_string()));
    }
    let embedded = EmbeddedKnowledgeBase::build_subset(kb, provider, Some(code))?;
    let ecg = provider.get_ecg(ecg_id)?;
    embedded.score(&ecg, code, cfg)
}

/// Classify one ECG against every condition of `kb`.
pub fn classify(
    ecg_id: &str,
    kb: &KnowledgeBase,
    provider: &dyn EmbeddingProvider,
    cfg: &InferenceConfig,
) -> Result<Classification, InferError> {
    Scorer::new(kb, provider, *cfg)?.classify(ecg_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub text: String,
    pub polarity: Polarity,
    pub similarity: f64,
}

/// One line of the score table: an (ECG, condition) pair with its evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub ecg_id: String,
    pub condition: String,
    pub positive_score: f64,
    pub negative_score: f64,
    pub possibility: f64,
    pub mode: AggregationMode,
    pub observations: Vec<ObservationRecord>,
}

impl ScoreRecord {
    pub fn from_score(ecg_id: &str, s: &ConditionScore) -> Self {
        Self {
            ecg_id: ecg_id.to_string(),
            condition: s.condition.clone(),
            positive_score: s.positive_score,
            negative_score: s.negative_score,
            possibility: s.possibility,
            mode: s.mode_used,
            observations: s
                .per_observation
                .iter()
                .map(|o| ObservationRecord {
                    text: o.text.clone(),
                    polarity: o.polarity,
                    similarity: o.similarity,
                })
                .collect(),
        }
    }
}

pub fn write_score_table<'a>(
    records: impl IntoIterator<Item = &'a ScoreRecord>,
) -> Result<String, serde_json::Error> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_score_table(text: &str) -> Result<Vec<ScoreRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
