//! Evaluation harness: per-class ROC AUC, macro averaging, confusion metrics,
//! dataset label aliasing and benchmark orchestration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingProvider;
use crate::infer::{AggregationMode, InferError, InferenceConfig, ScoreRecord, Scorer};
use crate::kb::KnowledgeBase;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least one positive and one negative label (got {positives} positives, {negatives} negatives)")]
    DegenerateClass { positives: usize, negatives: usize },
    #[error("score is NaN")]
    NonFiniteScore,
    #[error("every class was skipped; no AUC to average")]
    AllClassesSkipped,
    #[error("predictions have {preds} entries but labels have {labels}")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no samples")]
    Empty,
    #[error("label {0:?} is not in the alias map")]
    UnmappedLabel(String),
    #[error("labels file line {line}: {message}")]
    Labels { line: usize, message: String },
    #[error("condition {0:?} is labeled but missing from the knowledge base")]
    UncoveredCondition(String),
    #[error("no score for sample {sample:?}, condition {condition:?}")]
    MissingScore { sample: String, condition: String },
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// ROC AUC by the Mann–Whitney rank-sum with mid-ranks for ties.
///
/// Ranks are kept doubled so the rank sum is an exact integer; the only
/// rounding is the final division.
pub fn roc_auc(scores: &[(f64, bool)]) -> Result<f64, EvalError> {
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(EvalError::NonFiniteScore);
    }
    let n_pos = scores.iter().filter(|(_, l)| *l).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::DegenerateClass {
            positives: n_pos,
            negatives: n_neg,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));

    // twice the positive rank sum
    let mut r2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]].0 == scores[order[start]].0 {
            end += 1;
        }
        // 1-based ranks start+1..=end, mid-rank doubled = start + end + 1
        let mid2 = (start + end + 1) as u128;
        let pos_in_group = order[start..end].iter().filter(|&&i| scores[i].1).count() as u128;
        r2 += mid2 * pos_in_group;
        start = end;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u2 = r2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

/// Unweighted mean over the given per-class AUCs.
pub fn macro_auc(per_class: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
    if per_class.is_empty() {
        return Err(EvalError::AllClassesSkipped);
    }
    Ok(per_class.values().sum::<f64>() / per_class.len() as f64)
}

/// Percent with one decimal, as the result tables print it.
pub fn display_pct(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

/// Support-weighted two-class average: each metric is computed once with
/// "positive" as the target and once with "negative" as the target, then
/// averaged with weights proportional to class support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedMetrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub weighted: WeightedMetrics,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMetrics {
    pub fn from_counts(tp: usize, fn_: usize, tn: usize, fp: usize) -> Result<Self, EvalError> {
        let n = tp + fn_ + tn + fp;
        if n == 0 {
            return Err(EvalError::Empty);
        }
        let nf = n as f64;
        let pos = tp + fn_;
        let neg = tn + fp;
        let w_pos = pos as f64 / nf;
        let w_neg = neg as f64 / nf;
        let accuracy = (tp + tn) as f64 / nf;
        let sensitivity = ratio(tp, pos);
        let specificity = ratio(tn, neg);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
        let f1_neg = ratio(2 * tn, 2 * tn + fp + fn_);
        // a class with zero support contributes with zero weight
        let term = |w: f64, x: Option<f64>| if w > 0.0 { w * x.unwrap_or(0.0) } else { 0.0 };
        let weighted = WeightedMetrics {
            accuracy,
            sensitivity: term(w_pos, sensitivity) + term(w_neg, specificity),
            specificity: term(w_pos, specificity) + term(w_neg, sensitivity),
            f1: term(w_pos, f1) + term(w_neg, f1_neg),
        };
        Ok(Self {
            tp,
            fn_,
            tn,
            fp,
            accuracy,
            sensitivity,
            specificity,
            f1,
            weighted,
        })
    }
}

pub fn confusion_metrics(preds: &[bool], labels: &[bool]) -> Result<ConfusionMetrics, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0, 0, 0, 0);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
        }
    }
    ConfusionMetrics::from_counts(tp, fn_, tn, fp)
}

/// Sample id to the set of labels it carries.
pub type LabelSets = BTreeMap<String, BTreeSet<String>>;

/// Parse a labels CSV: header `sample_id,labels`, labels separated by `;`.
pub fn parse_labels_csv(raw: &str) -> Result<LabelSets, EvalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || headers.get(0) != Some("sample_id") {
        return Err(EvalError::Labels {
            line: 1,
            message: "expected header `sample_id,labels`".into(),
        });
    }
    let mut out = LabelSets::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let id = row.get(0).unwrap_or_default();
        if id.is_empty() {
            return Err(EvalError::Labels {
                line,
                message: "empty sample_id".into(),
            });
        }
        let labels = row
            .get(1)
            .unwrap_or_default()
            .split(';')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if out.insert(id.to_string(), labels).is_some() {
            return Err(EvalError::Labels {
                line,
                message: format!("duplicate sample_id {id:?}"),
            });
        }
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<LabelSets, EvalError> {
    parse_labels_csv(&std::fs::read_to_string(path)?)
}

/// Dataset-local label names mapped onto canonical condition codes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelAliasMap {
    pub dataset_id: String,
    #[serde(default)]
    pub aliases: BTreeMap<String, String>,
    #[serde(default)]
    pub exclude: BTreeSet<String>,
}

impl LabelAliasMap {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// `Some(canonical)`, `None` if excluded; unknown labels pass through
    /// unchanged unless `strict`.
    pub fn map_label(&self, label: &str, strict: bool) -> Result<Option<String>, EvalError> {
        if self.exclude.contains(label) {
            return Ok(None);
        }
        match self.aliases.get(label) {
            Some(c) => Ok(Some(c.clone())),
            None if strict => Err(EvalError::UnmappedLabel(label.to_string())),
            None => Ok(Some(label.to_string())),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub samples: LabelSets,
    /// Samples dropped because every one of their labels was excluded.
    pub dropped: usize,
}

impl LabeledSet {
    pub fn conditions(&self) -> BTreeSet<&str> {
        self.samples
            .values()
            .flatten()
            .map(String::as_str)
            .collect()
    }
}

pub fn map_labels(
    raw: &LabelSets,
    aliases: Option<&LabelAliasMap>,
    strict: bool,
) -> Result<LabeledSet, EvalError> {
    let identity = LabelAliasMap::default();
    let map = aliases.unwrap_or(&identity);
    let mut out = LabeledSet::default();
    for (id, labels) in raw {
        let mut mapped = BTreeSet::new();
        for l in labels {
            if let Some(c) = map.map_label(l, strict)? {
                mapped.insert(c);
            }
        }
        if !labels.is_empty() && mapped.is_empty() {
            out.dropped += 1;
            continue;
        }
        out.samples.insert(id.clone(), mapped);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<AggregationMode>,
    pub n_samples: usize,
    pub dropped_samples: usize,
    pub per_class_auc: BTreeMap<String, f64>,
    pub macro_auc: f64,
    pub class_counts: BTreeMap<String, ClassCounts>,
    pub skipped_classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Pooled over every (sample, condition) cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMetrics>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_class_confusion: BTreeMap<String, ConfusionMetrics>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One-row AUC table in the layout of the zero-shot results table.
    pub fn render(&self, method: &str) -> String {
        let columns: Vec<&str> = self.per_class_auc.keys().map(String::as_str).collect();
        let values: Vec<f64> = self.per_class_auc.values().copied().collect();
        let mut out = render_auc_table(&columns, &[(method, &values)]);
        if !self.skipped_classes.is_empty() {
            let _ = writeln!(
                out,
                "skipped (single-class): {}",
                self.skipped_classes.join(", ")
            );
        }
        if let Some(c) = &self.confusion {
            out.push('\n');
            out.push_str(&render_confusion_table("Setting", &[(method, c)]));
        }
        out
    }
}

fn render_rows(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].chars().count())
                .chain([header[c].chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Method rows over AUC columns (fractions), with an "Average" column.
///
/// The average is taken over full-precision values and rounded only for display.
pub fn render_auc_table(columns: &[&str], rows: &[(&str, &[f64])]) -> String {
    let header: Vec<String> = std::iter::once("Methods")
        .chain(columns.iter().copied())
        .chain(["Average"])
        .map(String::from)
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, vals)| {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            std::iter::once(name.to_string())
                .chain(vals.iter().map(|v| display_pct(*v)))
                .chain([display_pct(mean)])
                .collect()
        })
        .collect();
    render_rows(&header, &body)
}

/// Rows of Accuracy / Sensitivity / Specificity / F1-score using the weighted block.
pub fn render_confusion_table(first: &str, rows: &[(&str, &ConfusionMetrics)]) -> String {
    let header: Vec<String> = [first, "Accuracy", "Sensitivity", "Specificity", "F1-score"]
        .into_iter()
        .map(String::from)
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, m)| {
            let w = &m.weighted;
            vec![
                name.to_string(),
                display_pct(w.accuracy),
                display_pct(w.sensitivity),
                display_pct(w.specificity),
                display_pct(w.f1),
            ]
        })
        .collect();
    render_rows(&header, &body)
}

/// Per-class AUC and optional confusion metrics from a score table.
///
/// Classes are the canonical conditions present in `labels`; classes with a
/// single label value are reported in `skipped_classes`.
pub fn evaluate_scores(
    records: &[ScoreRecord],
    labels: &LabeledSet,
    threshold: Option<f64>,
) -> Result<EvalReport, EvalError> {
    if labels.samples.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut by_cell: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    for r in records {
        by_cell.insert((r.ecg_id.as_str(), r.condition.as_str()), r.possibility);
    }
    let mut per_class_auc = BTreeMap::new();
    let mut class_counts = BTreeMap::new();
    let mut skipped_classes = Vec::new();
    let mut per_class_confusion = BTreeMap::new();
    let (mut all_preds, mut all_labels) = (Vec::new(), Vec::new());

    for code in labels.conditions() {
        let mut col = Vec::with_capacity(labels.samples.len());
        for (id, set) in &labels.samples {
            let s = by_cell
                .get(&(id.as_str(), code))
                .ok_or_else(|| EvalError::MissingScore {
                    sample: id.clone(),
                    condition: code.to_string(),
                })?;
            col.push((*s, set.contains(code)));
        }
        let n_pos = col.iter().filter(|(_, l)| *l).count();
        class_counts.insert(
            code.to_string(),
            ClassCounts {
                n_pos,
                n_neg: col.len() - n_pos,
            },
        );
        match roc_auc(&col) {
            Ok(auc) => {
                per_class_auc.insert(code.to_string(), auc);
            }
            Err(EvalError::DegenerateClass { .. }) => skipped_classes.push(code.to_string()),
            Err(e) => return Err(e),
        }
        if let Some(t) = threshold {
            let preds: Vec<bool> = col.iter().map(|(s, _)| *s > t).collect();
            let labs: Vec<bool> = col.iter().map(|(_, l)| *l).collect();
            per_class_confusion.insert(code.to_string(), confusion_metrics(&preds, &labs)?);
            all_preds.extend(preds);
            all_labels.extend(labs);
        }
    }
    let macro_auc = macro_auc(&per_class_auc)?;
    let confusion = match threshold {
        Some(_) => Some(confusion_metrics(&all_preds, &all_labels)?),
        None => None,
    };
    Ok(EvalReport {
        dataset_id: None,
        kb_version: None,
        mode: None,
        n_samples: labels.samples.len(),
        dropped_samples: labels.dropped,
        per_class_auc,
        macro_auc,
        class_counts,
        skipped_classes,
        threshold,
        confusion,
        per_class_confusion,
    })
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    pub report: EvalReport,
    /// Score table ordered by sample id, then condition code.
    pub records: Vec<ScoreRecord>,
}

/// Zero-shot scoring of every labeled sample followed by per-class AUC.
pub fn run_benchmark(
    provider: &dyn EmbeddingProvider,
    labels: &LabeledSet,
    kb: &KnowledgeBase,
    cfg: &InferenceConfig,
    jobs: usize,
    with_confusion: bool,
) -> Result<BenchmarkOutput, EvalError> {
    for code in labels.conditions() {
        if !kb.conditions.contains_key(code) {
            return Err(EvalError::UncoveredCondition(code.to_string()));
        }
    }
    let scorer = Scorer::new(kb, provider, *cfg)?;
    let ids: Vec<String> = labels.samples.keys().cloned().collect();
    let records: Vec<ScoreRecord> = scorer
        .classify_many(&ids, jobs)?
        .iter()
        .flat_map(|c| c.records().collect::<Vec<_>>())
        .collect();
    let mut report = evaluate_scores(&records, labels, with_confusion.then_some(cfg.threshold))?;
    report.kb_version = Some(kb.version.clone());
    report.mode = Some(cfg.mode);
    Ok(BenchmarkOutput { report, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(scores: &[(f64, bool)]) -> f64 {
        let (mut credit, mut pairs) = (0.0, 0.0);
        for (sp, _) in scores.iter().filter(|(_, l)| *l) {
            for (sn, _) in scores.iter().filter(|(_, l)| !*l) {
                pairs += 1.0;
                if sp > sn {
                    credit += 1.0;
                } else if sp == sn {
                    credit += 0.5;
                }
            }
        }
        credit / pairs
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> Vec<(f64, bool)> {
        let n = rng.gen_range(2..=200);
        // coarse grid forces plenty of ties
        let levels = rng.gen_range(2..=20);
        let mut v: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                (
                    rng.gen_range(0..levels) as f64 / levels as f64,
                    rng.gen_bool(0.4),
                )
            })
            .collect();
        v[0].1 = true;
        v[1].1 = false;
        v
    }

    #[test]
    fn auc_examples() {
        let s = [(0.9, true), (0.8, true), (0.3, false), (0.2, false)];
        assert_eq!(roc_auc(&s).unwrap(), 1.0);
        let ties = [(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        assert_eq!(roc_auc(&ties).unwrap(), 0.5);
        let mixed = [(0.9, true), (0.6, true), (0.7, false), (0.2, false)];
        assert_eq!(roc_auc(&mixed).unwrap(), 0.75);
    }

    #[test]
    fn auc_degenerate_and_nan() {
        assert!(matches!(
            roc_auc(&[(0.1, true), (0.2, true)]),
            Err(EvalError::DegenerateClass {
                positives: 2,
                negatives: 0
            })
        ));
        assert!(matches!(
            roc_auc(&[]),
            Err(EvalError::DegenerateClass { .. })
        ));
        assert!(matches!(
            roc_auc(&[(f64::NAN, true), (0.2, false)]),
            Err(EvalError::NonFiniteScore)
        ));
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let inst = random_instance(&mut rng);
            let fast = roc_auc(&inst).unwrap();
            assert!((fast - brute_auc(&inst)).abs() <= 1e-12);
        }
    }

    #[test]
    fn auc_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let inst = random_instance(&mut rng);
            let base = roc_auc(&inst).unwrap();
            for f in [
                (|x: f64| 1.0 / (1.0 + (-x).exp())) as fn(f64) -> f64,
                |x| 3.0 * x - 7.0,
                |x| x * x * x,
            ] {
                let t: Vec<_> = inst.iter().map(|(s, l)| (f(*s), *l)).collect();
                assert!((roc_auc(&t).unwrap() - base).abs() <= 1e-12);
            }
            let flipped: Vec<_> = inst.iter().map(|(s, l)| (*s, !l)).collect();
            assert!((roc_auc(&flipped).unwrap() + base - 1.0).abs() <= 1e-12);
            let mut shuffled = inst.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.gen_range(0..=i));
            }
            assert_eq!(roc_auc(&shuffled).unwrap(), base);
        }
    }

    #[test]
    fn macro_examples() {
        let m = |v: &[f64]| {
            let map: BTreeMap<String, f64> = v
                .iter()
                .enumerate()
                .map(|(i, x)| (i.to_string(), *x))
                .collect();
            macro_auc(&map)
        };
        assert_eq!(m(&[0.9]).unwrap(), 0.9);
        assert_abs_diff_eq!(m(&[1.0, 0.5, 0.75]).unwrap(), 0.75, epsilon = 1e-15);
        assert!(matches!(m(&[]), Err(EvalError::AllClassesSkipped)));
        let dbeta = m(&[0.762, 0.759, 0.661, 0.886, 0.801, 0.763]).unwrap();
        assert_eq!(display_pct(dbeta), "77.2");
    }

    #[test]
    fn confusion_examples() {
        let m = ConfusionMetrics::from_counts(6, 2, 1, 3).unwrap();
        assert_abs_diff_eq!(m.accuracy, 7.0 / 12.0, epsilon = 1e-15);
        assert_eq!(m.sensitivity, Some(0.75));
        assert_eq!(m.specificity, Some(0.25));
        assert_abs_diff_eq!(m.f1.unwrap(), 12.0 / 17.0, epsilon = 1e-15);

        let labels = [true, false, true, true, false];
        let perfect = confusion_metrics(&labels, &labels).unwrap();
        assert_eq!((perfect.accuracy, perfect.f1), (1.0, Some(1.0)));

        let no_pos = confusion_metrics(&[false, false], &[false, false]).unwrap();
        assert_eq!(no_pos.sensitivity, None);
        assert_eq!(no_pos.f1, None);
        assert_eq!(no_pos.specificity, Some(1.0));

        assert!(matches!(
            confusion_metrics(&[true], &[]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(confusion_metrics(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn confusion_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..60);
            let mut pairs: Vec<(bool, bool)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
            let split =
                |p: &[(bool, bool)]| -> (Vec<bool>, Vec<bool>) { p.iter().copied().unzip() };
            let (a, b) = split(&pairs);
            let base = confusion_metrics(&a, &b).unwrap();
            for i in (1..pairs.len()).rev() {
                pairs.swap(i, rng.gen_range(0..=i));
            }
            let (a, b) = split(&pairs);
            assert_eq!(confusion_metrics(&a, &b).unwrap(), base);
        }
    }

    #[test]
    fn weighted_rows_render_like_the_study_tables() {
        let guidance = ConfusionMetrics::from_counts(138, 10, 18, 15).unwrap();
        let table = render_confusion_table("Condition", &[("Guidance", &guidance)]);
        let row = table.lines().nth(1).unwrap();
        assert_eq!(
            row.split_whitespace().collect::<Vec<_>>(),
            ["Guidance", "86.2", "86.2", "61.6", "85.7"]
        );
    }

    #[test]
    fn auc_table_layout() {
        let vals = [0.762, 0.759, 0.661, 0.886, 0.801, 0.763];
        let t = render_auc_table(&["A", "B", "C", "D", "E", "F"], &[("D-BETA", &vals)]);
        let lines: Vec<_> = t.lines().collect();
        assert_eq!(lines[0].split_whitespace().last(), Some("Average"));
        assert_eq!(
            lines[1].split_whitespace().collect::<Vec<_>>(),
            ["D-BETA", "76.2", "75.9", "66.1", "88.6", "80.1", "76.3", "77.2"]
        );
    }

    #[test]
    fn labels_csv() {
        let raw = "sample_id,labels\ns1,AFIB;STACH\ns2,\ns3, NORM \n";
        let l = parse_labels_csv(raw).unwrap();
        assert_eq!(l["s1"], BTreeSet::from(["AFIB".into(), "STACH".into()]));
        assert!(l["s2"].is_empty());
        assert_eq!(l["s3"], BTreeSet::from(["NORM".into()]));
        assert!(parse_labels_csv("id,labels\ns1,A\n").is_err());
        assert!(parse_labels_csv("sample_id,labels\ns1,A\ns1,B\n").is_err());
    }

    #[test]
    fn alias_mapping() {
        let map: LabelAliasMap = serde_json::from_str(
            r#"{"dataset_id":"csn","aliases":{"atrial fibrillation":"AFIB","AFIB":"AFIB"},"exclude":["noise"]}"#,
        )
        .unwrap();
        assert_eq!(
            map.map_label("atrial fibrillation", true)
                .unwrap()
                .as_deref(),
            Some("AFIB")
        );
        assert_eq!(
            map.map_label("AFIB", true).unwrap().as_deref(),
            Some("AFIB")
        );
        assert!(matches!(map.map_label("SB", true), Err(EvalError::UnmappedLabel(l)) if l == "SB"));
        assert_eq!(map.map_label("SB", false).unwrap().as_deref(), Some("SB"));

        let raw = parse_labels_csv("sample_id,labels\na,atrial fibrillation;noise\nb,noise\nc,\n")
            .unwrap();
        let set = map_labels(&raw, Some(&map), true).unwrap();
        assert_eq!(set.dropped, 1);
        assert_eq!(set.samples.len(), 2);
        assert_eq!(set.conditions(), BTreeSet::from(["AFIB"]));

        let identity = map_labels(&raw, None, false).unwrap();
        assert!(identity.samples["a"].contains("atrial fibrillation"));
    }

    fn record(id: &str, cond: &str, p: f64) -> ScoreRecord {
        ScoreRecord {
            ecg_id: id.into(),
            condition: cond.into(),
            positive_score: 0.0,
            negative_score: 0.0,
            possibility: p,
            mode: AggregationMode::Pooled,
            observations: vec![],
        }
    }

    #[test]
    fn evaluate_skips_single_class_columns() {
        let labels = LabeledSet {
            samples: parse_labels_csv("sample_id,labels\na,X;Y\nb,Y\nc,\n").unwrap(),
            dropped: 0,
        };
        let records = vec![
            record("a", "X", 0.9),
            record("b", "X", 0.2),
            record("c", "X", 0.4),
            record("a", "Y", 0.7),
            record("b", "Y", 0.6),
            record("c", "Y", 0.1),
        ];
        let rep = evaluate_scores(&records, &labels, Some(0.5)).unwrap();
        assert_eq!(rep.per_class_auc["X"], 1.0);
        assert_eq!(rep.per_class_auc["Y"], 1.0);
        assert_eq!(rep.class_counts["Y"], ClassCounts { n_pos: 2, n_neg: 1 });
        let c = rep.confusion.unwrap();
        assert_eq!((c.tp, c.fn_, c.tn, c.fp), (3, 0, 3, 0));

        let only_pos = LabeledSet {
            samples: parse_labels_csv("sample_id,labels\na,X\nb,X\n").unwrap(),
            dropped: 0,
        };
        let err = evaluate_scores(&records, &only_pos, None).unwrap_err();
        assert!(matches!(err, EvalError::AllClassesSkipped));

        let missing = evaluate_scores(&records[..2], &labels, None).unwrap_err();
        assert!(matches!(missing, EvalError::MissingScore { .. }));
    }
}
