use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use zeta_core::embed::{EmbedError, EmbeddingProvider, EmbeddingVector, SyntheticProvider};
use zeta_core::eval::{run_benchmark, EvalError, LabeledSet};
use zeta_core::infer::InferenceConfig;
use zeta_core::kb::{ConditionEntry, KnowledgeBase};

const CODES: [&str; 4] = ["AFIB", "STACH", "SBRAD", "PACE"];

fn planted_kb(pairs: usize) -> Arc<KnowledgeBase> {
    let conditions = CODES
        .iter()
        .map(|c| {
            (
                c.to_string(),
                ConditionEntry {
                    positives: (0..pairs).map(|i| format!("{c} finding {i}")).collect(),
                    negatives: (0..pairs)
                        .map(|i| format!("{c} absent finding {i}"))
                        .collect(),
                    paired: true,
                },
            )
        })
        .collect();
    Arc::new(KnowledgeBase::new(conditions).unwrap())
}

fn planted_labels(per_class: usize) -> LabeledSet {
    let mut samples = BTreeMap::new();
    for c in CODES {
        for i in 0..per_class {
            samples.insert(format!("{c}_{i:03}"), BTreeSet::from([c.to_string()]));
        }
    }
    LabeledSet {
        samples,
        dropped: 0,
    }
}

fn planted_provider(kb: &Arc<KnowledgeBase>, labels: &LabeledSet, sigma: f64) -> SyntheticProvider {
    let planted: HashMap<String, Vec<String>> = labels
        .samples
        .iter()
        .map(|(id, l)| (id.clone(), l.iter().cloned().collect()))
        .collect();
    SyntheticProvider::new(42, 64).planted(kb.clone(), planted, sigma)
}

/// Wraps a provider and counts text embedding requests per text.
struct Counting<P> {
    inner: P,
    text_calls: Mutex<HashMap<String, usize>>,
    ecg_calls: AtomicUsize,
}

impl<P: EmbeddingProvider> EmbeddingProvider for Counting<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn get_text(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        *self
            .text_calls
            .lock()
            .unwrap()
            .entry(text.to_string())
            .or_default() += 1;
        self.inner.get_text(text)
    }
    fn get_ecg(&self, id: &str) -> Result<EmbeddingVector, EmbedError> {
        self.ecg_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.get_ecg(id)
    }
}

#[test]
fn planted_benchmark_recovers_ground_truth() {
    let kb = planted_kb(3);
    let labels = planted_labels(50);
    let provider = Counting {
        inner: planted_provider(&kb, &labels, 0.1),
        text_calls: Mutex::new(HashMap::new()),
        ecg_calls: AtomicUsize::new(0),
    };
    let out = run_benchmark(
        &provider,
        &labels,
        &kb,
        &InferenceConfig::default(),
        4,
        true,
    )
    .unwrap();
    assert!(
        out.report.macro_auc >= 0.95,
        "macro AUC {}",
        out.report.macro_auc
    );
    assert_eq!(out.report.per_class_auc.len(), 4);
    assert_eq!(out.records.len(), 200 * 4);

    let calls = provider.text_calls.lock().unwrap();
    assert_eq!(calls.len(), kb.all_texts().len());
    assert!(
        calls.values().all(|&n| n == 1),
        "each observation text embedded once"
    );
    assert_eq!(provider.ecg_calls.load(Ordering::Relaxed), 200);
}

#[test]
fn report_is_independent_of_sample_order_and_jobs() {
    let kb = planted_kb(2);
    let labels = planted_labels(10);
    let provider = planted_provider(&kb, &labels, 0.3);
    let cfg = InferenceConfig::default();
    let a = run_benchmark(&provider, &labels, &kb, &cfg, 1, true).unwrap();
    let b = run_benchmark(&provider, &labels, &kb, &cfg, 7, true).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.records, b.records);
}

#[test]
fn uncovered_condition_is_named() {
    let kb = planted_kb(2);
    let mut labels = planted_labels(3);
    labels
        .samples
        .insert("x".into(), BTreeSet::from(["LBBB".to_string()]));
    let provider = planted_provider(&kb, &labels, 0.0);
    let err = run_benchmark(
        &provider,
        &labels,
        &kb,
        &InferenceConfig::default(),
        2,
        false,
    )
    .unwrap_err();
    assert!(
        matches!(err, EvalError::UncoveredCondition(ref c) if c == "LBBB"),
        "{err}"
    );
}
