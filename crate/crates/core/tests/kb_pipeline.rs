use std::collections::BTreeMap;
use std::path::PathBuf;

use zeta_core::kb::ConditionId;
use zeta_core::kb::{
    build_pool, export_reviewed, normalize_text, read_review_log, replay, AliasMap, CandidatePool,
    KnowledgeBase, Polarity, PoolKind,
};
use zeta_core::llmgen::{
    generate_condition, load_model_configs, reparse, successful_candidates, ChatClient, ChatReply,
    FixtureChatClient, GenError, ModelConfig,
};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn ami() -> ConditionId {
    ConditionId::new("AMI", "Anterior Myocardial Infarction")
}

fn models() -> Vec<ModelConfig> {
    load_model_configs(&fixtures().join("models.json")).unwrap()
}

#[test]
fn three_models_give_thirty_candidates_and_fifteen_pairs() {
    let client = FixtureChatClient::new(fixtures().join("llm"));
    let records = generate_condition(&ami(), &models(), &client, 3).unwrap();
    assert_eq!(records.len(), 3);
    assert!(records
        .iter()
        .all(|r| r.is_success() && r.raw_response.is_some()));

    let lists = successful_candidates("AMI", &records).unwrap();
    assert_eq!(lists.iter().map(Vec::len).sum::<usize>(), 30);

    let pool = build_pool(&lists, PoolKind::dscp("ptbxl-form"), &AliasMap::new()).unwrap();
    assert_eq!(pool.candidates.len(), 30);
    assert_eq!(pool.pair_count("AMI"), 15);

    // the archived raw reply alone reproduces the parse
    for r in &records {
        assert_eq!(&reparse(r).unwrap(), r.candidates.as_ref().unwrap());
    }
}

/// Serves the fixture replies but mangles one model's output.
struct OneBroken(FixtureChatClient);

impl ChatClient for OneBroken {
    fn complete(
        &self,
        model: &ModelConfig,
        condition: &ConditionId,
        prompt: &str,
    ) -> Result<ChatReply, GenError> {
        let mut reply = self.0.complete(model, condition, prompt)?;
        if model.name == "llama-3.1" {
            reply.content.truncate(reply.content.len() / 2);
        }
        Ok(reply)
    }
}

#[test]
fn one_malformed_model_does_not_abort_the_others() {
    let client = OneBroken(FixtureChatClient::new(fixtures().join("llm")));
    let records = generate_condition(&ami(), &models(), &client, 3).unwrap();
    assert_eq!(records.iter().filter(|r| r.is_success()).count(), 2);
    let failed: Vec<_> = records.iter().filter(|r| !r.is_success()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].model, "llama-3.1");
    assert!(failed[0].raw_response.is_some(), "raw reply kept for audit");
    assert!(failed[0].error.is_some());

    let pool = build_pool(
        &successful_candidates("AMI", &records).unwrap(),
        PoolKind::dscp("x"),
        &AliasMap::new(),
    )
    .unwrap();
    assert_eq!(pool.pair_count("AMI"), 10);
}

#[test]
fn all_models_failing_is_reported() {
    let client = FixtureChatClient::new(fixtures().join("nowhere"));
    let records = generate_condition(&ami(), &models(), &client, 2).unwrap();
    assert!(records
        .iter()
        .all(|r| !r.is_success() && r.raw_response.is_none()));
    assert!(matches!(
        successful_candidates("AMI", &records),
        Err(GenError::AllModelsFailed(_))
    ));
}

#[test]
fn cross_model_duplicates_collapse() {
    let client = FixtureChatClient::new(fixtures().join("llm"));
    let afib = ConditionId::new("AFIB", "Atrial Fibrillation");
    let records = generate_condition(&afib, &models(), &client, 3).unwrap();
    let lists = successful_candidates("AFIB", &records).unwrap();
    let pool = build_pool(&lists, PoolKind::dscp("ptbxl-rhythm"), &AliasMap::new()).unwrap();
    // "irregularly irregular r-r intervals" and "regular r-r intervals" come from two models each
    assert_eq!(pool.candidates.len(), 28);
}

fn table3() -> (CandidatePool, KnowledgeBase) {
    let dir = fixtures().join("table3");
    let pool = CandidatePool::load(dir.join("pool.json")).unwrap();
    let events = read_review_log(dir.join("review_log.jsonl")).unwrap();
    let reviewed = replay(&pool, &events).unwrap();
    (pool, export_reviewed(&reviewed).unwrap())
}

#[test]
fn table3_fixture_is_consistent() {
    let (pool, _) = table3();
    assert_eq!(pool.candidates.len(), 30);
    for c in &pool.candidates {
        assert_eq!(c.normalized_text, normalize_text(&c.text), "{}", c.id);
    }
}

#[test]
fn table3_review_replays_to_reviewed_column() {
    let (_, kb) = table3();
    let expected: BTreeMap<String, BTreeMap<String, Vec<String>>> = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("table3/expected_reviewed.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(kb.conditions.len(), 3);
    for (code, lists) in &expected {
        let entry = &kb.conditions[code];
        assert_eq!(
            entry.observations(Polarity::Positive),
            lists["positives"].as_slice(),
            "{code} positives"
        );
        assert_eq!(
            entry.observations(Polarity::Negative),
            lists["negatives"].as_slice(),
            "{code} negatives"
        );
    }
    let sarrh = &kb.conditions["SARRH"];
    assert_eq!(
        sarrh.positives,
        [
            "changes correlate with respiration",
            "irregular rr interval"
        ]
    );
    assert_eq!(sarrh.negatives, ["regular hrv", "regular rr interval"]);
    assert!(sarrh.paired);
}

#[test]
fn export_import_export_is_byte_identical() {
    let (_, kb) = table3();
    let first = kb.to_json().unwrap();
    let again = KnowledgeBase::from_json(&first).unwrap().to_json().unwrap();
    assert_eq!(first, again);
    assert!(kb.version.starts_with("sha256:"));
}
