use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    canonical_json, normalize_text, AliasMap, KbError, ObservationCandidate, Polarity, PoolKind,
    ReviewStatus,
};

/// Candidate observations awaiting (or under) expert review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub pool_kind: PoolKind,
    #[serde(default)]
    pub alias_map: AliasMap,
    pub candidates: Vec<ObservationCandidate>,
}

impl CandidatePool {
    pub fn from_json(text: &str) -> Result<Self, KbError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Sorted-key JSON; identical pools serialize to identical bytes.
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

    pub fn get(&self, id: &str) -> Option<&ObservationCandidate> {
        self.candidates.iter().find(|c| c.id == id)
    }

    pub(crate) fn get_mut(&mut self, id: &str) -> Option<&mut ObservationCandidate> {
        self.candidates.iter_mut().find(|c| c.id == id)
    }

    pub fn condition_codes(&self) -> BTreeSet<&str> {
        self.candidates
            .iter()
            .map(|c| c.condition.code.as_str())
            .collect()
    }

    pub fn candidates_for<'a>(
        &'a self,
        code: &'a str,
        polarity: Polarity,
    ) -> impl Iterator<Item = &'a ObservationCandidate> + 'a {
        self.candidates
            .iter()
            .filter(move |c| c.condition.code == code && c.polarity == polarity)
    }

    /// Number of (model, pair index) slots holding both a positive and a negative.
    pub fn pair_count(&self, code: &str) -> usize {
        let positives: HashSet<_> = self
            .candidates_for(code, Polarity::Positive)
            .filter_map(|c| c.pair_key())
            .collect();
        self.candidates_for(code, Polarity::Negative)
            .filter_map(|c| c.pair_key())
            .filter(|k| positives.contains(k))
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Merge parsed responses into a de-duplicated pool.
///
/// Condition labels are resolved through `alias_map`; for a cross-dataset pool
/// every label must resolve. Candidates with the same condition, polarity and
/// normalized text collapse to the one earliest by (source model, pair index).
/// The result depends only on the set of input candidates, not their order.
pub fn build_pool(
    responses: &[Vec<ObservationCandidate>],
    kind: PoolKind,
    alias_map: &AliasMap,
) -> Result<CandidatePool, KbError> {
    if responses.is_empty() {
        return Err(KbError::EmptyResponses);
    }

    let mut merged = Vec::new();
    for candidate in responses.iter().flatten() {
        let mut c = candidate.clone();
        match alias_map.get(&c.condition.code) {
            Some(canonical) => c.condition = canonical.clone(),
            None if kind == PoolKind::Cdcp => {
                return Err(KbError::UnmappedCondition(c.condition.code.clone()))
            }
            None => {}
        }
        c.normalized_text = normalize_text(&c.text);
        c.source_pool = match (&kind, c.source_pool.take()) {
            (PoolKind::Cdcp, Some(origin @ PoolKind::Dscp { .. })) => Some(origin),
            _ => Some(kind.clone()),
        };
        c.status = ReviewStatus::Unreviewed;
        c.history.clear();
        merged.push(c);
    }

    // Merged labels may disagree on the display name; pick one independent of input order.
    let mut display: BTreeMap<String, String> = BTreeMap::new();
    for c in &merged {
        display
            .entry(c.condition.code.clone())
            .and_modify(|d| {
                if c.condition.display_name < *d {
                    *d = c.condition.display_name.clone();
                }
            })
            .or_insert_with(|| c.condition.display_name.clone());
    }
    for c in &mut merged {
        c.condition.display_name = display[&c.condition.code].clone();
    }

    merged.sort_by(|a, b| {
        (
            &a.condition.code,
            a.polarity,
            &a.source_model,
            a.pair_index,
            &a.source_pool,
        )
            .cmp(&(
                &b.condition.code,
                b.polarity,
                &b.source_model,
                b.pair_index,
                &b.source_pool,
            ))
            .then_with(|| a.normalized_text.cmp(&b.normalized_text))
            .then_with(|| a.text.cmp(&b.text))
    });

    let mut seen = HashSet::new();
    merged.retain(|c| {
        seen.insert((
            c.condition.code.clone(),
            c.polarity,
            c.normalized_text.clone(),
        ))
    });
    for c in &mut merged {
        c.id = candidate_id(c);
    }

    Ok(CandidatePool {
        pool_kind: kind,
        alias_map: alias_map.clone(),
        candidates: merged,
    })
}

fn candidate_id(c: &ObservationCandidate) -> String {
    let mut hasher = Sha256::new();
    for part in [
        c.condition.code.as_str(),
        c.polarity.as_str(),
        c.normalized_text.as_str(),
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hex::encode(hasher.finalize());
    format!(
        "{}-{}-{}",
        c.condition.code,
        c.polarity.short(),
        &digest[..10]
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{parse_llm_response, ConditionId};
    use std::collections::BTreeSet;

    fn model_response(model: &str, code: &str, tag: &str) -> Vec<ObservationCandidate> {
        let pos: Vec<String> = (0..5).map(|i| format!("{tag} finding {i}")).collect();
        let neg: Vec<String> = (0..5).map(|i| format!("no {tag} finding {i}")).collect();
        let raw = serde_json::json!({ code: { "Positive": pos, "Negative": neg } }).to_string();
        parse_llm_response(&raw, &ConditionId::new(code, code), model).unwrap()
    }

    fn three_models() -> Vec<Vec<ObservationCandidate>> {
        vec![
            model_response("claude-3.5", "SR", "alpha"),
            model_response("llama-3.1", "SR", "beta"),
            model_response("mistral-large-2", "SR", "gamma"),
        ]
    }

    #[test]
    fn three_models_give_fifteen_pairs() {
        let pool = build_pool(&three_models(), PoolKind::dscp("ptbxl"), &AliasMap::new()).unwrap();
        assert_eq!(pool.candidates_for("SR", Polarity::Positive).count(), 15);
        assert_eq!(pool.candidates_for("SR", Polarity::Negative).count(), 15);
        assert_eq!(pool.pair_count("SR"), 15);
        let ids: BTreeSet<_> = pool.candidates.iter().map(|c| &c.id).collect();
        assert_eq!(ids.len(), 30);
    }

    #[test]
    fn building_twice_and_reordering_is_stable() {
        let responses = three_models();
        let a = build_pool(&responses, PoolKind::Cdcp, &identity(&["SR"])).unwrap();
        let b = build_pool(&responses, PoolKind::Cdcp, &identity(&["SR"])).unwrap();
        assert_eq!(a, b);
        let mut reversed = responses.clone();
        reversed.reverse();
        for r in &mut reversed {
            r.reverse();
        }
        let c = build_pool(&reversed, PoolKind::Cdcp, &identity(&["SR"])).unwrap();
        assert_eq!(a.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn duplicate_attributed_to_earliest_model() {
        let mut responses = three_models();
        // model B (llama) positive #2 repeats model A (claude) positive #0 modulo case/hyphens
        responses[1][2].text = "ALPHA  Finding-0.".to_string();
        let pool = build_pool(&responses, PoolKind::dscp("x"), &AliasMap::new()).unwrap();

        let mut oracle = BTreeSet::new();
        for c in responses
            .iter()
            .flatten()
            .filter(|c| c.polarity == Polarity::Positive)
        {
            oracle.insert(normalize_text(&c.text));
        }
        assert_eq!(oracle.len(), 14);

        let positives: Vec<_> = pool.candidates_for("SR", Polarity::Positive).collect();
        assert_eq!(positives.len(), 14);
        let dup: Vec<_> = positives
            .iter()
            .filter(|c| c.normalized_text == "alpha finding 0")
            .collect();
        assert_eq!(dup.len(), 1);
        assert_eq!(dup[0].source_model, "claude-3.5");
        assert_eq!(dup[0].pair_index, Some(0));
        assert_eq!(pool.pair_count("SR"), 14);
    }

    #[test]
    fn cdcp_requires_every_label_mapped() {
        let responses = vec![model_response("m", "AF", "fib")];
        assert!(matches!(
            build_pool(&responses, PoolKind::Cdcp, &AliasMap::new()),
            Err(KbError::UnmappedCondition(label)) if label == "AF"
        ));
    }

    #[test]
    fn aliases_merge_into_one_canonical_condition() {
        let responses = vec![
            model_response("m", "AF", "fib"),
            model_response("m", "AFIB", "fib"),
            model_response("m", "AFL", "flutter"),
        ];
        let mut aliases = AliasMap::new();
        let afib = ConditionId::new("AFIB", "Atrial Fibrillation");
        aliases.insert("AF".into(), afib.clone());
        aliases.insert("AFIB".into(), afib);
        aliases.insert("AFL".into(), ConditionId::new("AFLT", "Atrial Flutter"));
        let pool = build_pool(&responses, PoolKind::Cdcp, &aliases).unwrap();
        assert_eq!(
            pool.condition_codes().into_iter().collect::<Vec<_>>(),
            ["AFIB", "AFLT"]
        );
        // identical texts from the two aliases collapse
        assert_eq!(pool.candidates_for("AFIB", Polarity::Positive).count(), 5);
        assert!(pool
            .candidates
            .iter()
            .all(|c| c.condition.display_name != "AF" && c.source_pool == Some(PoolKind::Cdcp)));
    }

    fn identity(codes: &[&str]) -> AliasMap {
        codes
            .iter()
            .map(|c| (c.to_string(), ConditionId::new(*c, *c)))
            .collect()
    }
}
