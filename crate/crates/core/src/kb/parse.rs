use std::collections::HashSet;

use serde_json::{Map, Value};

use super::{normalize_text, ConditionId, KbError, ObservationCandidate, Polarity, ReviewStatus};

/// Observations the generation prompt asks for, per polarity.
pub const OBSERVATIONS_PER_POLARITY: usize = 5;

/// Parse one model's reply into ten paired candidates.
///
/// The reply may wrap the JSON object in code fences or prose; everything
/// outside the outermost braces is ignored. The single top-level key must name
/// the condition (display name or code, case-insensitive).
pub fn parse_llm_response(
    raw: &str,
    condition: &ConditionId,
    source_model: &str,
) -> Result<Vec<ObservationCandidate>, KbError> {
    let json = extract_object(raw)
        .ok_or_else(|| KbError::MalformedJson("no JSON object found".to_string()))?;
    let value: Value =
        serde_json::from_str(json).map_err(|e| KbError::MalformedJson(e.to_string()))?;
    let top = value
        .as_object()
        .ok_or_else(|| KbError::WrongShape("top level is not an object".to_string()))?;
    if top.len() != 1 {
        return Err(KbError::WrongShape(format!(
            "expected exactly one condition key, found {}",
            top.len()
        )));
    }
    let (key, body) = top.iter().next().expect("one entry");
    if !names_condition(key, condition) {
        return Err(KbError::WrongShape(format!(
            "condition key {key:?} does not match {:?}",
            condition.display_name
        )));
    }
    let body = body
        .as_object()
        .ok_or_else(|| KbError::WrongShape(format!("value under {key:?} is not an object")))?;

    let mut out = Vec::with_capacity(2 * OBSERVATIONS_PER_POLARITY);
    for polarity in [Polarity::Positive, Polarity::Negative] {
        let texts = polarity_list(body, polarity)?;
        let mut seen = HashSet::new();
        for (index, text) in texts.into_iter().enumerate() {
            let normalized = normalize_text(&text);
            if normalized.is_empty() {
                return Err(KbError::WrongShape(format!(
                    "{polarity} observation #{index} is empty"
                )));
            }
            if !seen.insert(normalized.clone()) {
                return Err(KbError::DuplicateObservation {
                    condition: condition.code.clone(),
                    polarity,
                    text,
                });
            }
            out.push(ObservationCandidate {
                id: format!(
                    "{source_model}/{}/{}{index}",
                    condition.code,
                    polarity.short()
                ),
                condition: condition.clone(),
                polarity,
                text: text.trim().to_string(),
                normalized_text: normalized,
                source_model: source_model.to_string(),
                source_pool: None,
                pair_index: Some(index as u8),
                status: ReviewStatus::Unreviewed,
                history: Vec::new(),
            });
        }
    }
    Ok(out)
}

fn extract_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

fn names_condition(key: &str, condition: &ConditionId) -> bool {
    let key = key.trim();
    key.eq_ignore_ascii_case(condition.display_name.trim())
        || key.eq_ignore_ascii_case(&condition.code)
}

fn polarity_list(body: &Map<String, Value>, polarity: Polarity) -> Result<Vec<String>, KbError> {
    let value = body
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(polarity.as_str()))
        .map(|(_, v)| v)
        .ok_or_else(|| KbError::WrongShape(format!("missing {:?} list", polarity.as_str())))?;
    let items = value
        .as_array()
        .ok_or_else(|| KbError::WrongShape(format!("{polarity} is not a list")))?;
    if items.len() != OBSERVATIONS_PER_POLARITY {
        return Err(KbError::WrongShape(format!(
            "expected {OBSERVATIONS_PER_POLARITY} {polarity} observations, found {}",
            items.len()
        )));
    }
    items
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| KbError::WrongShape(format!("{polarity} entry is not a string")))
        })
        .collect()
}
