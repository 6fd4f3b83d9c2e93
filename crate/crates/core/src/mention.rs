//! Typed mention extraction with a prompted LLM.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::entity::MentionType;
use crate::llm::{LlmBackend, LlmError, EXTRACTION_MAX_TOKENS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub span_id: usize,
    pub label: String,
    #[serde(rename = "type")]
    pub mention_type: MentionType,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractionError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("no parseable JSON array in model output")]
    NoArrayFound,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Mentions recovered from one model output, plus the objects that were
/// skipped and why.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedMentions {
    pub mentions: Vec<Mention>,
    pub warnings: Vec<String>,
}

const PROMPT_HEAD: &str = "You are an information extraction assistant.\n\
Extract named entities from the following sentence and classify them into one of the following types: person, publication, venue.\n\
Let the output be a JSON array of objects with fields 'label' and 'type'.\n\
Not all types may be present in a sentence. Now extract entities from the following sentence:\n";

pub fn build_extraction_prompt(text: &str) -> Result<String, ExtractionError> {
    if text.trim().is_empty() {
        return Err(ExtractionError::EmptyInput);
    }
    Ok(format!("{PROMPT_HEAD}Sentence: \"{text}\"\nEntities:"))
}

/// Locates the first well-formed JSON array in `raw` and maps its objects
/// to mentions. Prose and code fences around the array are ignored; no
/// bracket repair is attempted.
pub fn parse_extraction_output(raw: &str) -> Result<ParsedMentions, ExtractionError> {
    let array = first_json_array(raw).ok_or(ExtractionError::NoArrayFound)?;
    let mut parsed = ParsedMentions::default();
    for (i, item) in array.iter().enumerate() {
        match mention_fields(item) {
            Ok((label, mention_type)) => parsed.mentions.push(Mention {
                span_id: parsed.mentions.len(),
                label,
                mention_type,
            }),
            Err(why) => parsed.warnings.push(format!("skipped entity #{i}: {why}")),
        }
    }
    Ok(parsed)
}

fn mention_fields(item: &Value) -> Result<(String, MentionType), String> {
    let obj = item.as_object().ok_or("not an object")?;
    let label = obj
        .get("label")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .ok_or("missing or empty label")?;
    let ty = obj
        .get("type")
        .and_then(Value::as_str)
        .ok_or("missing type")?;
    let mention_type = ty
        .parse::<MentionType>()
        .map_err(|_| format!("unknown type {ty:?}"))?;
    Ok((label.to_string(), mention_type))
}

fn first_json_array(raw: &str) -> Option<Vec<Value>> {
    raw.match_indices('[').find_map(|(start, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Array(items))) => Some(items),
            _ => None,
        }
    })
}

/// Serializes mentions in the model's output format. Parsing the result
/// yields the same mentions.
pub fn mentions_to_json(mentions: &[Mention]) -> String {
    let items: Vec<Value> = mentions
        .iter()
        .map(|m| serde_json::json!({"label": m.label, "type": m.mention_type.as_str()}))
        .collect();
    Value::Array(items).to_string()
}

pub async fn extract_mentions(
    text: &str,
    llm: &dyn LlmBackend,
) -> Result<ParsedMentions, ExtractionError> {
    let prompt = build_extraction_prompt(text)?;
    let raw = llm.generate(&prompt, EXTRACTION_MAX_TOKENS).await?;
    let parsed = parse_extraction_output(&raw)?;
    for w in &parsed.warnings {
        tracing::warn!("{w}");
    }
    Ok(parsed)
}
