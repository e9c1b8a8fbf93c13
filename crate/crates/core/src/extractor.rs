//! Page selection, extraction-prompt synthesis, per-page record extraction
//! and deduplication.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;
use thiserror::Error;

use crate::gateway::prompts::{self, PromptError};
use crate::gateway::{purpose, GatewayError, Session};
use crate::model::{
    ExtractionSchema, FieldSpec, ModelError, Observation, Record, Scalar, TaskSpec, Trajectory,
};

/// Observation lines shown per step to the page selector.
pub const SUMMARY_LINES: usize = 40;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no JSON list of step numbers in selector output")]
    UnparsableList,
    #[error("selected steps out of range 1..={max}: {indices:?}")]
    OutOfRange { indices: Vec<i64>, max: usize },
    #[error("extraction prompt must name exactly one identifier field, found {0:?}")]
    NoIdentifier(Vec<String>),
    #[error("cannot read a schema from the extraction prompt: {0}")]
    SchemaParse(String),
    #[error("extraction response is not a JSON list")]
    NotAList,
}

fn int_list() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[\s*(?:-?\d+\s*(?:,\s*-?\d+\s*)*)?\]").expect("static regex"))
}

pub fn select_pages(
    nav_objective: &str,
    trajectory: &Trajectory,
    session: &Session,
) -> Result<Vec<u32>, ExtractError> {
    let steps: Vec<String> = trajectory
        .steps()
        .iter()
        .map(|s| {
            format!(
                "Step {}:\nReason: {}\nAction: {}\nObservation summary:\n{}",
                s.t,
                s.reasoning,
                s.action,
                s.observation.summary(SUMMARY_LINES)
            )
        })
        .collect();
    let user = format!(
        "Navigation objective:\n{nav_objective}\n\nInteraction history:\n{}",
        steps.join("\n\n")
    );
    let response = session.ask(
        purpose::SELECT,
        prompts::fixed(prompts::PAGE_SELECTION),
        user,
    )?;
    parse_selection(&response, trajectory.len())
}

/// Reads the last JSON integer list in `text` and checks it against
/// `1..=steps`. The result is sorted and duplicate-free.
pub fn parse_selection(text: &str, steps: usize) -> Result<Vec<u32>, ExtractError> {
    let raw = int_list()
        .find_iter(text)
        .last()
        .ok_or(ExtractError::UnparsableList)?;
    let indices: Vec<i64> =
        serde_json::from_str(raw.as_str()).map_err(|_| ExtractError::UnparsableList)?;
    let bad: Vec<i64> = indices
        .iter()
        .copied()
        .filter(|&i| i < 1 || i > steps as i64)
        .collect();
    if !bad.is_empty() {
        return Err(ExtractError::OutOfRange { indices: bad, max: steps });
    }
    let set: BTreeSet<u32> = indices.into_iter().map(|i| i as u32).collect();
    Ok(set.into_iter().collect())
}

pub fn synthesize_extraction_prompt(
    task: &TaskSpec,
    ie_objective: &str,
    session: &Session,
) -> Result<ExtractionSchema, ExtractError> {
    let user = format!("User goal:\n{ie_objective}\n\nOriginal task:\n{}", task.instruction);
    let response = session.ask(
        purpose::SCHEMA,
        prompts::fixed(prompts::EXTRACTION_PROMPT_ENGINEERING),
        user,
    )?;
    parse_schema(&response)
}

/// Every JSON value embedded in `text`, in order of appearance.
fn embedded_json(text: &str) -> Vec<(usize, usize, Value)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let Some(off) = rest.find(['[', '{']) else { break };
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v)) => {
                let end = start + stream.byte_offset();
                out.push((start, end, v));
                i = end;
            }
            _ => i = start + 1,
        }
    }
    out
}

/// Reads the schema from a synthesized extraction prompt: field names are
/// the keys of its example record, and exactly one field must be named on
/// a line that mentions an identifier.
pub fn parse_schema(prompt_text: &str) -> Result<ExtractionSchema, ExtractError> {
    let found = embedded_json(prompt_text);
    let (ex_start, ex_end, example) = found
        .into_iter()
        .find_map(|(s, e, v)| {
            let obj = match v {
                Value::Array(items) => items.into_iter().find_map(|i| match i {
                    Value::Object(o) => Some(o),
                    _ => None,
                }),
                Value::Object(o) => Some(o),
                _ => None,
            }?;
            (!obj.is_empty()).then_some((s, e, obj))
        })
        .ok_or_else(|| ExtractError::SchemaParse("no example record with fields".into()))?;
    let prose = format!("{}\n{}", &prompt_text[..ex_start], &prompt_text[ex_end..]);
    let names: Vec<String> = example.keys().cloned().collect();

    let mentions = |line: &str, quoted_only: bool| -> Vec<String> {
        names
            .iter()
            .filter(|n| {
                let quoted = ["`", "\"", "'"]
                    .iter()
                    .any(|q| line.contains(&format!("{q}{n}{q}")));
                quoted
                    || (!quoted_only
                        && Regex::new(&format!(r"\b{}\b", regex::escape(n)))
                            .map(|re| re.is_match(line))
                            .unwrap_or(false))
            })
            .cloned()
            .collect()
    };
    let id_lines: Vec<&str> = prose
        .lines()
        .filter(|l| l.to_lowercase().contains("identifier"))
        .collect();
    let mut candidates: BTreeSet<String> =
        id_lines.iter().flat_map(|l| mentions(l, true)).collect();
    if candidates.is_empty() {
        candidates = id_lines.iter().flat_map(|l| mentions(l, false)).collect();
    }
    if candidates.len() != 1 {
        return Err(ExtractError::NoIdentifier(candidates.into_iter().collect()));
    }
    let identifier_field = candidates.into_iter().next().expect("one candidate");

    let field_specs = names
        .iter()
        .map(|n| FieldSpec {
            name: n.clone(),
            description: prose
                .lines()
                .find(|l| !mentions(l, true).is_empty() && mentions(l, true).contains(n))
                .map(|l| l.trim().trim_start_matches(['-', '*', ' ']).to_string())
                .unwrap_or_default(),
        })
        .collect();
    let example_record: BTreeMap<String, Scalar> = example
        .iter()
        .map(|(k, v)| (k.clone(), to_scalar(v)))
        .collect();
    let schema = ExtractionSchema {
        field_specs,
        identifier_field,
        example_record,
        prompt_text: prompt_text.to_string(),
    };
    schema.validate()?;
    Ok(schema)
}

/// Nested values are kept as their JSON text.
fn to_scalar(v: &Value) -> Scalar {
    Scalar::from_json(v).unwrap_or_else(|| Scalar::Text(v.to_string()))
}

/// Extracts records from one page. Returns the records plus warnings for
/// skipped objects and dropped keys.
pub fn extract_fields(
    obs: &Observation,
    schema: &ExtractionSchema,
    session: &Session,
) -> Result<Vec<Record>, ExtractError> {
    let user = format!("Web page accessibility tree:\n{}", obs.ax_tree);
    let response = session.ask(purpose::EXTRACT, schema.prompt_text.clone(), user)?;
    let (records, warnings) = parse_records(&response, schema, obs.step_index)?;
    for w in warnings {
        session.warn(format!("extraction at step {}: {w}", obs.step_index));
    }
    Ok(records)
}

pub fn parse_records(
    text: &str,
    schema: &ExtractionSchema,
    source_step: u32,
) -> Result<(Vec<Record>, Vec<String>), ExtractError> {
    let value = match serde_json::from_str::<Value>(text.trim()) {
        Ok(v) => v,
        Err(_) => embedded_json(text)
            .into_iter()
            .map(|(_, _, v)| v)
            .find(Value::is_array)
            .ok_or(ExtractError::NotAList)?,
    };
    let Value::Array(items) = value else {
        return Err(ExtractError::NotAList);
    };
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        let Value::Object(obj) = item else {
            warnings.push(format!("entry {i} is not an object; skipped"));
            continue;
        };
        for key in obj.keys().filter(|k| !schema.has_field(k)) {
            warnings.push(format!("entry {i}: dropped unknown key `{key}`"));
        }
        let values: BTreeMap<String, Scalar> = schema
            .field_names()
            .map(|f| (f.to_string(), obj.get(f).map_or(Scalar::Null, to_scalar)))
            .collect();
        let record = Record { values, source_step };
        if record.identifier(schema).is_none() {
            warnings.push(format!(
                "entry {i}: identifier `{}` is missing; skipped",
                schema.identifier_field
            ));
            continue;
        }
        records.push(record);
    }
    Ok((records, warnings))
}

/// Keeps the first record per identifier value, preserving order. Returns
/// the kept records and the number dropped.
pub fn dedupe(records: Vec<Record>, schema: &ExtractionSchema) -> (Vec<Record>, usize) {
    let mut seen = HashSet::new();
    let before = records.len();
    let kept: Vec<Record> = records
        .into_iter()
        .filter(|r| match r.identifier(schema) {
            Some(id) => seen.insert(id.identity_key()),
            None => false,
        })
        .collect();
    let dropped = before - kept.len();
    (kept, dropped)
}
