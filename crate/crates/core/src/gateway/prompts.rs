//! Prompt catalog.
//!
//! Templates are stored as text assets under `prompts/`. Placeholders have
//! the form `{slot_name}` and are substituted in a single pass, so slot
//! values may themselves contain braces.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` needs slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("template `{template}` has no slot `{slot}`")]
    UnknownSlot { template: String, slot: String },
}

pub const DECOMPOSITION: &str = "decomposition";
pub const NAVIGATION: &str = "navigation";
pub const PLAN_GENERATION: &str = "plan_generation";
pub const PAGE_SELECTION: &str = "page_selection";
pub const EXTRACTION_PROMPT_ENGINEERING: &str = "extraction_prompt_engineering";
pub const DATA_ANALYSIS: &str = "data_analysis";
pub const REPLANNING: &str = "replanning";
pub const NAVIGATION_SPECIFICATIONS: &str = "navigation_specifications";
pub const ROUTER: &str = "router";
pub const JUDGE: &str = "judge";
pub const REFLECTION: &str = "reflection";
pub const ACTION_OUTPUT_SPEC: &str = "action_output_spec";
pub const REPLAN_OUTPUT_SPEC: &str = "replan_output_spec";

const TEMPLATES: &[(&str, &str)] = &[
    (DECOMPOSITION, include_str!("../../prompts/decomposition.txt")),
    (NAVIGATION, include_str!("../../prompts/navigation.txt")),
    (PLAN_GENERATION, include_str!("../../prompts/plan_generation.txt")),
    (PAGE_SELECTION, include_str!("../../prompts/page_selection.txt")),
    (
        EXTRACTION_PROMPT_ENGINEERING,
        include_str!("../../prompts/extraction_prompt_engineering.txt"),
    ),
    (DATA_ANALYSIS, include_str!("../../prompts/data_analysis.txt")),
    (REPLANNING, include_str!("../../prompts/replanning.txt")),
    (
        NAVIGATION_SPECIFICATIONS,
        include_str!("../../prompts/navigation_specifications.txt"),
    ),
    (ROUTER, include_str!("../../prompts/router.txt")),
    (JUDGE, include_str!("../../prompts/judge.txt")),
    (REFLECTION, include_str!("../../prompts/reflection.txt")),
    (ACTION_OUTPUT_SPEC, include_str!("../../prompts/action_output_spec.txt")),
    (REPLAN_OUTPUT_SPEC, include_str!("../../prompts/replan_output_spec.txt")),
];

const TIPS: &[(&str, &str)] = &[
    ("shopping", include_str!("../../prompts/tips/shopping.txt")),
    ("shopping_admin", include_str!("../../prompts/tips/shopping_admin.txt")),
    ("reddit", include_str!("../../prompts/tips/reddit.txt")),
    ("gitlab", include_str!("../../prompts/tips/gitlab.txt")),
];

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("static regex"))
}

pub fn template(id: &str) -> Result<&'static str, PromptError> {
    TEMPLATES
        .iter()
        .find(|(k, _)| *k == id)
        .map(|(_, t)| *t)
        .ok_or_else(|| PromptError::UnknownTemplate(id.to_string()))
}

pub fn template_ids() -> impl Iterator<Item = &'static str> {
    TEMPLATES.iter().map(|(k, _)| *k)
}

/// Slot names a template requires, in order of first appearance.
pub fn slots(id: &str) -> Result<Vec<&'static str>, PromptError> {
    let text = template(id)?;
    let mut out: Vec<&'static str> = Vec::new();
    for c in placeholder().captures_iter(text) {
        let name = c.get(1).expect("group").as_str();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    Ok(out)
}

pub fn render_prompt(id: &str, slots: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let text = template(id)?;
    let wanted = self::slots(id)?;
    if let Some(extra) = slots.keys().find(|k| !wanted.contains(k)) {
        return Err(PromptError::UnknownSlot {
            template: id.to_string(),
            slot: extra.to_string(),
        });
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for c in placeholder().captures_iter(text) {
        let whole = c.get(0).expect("match");
        let name = &c[1];
        let value = slots.get(name).ok_or_else(|| PromptError::MissingSlot {
            template: id.to_string(),
            slot: name.to_string(),
        })?;
        out.push_str(&text[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&text[last..]);
    Ok(out)
}

/// Renders a template that has no slots.
pub fn fixed(id: &str) -> String {
    render_prompt(id, &BTreeMap::new()).expect("slot-free template")
}

/// Built-in website tips by site kind (`shopping`, `shopping_admin`,
/// `reddit`, `gitlab`).
pub fn website_tips(kind: &str) -> Option<&'static str> {
    TIPS.iter().find(|(k, _)| *k == kind).map(|(_, t)| *t)
}
