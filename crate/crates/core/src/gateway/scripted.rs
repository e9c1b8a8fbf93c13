use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, GatewayError};

/// How an entry recognises a request. Serialized as a plain string; a `re:`
/// prefix marks a regular expression.
#[derive(Debug, Clone)]
pub enum Matcher {
    Any,
    Substring(String),
    Regex(Regex),
}

impl Matcher {
    pub fn parse(raw: &str) -> Result<Self, GatewayError> {
        if raw.is_empty() {
            Ok(Matcher::Any)
        } else if let Some(pattern) = raw.strip_prefix("re:") {
            Regex::new(pattern)
                .map(Matcher::Regex)
                .map_err(|e| GatewayError::Config(format!("bad fixture regex `{pattern}`: {e}")))
        } else {
            Ok(Matcher::Substring(raw.to_string()))
        }
    }

    fn hits(&self, content: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Substring(s) => content.contains(s.as_str()),
            Matcher::Regex(re) => re.is_match(content),
        }
    }

    fn raw(&self) -> String {
        match self {
            Matcher::Any => String::new(),
            Matcher::Substring(s) => s.clone(),
            Matcher::Regex(re) => format!("re:{}", re.as_str()),
        }
    }
}

impl PartialEq for Matcher {
    fn eq(&self, other: &Self) -> bool {
        self.raw() == other.raw()
    }
}

/// One fixture entry as stored in the fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match", default)]
    pub matcher: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<String>,
    pub response: String,
    /// Restricts the entry to one task id when a file drives a whole batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
}

impl ScriptEntry {
    pub fn new(purpose: &str, matcher: &str, response: impl Into<String>) -> Self {
        ScriptEntry {
            matcher: matcher.to_string(),
            purpose: Some(purpose.to_string()),
            response: response.into(),
            task: None,
        }
    }

    pub fn for_task(mut self, task_id: &str) -> Self {
        self.task = Some(task_id.to_string());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScriptedFixture {
    pub entries: Vec<ScriptEntry>,
}

impl ScriptedFixture {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    /// Entries that apply to `task_id`: its own plus unscoped ones.
    pub fn for_task(&self, task_id: &str) -> ScriptedFixture {
        ScriptedFixture {
            entries: self
                .entries
                .iter()
                .filter(|e| e.task.as_deref().is_none_or(|t| t == task_id))
                .cloned()
                .collect(),
        }
    }

    pub fn push(&mut self, entry: ScriptEntry) {
        self.entries.push(entry);
    }
}

struct Slot {
    purpose: Option<String>,
    matcher: Matcher,
    response: String,
    consumed: bool,
}

struct ScriptState {
    slots: Vec<Slot>,
    last_hit: Option<usize>,
}

/// Deterministic test double answering from an ordered fixture.
///
/// A request is served by the first unconsumed entry whose purpose equals
/// the request's purpose tag (when the entry names one) and whose matcher
/// hits the request content. In strict mode a miss is an error and
/// [`ChatBackend::verify`] fails if any entry was never consumed; otherwise
/// a miss replays the most recently consumed entry for that purpose.
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
    strict: bool,
}

impl ScriptedBackend {
    pub fn new(fixture: &ScriptedFixture, strict: bool) -> Result<Self, GatewayError> {
        let slots = fixture
            .entries
            .iter()
            .map(|e| {
                Ok(Slot {
                    purpose: e.purpose.clone(),
                    matcher: Matcher::parse(&e.matcher)?,
                    response: e.response.clone(),
                    consumed: false,
                })
            })
            .collect::<Result<_, GatewayError>>()?;
        Ok(ScriptedBackend {
            state: Mutex::new(ScriptState {
                slots,
                last_hit: None,
            }),
            strict,
        })
    }

    pub fn remaining(&self) -> usize {
        let state = self.state.lock().expect("script lock");
        state.slots.iter().filter(|s| !s.consumed).count()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let content = request.content();
        let purpose_ok =
            |slot: &Slot| slot.purpose.as_deref().is_none_or(|p| p == request.purpose_tag);
        let mut state = self.state.lock().expect("script lock");
        let hit = state
            .slots
            .iter()
            .position(|s| !s.consumed && purpose_ok(s) && s.matcher.hits(&content));
        if let Some(i) = hit {
            state.slots[i].consumed = true;
            state.last_hit = Some(i);
            return Ok(state.slots[i].response.clone());
        }
        if !self.strict {
            let replay = state
                .slots
                .iter()
                .rposition(|s| s.consumed && purpose_ok(s) && s.matcher.hits(&content));
            if let Some(i) = replay {
                return Ok(state.slots[i].response.clone());
            }
        }
        Err(GatewayError::ScriptedMiss {
            purpose: request.purpose_tag.clone(),
            excerpt: content.chars().take(120).collect(),
        })
    }

    fn verify(&self) -> Result<(), GatewayError> {
        if !self.strict {
            return Ok(());
        }
        let state = self.state.lock().expect("script lock");
        let left: Vec<String> = state
            .slots
            .iter()
            .filter(|s| !s.consumed)
            .map(|s| s.purpose.clone().unwrap_or_else(|| "*".into()))
            .collect();
        if left.is_empty() {
            Ok(())
        } else {
            Err(GatewayError::UnconsumedEntries {
                count: left.len(),
                purposes: left,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::GenerationParams;

    fn req(purpose: &str, user: &str) -> ChatRequest {
        ChatRequest::new(purpose, "sys".into(), user.into(), GenerationParams::default())
    }

    fn fixture(entries: Vec<ScriptEntry>) -> ScriptedFixture {
        ScriptedFixture { entries }
    }

    #[test]
    fn direct_lookup() {
        let b = ScriptedBackend::new(&fixture(vec![ScriptEntry::new("act", "", "click [7]")]), true).unwrap();
        assert_eq!(b.complete(&req("act", "page")).unwrap(), "click [7]");
    }

    #[test]
    fn purpose_and_substring_both_filter() {
        let b = ScriptedBackend::new(
            &fixture(vec![
                ScriptEntry::new("plan", "", "1. Stop."),
                ScriptEntry::new("act", "Laptops", "click [3]"),
                ScriptEntry::new("act", "", "go_back"),
            ]),
            true,
        )
        .unwrap();
        assert_eq!(b.complete(&req("act", "Home page")).unwrap(), "go_back");
        assert_eq!(b.complete(&req("act", "Laptops p1")).unwrap(), "click [3]");
        assert_eq!(b.complete(&req("plan", "x")).unwrap(), "1. Stop.");
        assert!(matches!(
            b.complete(&req("act", "x")),
            Err(GatewayError::ScriptedMiss { .. })
        ));
    }

    #[test]
    fn regex_matcher() {
        let b = ScriptedBackend::new(&fixture(vec![ScriptEntry::new("act", r"re:page \d of 5", "go_back")]), true).unwrap();
        assert!(b.complete(&req("act", "page x of 5")).is_err());
        assert_eq!(b.complete(&req("act", "page 3 of 5")).unwrap(), "go_back");
    }

    #[test]
    fn strict_verification_counts_leftovers() {
        let b = ScriptedBackend::new(
            &fixture(vec![ScriptEntry::new("act", "", "a"), ScriptEntry::new("act", "", "b")]),
            true,
        )
        .unwrap();
        b.complete(&req("act", "")).unwrap();
        assert_eq!(
            b.verify(),
            Err(GatewayError::UnconsumedEntries {
                count: 1,
                purposes: vec!["act".into()]
            })
        );
    }

    #[test]
    fn lenient_mode_replays() {
        let b = ScriptedBackend::new(&fixture(vec![ScriptEntry::new("replan", "", "no change")]), false).unwrap();
        for _ in 0..3 {
            assert_eq!(b.complete(&req("replan", "")).unwrap(), "no change");
        }
        assert!(b.verify().is_ok());
    }

    #[test]
    fn task_scoping() {
        let f = fixture(vec![
            ScriptEntry::new("act", "", "a").for_task("t1"),
            ScriptEntry::new("act", "", "b").for_task("t2"),
            ScriptEntry::new("plan", "", "c"),
        ]);
        let t1 = f.for_task("t1");
        assert_eq!(t1.entries.len(), 2);
        assert_eq!(t1.entries[0].response, "a");
    }

    #[test]
    fn fixture_file_shape() {
        let f: ScriptedFixture =
            serde_json::from_str(r#"[{"match": "act", "purpose": "act", "response": "click [7]"}]"#).unwrap();
        assert_eq!(f.entries[0].matcher, "act");
        let b = ScriptedBackend::new(&f, true).unwrap();
        assert_eq!(b.complete(&req("act", "please act")).unwrap(), "click [7]");
    }
}
