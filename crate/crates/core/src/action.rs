//! The browser action space and its textual command grammar.
//!
//! Commands use the surface forms shown to the model:
//!
//! ```text
//! click [7]
//! type [15] [Carnegie Mellon University] [1]
//! go_back
//! stop [answer text]
//! ```
//!
//! The same strings are the canonical wire form in trajectory logs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Click { id: u32 },
    TypeText { id: u32, content: String, press_enter: bool },
    GoBack,
    Stop { answer: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionParseError {
    #[error("no action command found in model output")]
    NoActionFound,
    #[error("malformed brackets in `{0}`")]
    MalformedBrackets(String),
    #[error("unknown action verb `{0}`")]
    UnknownVerb(String),
    #[error("invalid element id `{0}`")]
    InvalidId(String),
}

const VERBS: [&str; 4] = ["click", "type", "go_back", "stop"];

impl Action {
    pub fn element_id(&self) -> Option<u32> {
        match self {
            Action::Click { id } | Action::TypeText { id, .. } => Some(*id),
            _ => None,
        }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop { .. })
    }

    pub fn verb(&self) -> &'static str {
        match self {
            Action::Click { .. } => "click",
            Action::TypeText { .. } => "type",
            Action::GoBack => "go_back",
            Action::Stop { .. } => "stop",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Click { id } => write!(f, "click [{id}]"),
            Action::TypeText {
                id,
                content,
                press_enter,
            } => write!(f, "type [{id}] [{content}] [{}]", u8::from(*press_enter)),
            Action::GoBack => f.write_str("go_back"),
            Action::Stop { answer } => write!(f, "stop [{answer}]"),
        }
    }
}

impl FromStr for Action {
    type Err = ActionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_command(s.trim())
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Splits a model response into its reasoning text and the action it issues.
///
/// An `Action:` line wins if present; otherwise the first line that starts
/// with a known verb is the command. Everything before the command is the
/// reasoning (with a leading `Reason:` label removed). The command may run
/// past its first line when a bracket is still open, so multi-line `stop`
/// answers survive.
pub fn parse_action(text: &str) -> Result<(String, Action), ActionParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let labelled = lines
        .iter()
        .position(|l| strip_label(l.trim_start(), "action:").is_some());
    let start = match labelled {
        Some(i) => i,
        None => lines
            .iter()
            .position(|l| starts_with_verb(clean_command_start(l)))
            // A verb without a well-formed argument list is still the
            // command; parsing it reports what is wrong with it.
            .or_else(|| {
                lines
                    .iter()
                    .position(|l| VERBS.contains(&first_word(clean_command_start(l))))
            })
            .ok_or(ActionParseError::NoActionFound)?,
    };

    let reasoning = lines[..start].join("\n");
    let reasoning = strip_label(reasoning.trim(), "reason:")
        .unwrap_or(reasoning.trim())
        .trim()
        .to_string();

    let mut command = lines[start..].join("\n");
    if labelled.is_some() {
        let first = lines[start].trim_start();
        let rest = strip_label(first, "action:").unwrap_or(first);
        command = std::iter::once(rest)
            .chain(lines[start + 1..].iter().copied())
            .collect::<Vec<_>>()
            .join("\n");
    }
    let command = clean_command_start(&command);
    let action = parse_command(trim_fence(command))?;
    Ok((reasoning, action))
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    head.eq_ignore_ascii_case(label).then(|| line[label.len()..].trim_start())
}

fn clean_command_start(line: &str) -> &str {
    line.trim_start().trim_start_matches('`').trim_start()
}

fn trim_fence(command: &str) -> &str {
    command.trim_end().trim_end_matches('`').trim_end()
}

fn first_word(s: &str) -> &str {
    s.split(|c: char| c.is_whitespace() || c == '[').next().unwrap_or("")
}

fn starts_with_verb(line: &str) -> bool {
    let word = first_word(line);
    VERBS.contains(&word) && (word == "go_back" || line[word.len()..].trim_start().starts_with('['))
}

fn parse_command(command: &str) -> Result<Action, ActionParseError> {
    let word = first_word(command);
    if word.is_empty() {
        return Err(ActionParseError::NoActionFound);
    }
    let rest = command[word.len()..].trim();
    match word {
        "go_back" => {
            if rest.is_empty() {
                Ok(Action::GoBack)
            } else {
                Err(ActionParseError::MalformedBrackets(command.to_string()))
            }
        }
        "stop" => {
            // Stop answers are free text: take everything between the first
            // `[` and the last `]`.
            let open = rest.find('[');
            let close = rest.rfind(']');
            match (open, close) {
                (Some(0), Some(c)) if c == rest.len() - 1 => Ok(Action::Stop {
                    answer: rest[1..c].to_string(),
                }),
                _ => Err(ActionParseError::MalformedBrackets(command.to_string())),
            }
        }
        "click" => {
            let groups = bracket_groups(rest).ok_or_else(|| malformed(command))?;
            match groups.as_slice() {
                [id] => Ok(Action::Click { id: parse_id(id)? }),
                _ => Err(malformed(command)),
            }
        }
        "type" => {
            let groups = bracket_groups(rest).ok_or_else(|| malformed(command))?;
            let (id, content, enter) = match groups.as_slice() {
                [id, content] => (id, content, None),
                [id, content, enter] => (id, content, Some(enter)),
                _ => return Err(malformed(command)),
            };
            let press_enter = match enter.map(|e| e.trim()) {
                None | Some("1") => true,
                Some("0") => false,
                Some(other) => {
                    // Tolerate `press_enter_after=0` echoes of the spec text.
                    match other.rsplit('=').next().map(str::trim) {
                        Some("1") => true,
                        Some("0") => false,
                        _ => return Err(malformed(command)),
                    }
                }
            };
            Ok(Action::TypeText {
                id: parse_id(id)?,
                content: content.clone(),
                press_enter,
            })
        }
        other => Err(ActionParseError::UnknownVerb(other.to_string())),
    }
}

fn malformed(command: &str) -> ActionParseError {
    ActionParseError::MalformedBrackets(command.to_string())
}

fn parse_id(raw: &str) -> Result<u32, ActionParseError> {
    match raw.trim().parse::<u32>() {
        Ok(id) if id > 0 => Ok(id),
        _ => Err(ActionParseError::InvalidId(raw.to_string())),
    }
}

/// Splits `[a] [b c] [d]` into its bracket contents, honouring nesting.
/// Returns `None` on unbalanced brackets or stray text between groups.
fn bracket_groups(s: &str) -> Option<Vec<String>> {
    let mut groups = Vec::new();
    let mut chars = s.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        if c != '[' {
            return None;
        }
        let mut depth = 1;
        let mut content = String::new();
        for (_, c) in chars.by_ref() {
            match c {
                '[' => depth += 1,
                ']' => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
            content.push(c);
        }
        if depth != 0 {
            return None;
        }
        groups.push(content);
    }
    Some(groups)
}
