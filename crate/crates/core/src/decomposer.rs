//! Stage routing and task decomposition.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::gateway::prompts::{self, PromptError};
use crate::gateway::{purpose, GatewayError, Session};
use crate::model::{Decomposition, ModelError, Route, Stage, TaskSpec};

pub const PART1_HEADER: &str = "### Part 1 – Navigation";
pub const PART2_HEADER: &str = "### Part 2 – Analysis";
const IE_PREFIX: &str = "collect the fields needed for: ";

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("unparsable router output: {0:?}")]
    UnparsableRoute(String),
    #[error("decomposition is missing header `{0}`")]
    MissingHeader(&'static str),
    #[error("objective under `{0}` is empty")]
    EmptyObjective(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Website tips for a task: a built-in tip set when `website_tips` names a
/// site kind, the literal text otherwise.
pub fn resolve_tips(task: &TaskSpec) -> String {
    match task.website_tips.as_deref() {
        None => String::new(),
        Some(t) => prompts::website_tips(t.trim()).unwrap_or(t).to_string(),
    }
}

pub fn route_task(task: &TaskSpec, session: &Session) -> Result<Route, DecomposeError> {
    task.validate()?;
    let response = session.ask(
        purpose::ROUTE,
        prompts::fixed(prompts::ROUTER),
        format!("Task: {}", task.instruction),
    )?;
    parse_route(&response)
}

/// Reads a `stages: nav[,extract][,execute]` line. Stage names may be
/// abbreviated or spelled out; a response naming no navigation stage is
/// rejected.
pub fn parse_route(text: &str) -> Result<Route, DecomposeError> {
    let lower = text.to_lowercase();
    let body = lower
        .lines()
        .rev()
        .find_map(|l| l.split_once("stages:").map(|(_, rest)| rest.to_string()))
        .unwrap_or(lower.clone());
    let mut stages = BTreeSet::new();
    for word in body.split(|c: char| !c.is_ascii_alphabetic()).filter(|w| !w.is_empty()) {
        match word {
            "nav" | "navigate" | "navigation" => stages.insert(Stage::Navigation),
            "extract" | "extraction" | "ie" => stages.insert(Stage::Extraction),
            "exec" | "execute" | "execution" => stages.insert(Stage::Execution),
            _ => false,
        };
    }
    if !stages.contains(&Stage::Navigation) {
        return Err(DecomposeError::UnparsableRoute(text.trim().to_string()));
    }
    Ok(Route::new(stages)?)
}

pub fn decompose(
    task: &TaskSpec,
    route: &Route,
    session: &Session,
) -> Result<Decomposition, DecomposeError> {
    task.validate()?;
    if route.is_nav_only() {
        return Ok(Decomposition::nav_only(&task.instruction));
    }
    let mut user = format!("User task\n“{}”", task.instruction);
    let tips = resolve_tips(task);
    if !tips.trim().is_empty() {
        user.push_str("\n\nWebsite tips:\n");
        user.push_str(tips.trim_end());
    }
    let response = session.ask(
        purpose::DECOMPOSE,
        prompts::fixed(prompts::DECOMPOSITION),
        user,
    )?;
    parse_decomposition(&response, route)
}

fn header_re(part: u8, name: &str) -> Regex {
    Regex::new(&format!(
        r"(?mi)^[ \t]*#{{1,6}}[ \t]*Part[ \t]*{part}[ \t]*[-–—:][ \t]*{name}[ \t]*:?[ \t]*$"
    ))
    .expect("static regex")
}

fn part1_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| header_re(1, "Navigation"))
}

fn part2_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| header_re(2, "Analysis"))
}

fn any_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*#{1,6}[ \t]").expect("static regex"))
}

/// Body following a header up to the next markdown header.
fn section_body(text: &str, start: usize) -> &str {
    let rest = &text[start..];
    let end = any_header_re().find(rest).map_or(rest.len(), |m| m.start());
    rest[..end].trim()
}

/// Splits the two-part decomposition response. Header matching tolerates
/// dash variants, case and surrounding whitespace; Part 1 must come first.
pub fn parse_decomposition(text: &str, route: &Route) -> Result<Decomposition, DecomposeError> {
    let part1 = part1_re()
        .find(text)
        .ok_or(DecomposeError::MissingHeader(PART1_HEADER))?;
    let part2 = part2_re()
        .find_at(text, part1.end())
        .ok_or(DecomposeError::MissingHeader(PART2_HEADER))?;
    let nav = text[part1.end()..part2.start()].trim();
    let analysis = section_body(text, part2.end());
    if nav.is_empty() {
        return Err(DecomposeError::EmptyObjective(PART1_HEADER));
    }
    if analysis.is_empty() {
        return Err(DecomposeError::EmptyObjective(PART2_HEADER));
    }
    let ie = route
        .contains(Stage::Extraction)
        .then(|| format!("{IE_PREFIX}{analysis}"));
    let exec = route.contains(Stage::Execution).then(|| analysis.to_string());
    Ok(Decomposition::new(nav.to_string(), ie, exec, route.clone())?)
}

/// Inverse of [`parse_decomposition`] for the two parts.
pub fn render_parts(nav_objective: &str, analysis: &str) -> String {
    format!("{PART1_HEADER}\n{nav_objective}\n\n{PART2_HEADER}\n{analysis}\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GenerationParams, ScriptEntry, ScriptedBackend, ScriptedFixture};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn session(entries: Vec<ScriptEntry>) -> Session {
        let mut fixture = ScriptedFixture::default();
        for e in entries {
            fixture.push(e);
        }
        Session::new(
            Arc::new(ScriptedBackend::new(&fixture, true).unwrap()),
            GenerationParams::default(),
        )
    }

    fn task(instruction: &str) -> TaskSpec {
        TaskSpec {
            task_id: "t".into(),
            instruction: instruction.into(),
            site_id: "s".into(),
            website_tips: Some("reddit".into()),
            eval_target: None,
        }
    }

    #[test]
    fn router_examples() {
        let s = session(vec![
            ScriptEntry::new(purpose::ROUTE, "", "navigation,execution"),
            ScriptEntry::new(purpose::ROUTE, "", "navigation"),
            ScriptEntry::new(purpose::ROUTE, "", "extraction"),
        ]);
        let t = task("Post 'Hello, world!' on /OldSchoolCool");
        let r = route_task(&t, &s).unwrap();
        assert_eq!(r.stages(), &[Stage::Navigation, Stage::Execution]);
        assert!(route_task(&t, &s).unwrap().is_nav_only());
        assert!(matches!(route_task(&t, &s), Err(DecomposeError::UnparsableRoute(_))));
    }

    #[test]
    fn router_line_format() {
        let r = parse_route("Thinking...\nstages: nav,extract,execute").unwrap();
        assert_eq!(r, Route::full());
        assert!(parse_route("I have no idea").is_err());
    }

    #[test]
    fn decompose_sends_examples_and_tips() {
        let s = session(vec![ScriptEntry::new(
            purpose::DECOMPOSE,
            "wireless earbuds",
            "### Part 1 – Navigation\nVisit the listing pages with title and price.\n\n### Part 2 – Analysis\nCount per bracket: ‘<50 : __, 50-99 : __, 100+ : __’",
        )]);
        let t = task("Among products tagged ‘wireless earbuds’, count how many cost below $50, $50-$99, and $100+.");
        let d = decompose(&t, &Route::full(), &s).unwrap();
        assert_eq!(d.nav_objective(), "Visit the listing pages with title and price.");
        assert!(d.exec_objective().unwrap().contains("<50 : __, 50-99 : __, 100+ : __"));
        assert!(d.ie_objective().unwrap().starts_with(IE_PREFIX));
        assert_eq!(d.version(), 0);
        let request = &s.transcript()[0].request;
        assert!(request.contains("Example 3:"));
        assert!(request.contains(prompts::website_tips("reddit").unwrap().trim_end()));
    }

    #[test]
    fn nav_only_route_skips_the_call() {
        let s = session(vec![]);
        let d = decompose(&task("Who is the admin?"), &Route::nav_only(), &s).unwrap();
        assert_eq!(d.nav_objective(), "Who is the admin?");
        assert_eq!(s.llm_calls(), 0);
    }

    #[test]
    fn empty_part2_is_rejected() {
        let text = "### Part 1 – Navigation\nGo.\n### Part 2 – Analysis\n   \n";
        assert!(matches!(
            parse_decomposition(text, &Route::full()),
            Err(DecomposeError::EmptyObjective(PART2_HEADER))
        ));
    }

    #[test]
    fn swapped_headers_are_rejected() {
        let text = "### Part 2 – Analysis\nB\n### Part 1 – Navigation\nA\n";
        assert!(matches!(
            parse_decomposition(text, &Route::full()),
            Err(DecomposeError::MissingHeader(PART2_HEADER))
        ));
        assert!(matches!(
            parse_decomposition("nothing here", &Route::full()),
            Err(DecomposeError::MissingHeader(PART1_HEADER))
        ));
    }

    #[test]
    fn routes_shape_the_objectives() {
        let text = render_parts("A", "B");
        let nav_exec = Route::new([Stage::Navigation, Stage::Execution]).unwrap();
        let d = parse_decomposition(&text, &nav_exec).unwrap();
        assert_eq!((d.ie_objective(), d.exec_objective()), (None, Some("B")));
        let nav_ie = Route::new([Stage::Navigation, Stage::Extraction]).unwrap();
        let d = parse_decomposition(&text, &nav_ie).unwrap();
        assert_eq!(d.exec_objective(), None);
        assert!(d.ie_objective().is_some());
    }

    fn dash() -> impl Strategy<Value = &'static str> {
        prop::sample::select(vec!["–", "-", "—"])
    }

    fn ws() -> impl Strategy<Value = &'static str> {
        prop::sample::select(vec!["", " ", "  ", "\t"])
    }

    proptest! {
        #[test]
        fn tolerant_header_variants(
            d1 in dash(), d2 in dash(), a in ws(), b in ws(), c in ws(),
            hashes in 2usize..4,
            nav in "[A-Za-z][A-Za-z ,.]{0,40}",
            analysis in "[A-Za-z][A-Za-z ,.]{0,40}",
        ) {
            let h = "#".repeat(hashes);
            let text = format!(
                "{a}{h} Part 1{b}{d1}{c}Navigation{b}\n{nav}\n\n{h}{c}Part 2 {d2} Analysis{a}\n{analysis}\n"
            );
            let d = parse_decomposition(&text, &Route::full()).unwrap();
            prop_assert_eq!(d.nav_objective(), nav.trim());
            prop_assert_eq!(d.exec_objective(), Some(analysis.trim()));
        }

        #[test]
        fn renamed_headers_are_rejected(name in prop::sample::select(vec!["Browsing", "Nav", "Navigate", "Step"])) {
            let text = format!("### Part 1 – {name}\nA\n### Part 2 – Analysis\nB\n");
            prop_assert!(parse_decomposition(&text, &Route::full()).is_err());
        }

        #[test]
        fn parse_render_idempotent(
            nav in "[A-Za-z][A-Za-z0-9 ,.]{0,60}",
            analysis in "[A-Za-z][A-Za-z0-9 ,.\n]{0,60}",
        ) {
            let d = parse_decomposition(&render_parts(&nav, &analysis), &Route::full()).unwrap();
            let again = parse_decomposition(
                &render_parts(d.nav_objective(), d.exec_objective().unwrap()),
                &Route::full(),
            ).unwrap();
            prop_assert_eq!(d, again);
        }
    }
}
