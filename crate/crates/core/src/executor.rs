//! Final-answer production: sandboxed analysis code with reflection retries,
//! and a short acting loop for tasks that change the website.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use regex::Regex;
use thiserror::Error;

use crate::answer::render_answer;
use crate::env::Environment;
use crate::gateway::prompts::{self, PromptError};
use crate::gateway::{purpose, GatewayError, Session};
use crate::model::{AnalysisOutcome, Attempt, AttemptStatus, ModelError, Record, Route, Stage, TaskSpec, Trajectory};
use crate::navigator::{ActContext, NavError, NavOutcome, Navigator};
use crate::sandbox::{Sandbox, SandboxError, SandboxRequest};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error("response contains no fenced code block")]
    NoFencedBlock,
    #[error("response contains {0} fenced code blocks, expected one")]
    MultipleFencedBlocks(usize),
    #[error("invalid execution limits: {0}")]
    InvalidLimits(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecLimits {
    pub max_attempts: u32,
    pub per_attempt_timeout_s: u64,
    /// Records shown to code generation; the sandbox always gets all.
    pub sample_size: usize,
    /// Step cap of the short acting loop.
    pub act_max_steps: u32,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            max_attempts: 3,
            per_attempt_timeout_s: 30,
            sample_size: 5,
            act_max_steps: 10,
        }
    }
}

impl ExecLimits {
    pub fn validate(&self) -> Result<(), ExecError> {
        if self.max_attempts < 1 {
            return Err(ExecError::InvalidLimits("max_attempts must be at least 1".into()));
        }
        if self.per_attempt_timeout_s < 1 {
            return Err(ExecError::InvalidLimits("per_attempt_timeout_s must be at least 1".into()));
        }
        Ok(())
    }
}

fn fence() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[ \t]*(?:python3?|py)?[ \t]*\n?(.*?)```").expect("static regex"))
}

/// The body of the single fenced block in `text`.
pub fn extract_code(text: &str) -> Result<String, ExecError> {
    let blocks: Vec<&str> = fence()
        .captures_iter(text)
        .map(|c| c.get(1).expect("group").as_str())
        .collect();
    match blocks.as_slice() {
        [] => Err(ExecError::NoFencedBlock),
        [code] => Ok(code.trim().to_string()),
        many => Err(ExecError::MultipleFencedBlocks(many.len())),
    }
}

/// Words that mark a task as changing the website rather than answering.
const MUTATION_VERBS: &[&str] = &["post", "submit", "reply", "create", "publish", "comment on"];

pub fn requires_mutation(text: &str) -> bool {
    let lower = text.to_lowercase();
    MUTATION_VERBS.iter().any(|v| {
        Regex::new(&format!(r"\b{v}\b"))
            .map(|re| re.is_match(&lower))
            .unwrap_or(false)
    })
}

fn sample_section(records: &[Record], sample_size: usize) -> String {
    let lines: Vec<String> = records
        .iter()
        .take(sample_size)
        .map(|r| r.to_json_values().to_string())
        .collect();
    format!(
        "Data samples ({} of {} records):\n{}",
        lines.len(),
        records.len(),
        lines.join("\n")
    )
}

pub fn generate_analysis_code(
    exec_objective: &str,
    records: &[Record],
    sample_size: usize,
    session: &Session,
) -> Result<String, ExecError> {
    let user = format!(
        "Objective:\n{exec_objective}\n\n{}",
        sample_section(records, sample_size)
    );
    let response = session.ask(
        purpose::CODEGEN,
        prompts::fixed(prompts::DATA_ANALYSIS),
        user,
    )?;
    extract_code(&response)
}

/// Runs `code` over all records, asking for amended code after every failed
/// attempt until one succeeds or `max_attempts` is spent.
pub fn run_with_reflection(
    code: String,
    exec_objective: &str,
    records: &[Record],
    sandbox: &dyn Sandbox,
    session: &Session,
    limits: &ExecLimits,
) -> Result<AnalysisOutcome, ExecError> {
    limits.validate()?;
    let data: Vec<serde_json::Value> = records.iter().map(Record::to_json_values).collect();
    let mut outcome = AnalysisOutcome::default();
    let mut code: Result<String, (String, String)> = Ok(code);
    for attempt in 1..=limits.max_attempts {
        let record = match &code {
            Ok(code) => {
                let started = Instant::now();
                let response = sandbox.execute(&SandboxRequest {
                    code: code.clone(),
                    records: data.clone(),
                    timeout_s: limits.per_attempt_timeout_s,
                })?;
                Attempt {
                    code: code.clone(),
                    status: response.status,
                    answer: response.answer,
                    traceback: response.traceback,
                    wall_ms: started.elapsed().as_millis() as u64,
                }
            }
            // A reflection reply without usable code still spends an attempt.
            Err((raw, why)) => Attempt {
                code: raw.clone(),
                status: AttemptStatus::Error,
                answer: None,
                traceback: Some(format!("no runnable code: {why}")),
                wall_ms: 0,
            },
        };
        let ok = record.status == AttemptStatus::Ok;
        let failed_code = record.code.clone();
        let traceback = record.traceback.clone().unwrap_or_default();
        outcome.push(record)?;
        if ok || attempt == limits.max_attempts {
            break;
        }
        let user = format!(
            "Objective:\n{exec_objective}\n\n{}\n\nPrevious code:\n```python\n{failed_code}\n```\n\nError:\n{traceback}\n\n{}",
            sample_section(records, limits.sample_size),
            prompts::fixed(prompts::REFLECTION)
        );
        let response = session.ask(
            purpose::REFLECT,
            prompts::fixed(prompts::DATA_ANALYSIS),
            user,
        )?;
        code = extract_code(&response).map_err(|e| (response, e.to_string()));
    }
    Ok(outcome)
}

/// Acting loop seeded with the analysis output, without plan or re-planning.
pub fn short_horizon_act(
    analysis_result: Option<&str>,
    objective: &str,
    task: &TaskSpec,
    env: &mut dyn Environment,
    navigator: &Navigator,
    sink: Option<&mut dyn Write>,
) -> Result<NavOutcome, ExecError> {
    let ctx = ActContext {
        objective,
        plan: None,
        extra: analysis_result.map(|r| ("Analysis result", r)),
        purpose: purpose::EXEC_ACT,
    };
    Ok(navigator.run_acting(task, &ctx, env, sink)?)
}

/// The run's answer: the rendered analysis result when execution produced
/// one, the navigation stop answer otherwise. `None` means no answer.
pub fn finalize_answer(
    route: &Route,
    trajectory: Option<&Trajectory>,
    outcome: Option<&AnalysisOutcome>,
) -> Option<String> {
    if route.contains(Stage::Execution) {
        if let Some(answer) = outcome.and_then(AnalysisOutcome::final_answer) {
            return Some(render_answer(answer));
        }
    }
    trajectory
        .and_then(Trajectory::terminal_answer)
        .filter(|a| !a.trim().is_empty())
        .map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::Action;
    use crate::model::{Observation, StepRecord};
    use serde_json::json;

    #[test]
    fn fences() {
        assert_eq!(extract_code("```python\nanswer = len(data)\n```").unwrap(), "answer = len(data)");
        assert_eq!(extract_code("Here:\n```\nx = 1\nanswer = x\n```\nDone").unwrap(), "x = 1\nanswer = x");
        assert!(matches!(extract_code("answer = 1"), Err(ExecError::NoFencedBlock)));
        assert!(matches!(
            extract_code("```python\na=1\n```\n```python\nb=2\n```"),
            Err(ExecError::MultipleFencedBlocks(2))
        ));
    }

    #[test]
    fn mutation_detection() {
        assert!(requires_mutation("Post 'Hello, world!' on /OldSchoolCool"));
        assert!(requires_mutation("Submit a new thread"));
        assert!(!requires_mutation("What is the average price of posters?"));
    }

    fn traj(answer: &str) -> Trajectory {
        let mut t = Trajectory::new("t");
        t.push(StepRecord {
            t: 1,
            reasoning: String::new(),
            action: Action::Stop { answer: answer.into() },
            observation: Observation::from_tree(1, "home", "u", "[1] RootWebArea 'x'"),
            plan_version: 0,
            nav_objective_version: 0,
            error: None,
        })
        .unwrap();
        t
    }

    fn ok(answer: serde_json::Value) -> AnalysisOutcome {
        let mut o = AnalysisOutcome::default();
        o.push(Attempt {
            code: "answer = 42".into(),
            status: AttemptStatus::Ok,
            answer: Some(answer),
            traceback: None,
            wall_ms: 1,
        })
        .unwrap();
        o
    }

    #[test]
    fn finalize_examples() {
        let t = traj("done");
        assert_eq!(finalize_answer(&Route::full(), Some(&t), Some(&ok(json!(42)))).as_deref(), Some("42"));
        assert_eq!(
            finalize_answer(&Route::nav_only(), Some(&traj("Administrator")), None).as_deref(),
            Some("Administrator")
        );
        assert_eq!(
            finalize_answer(&Route::full(), Some(&t), Some(&ok(json!(["A", "B"])))).as_deref(),
            Some("A\nB")
        );
        assert_eq!(finalize_answer(&Route::full(), Some(&traj(" ")), None), None);
        assert_eq!(finalize_answer(&Route::full(), None, None), None);
    }
}
