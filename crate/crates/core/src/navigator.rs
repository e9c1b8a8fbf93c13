//! Plan, act, judge and re-plan over a browsing environment.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::action::{parse_action, Action};
use crate::decomposer::PART1_HEADER;
use crate::env::{EnvError, Environment, StepOutcome};
use crate::gateway::prompts::{self, PromptError};
use crate::gateway::{purpose, GatewayError, Session};
use crate::model::{Decomposition, ModelError, Observation, Plan, StepRecord, TaskSpec, Trajectory};

pub const DEFAULT_STOPPING_CRITERION: &str = "all listed pages visited";

#[derive(Debug, Error)]
pub enum NavError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("plan response contains no steps")]
    EmptyPlan,
    #[error("no usable action in {} candidate responses", responses.len())]
    NoValidCandidate { responses: Vec<String> },
    #[error("invalid navigation limits: {0}")]
    InvalidLimits(String),
    #[error("trajectory sink: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavLimits {
    pub max_steps: u32,
    /// Candidate actions sampled per step; more than one engages the judge.
    pub max_candidates: usize,
    pub replan_enabled: bool,
    /// Re-plan every N steps.
    pub replan_every: u32,
    /// Steps shown with full observations in prompts; older steps are
    /// reduced to their reason and action.
    pub history_window: usize,
}

impl Default for NavLimits {
    fn default() -> Self {
        NavLimits {
            max_steps: 30,
            max_candidates: 1,
            replan_enabled: true,
            replan_every: 1,
            history_window: 10,
        }
    }
}

impl NavLimits {
    pub fn validate(&self) -> Result<(), NavError> {
        if self.max_steps < 1 {
            return Err(NavError::InvalidLimits("max_steps must be at least 1".into()));
        }
        if self.max_candidates < 1 {
            return Err(NavError::InvalidLimits("max_candidates must be at least 1".into()));
        }
        if self.replan_every < 1 {
            return Err(NavError::InvalidLimits("replan_every must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub reasoning: String,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplanDecision {
    pub changed: bool,
    pub new_nav_objective: Option<String>,
    pub new_plan: Option<Plan>,
    pub rationale: String,
}

impl ReplanDecision {
    fn keep(rationale: impl Into<String>) -> Self {
        ReplanDecision {
            changed: false,
            new_nav_objective: None,
            new_plan: None,
            rationale: rationale.into(),
        }
    }
}

/// What one run of the acting loop is conditioned on.
#[derive(Debug, Clone)]
pub struct ActContext<'a> {
    pub objective: &'a str,
    pub plan: Option<&'a Plan>,
    /// Extra prompt section, e.g. an analysis result to act on.
    pub extra: Option<(&'a str, &'a str)>,
    pub purpose: &'a str,
}

#[derive(Debug, Clone)]
pub struct NavOutcome {
    pub trajectory: Trajectory,
    pub plan: Option<Plan>,
    pub replan_events: u32,
}

pub struct Navigator<'a> {
    pub session: &'a Session,
    pub limits: NavLimits,
    pub website_tips: String,
}

fn numbered_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:\d+\s*[.)]|[-*•])\s*(.*)$").expect("static regex"))
}

fn integer() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+").expect("static regex"))
}

/// Parses a numbered plan. Unnumbered text is used line by line when no
/// numbered lines exist. The stopping criterion is the last line that
/// mentions stopping or termination.
pub fn parse_plan(text: &str, version: u32) -> Result<Plan, NavError> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let numbered: Vec<String> = lines
        .iter()
        .filter_map(|l| numbered_line().captures(l).map(|c| c[1].trim().to_string()))
        .filter(|s| !s.is_empty())
        .collect();
    let steps = if numbered.is_empty() {
        lines.iter().map(|s| s.to_string()).collect()
    } else {
        numbered
    };
    if steps.is_empty() {
        return Err(NavError::EmptyPlan);
    }
    let stop = steps
        .iter()
        .rev()
        .find(|s| {
            let l = s.to_lowercase();
            l.contains("stop") || l.contains("terminat")
        })
        .cloned()
        .unwrap_or_else(|| DEFAULT_STOPPING_CRITERION.to_string());
    Ok(Plan::new(steps, stop, version)?)
}

fn action_targets(action: &Action) -> Option<u32> {
    match action {
        Action::Click { id } | Action::TypeText { id, .. } => Some(*id),
        Action::GoBack | Action::Stop { .. } => None,
    }
}

impl<'a> Navigator<'a> {
    pub fn new(session: &'a Session, limits: NavLimits, website_tips: impl Into<String>) -> Self {
        Navigator {
            session,
            limits,
            website_tips: website_tips.into(),
        }
    }

    pub fn generate_plan(&self, nav_objective: &str, initial: &Observation) -> Result<Plan, NavError> {
        let user = format!(
            "Task objective:\n{nav_objective}\n\nInitial observation:\n{}",
            initial.ax_tree
        );
        let response = self.session.ask(
            purpose::PLAN,
            prompts::fixed(prompts::PLAN_GENERATION),
            user,
        )?;
        parse_plan(&response, 0)
    }

    /// Interaction history as shown to the model. Only the most recent
    /// `history_window` steps keep their observation.
    pub fn render_history(&self, history: &Trajectory) -> String {
        let steps = history.steps();
        if steps.is_empty() {
            return "None".into();
        }
        let full_from = steps.len().saturating_sub(self.limits.history_window);
        let mut out = Vec::new();
        for (i, s) in steps.iter().enumerate() {
            let mut entry = format!("Step {}:\nReason: {}\nAction: {}", s.t, s.reasoning, s.action);
            if let Some(err) = &s.error {
                entry.push_str(&format!("\nError: {err}"));
            }
            if i >= full_from {
                entry.push_str(&format!("\nObservation:\n{}", s.observation.ax_tree));
            }
            out.push(entry);
        }
        out.join("\n\n")
    }

    fn act_prompt(&self) -> Result<String, NavError> {
        let slots = BTreeMap::from([
            ("output_specifications", prompts::fixed(prompts::ACTION_OUTPUT_SPEC)),
            (
                "navigation_specifications",
                prompts::fixed(prompts::NAVIGATION_SPECIFICATIONS),
            ),
            ("website_tips", self.website_tips.clone()),
        ]);
        Ok(prompts::render_prompt(prompts::NAVIGATION, &slots)?)
    }

    fn act_user(&self, ctx: &ActContext, obs: &Observation, history: &Trajectory) -> String {
        let mut user = format!(
            "Task objective:\n{}\n\nCurrent step: {}\n\n",
            ctx.objective, obs.step_index
        );
        if let Some(plan) = ctx.plan {
            user.push_str(&format!("Current plan:\n{}\n\n", plan.render()));
        }
        if let Some((label, text)) = ctx.extra {
            user.push_str(&format!("{label}:\n{text}\n\n"));
        }
        user.push_str(&format!(
            "Interaction history:\n{}\n\nCurrent observation:\n{}",
            self.render_history(history),
            obs.ax_tree
        ));
        user
    }

    /// Samples `k` candidate actions, dropping unparsable ones and ones that
    /// target elements missing from `obs`. One full retry is made before
    /// giving up.
    pub fn propose_actions(
        &self,
        ctx: &ActContext,
        obs: &Observation,
        history: &Trajectory,
        k: usize,
    ) -> Result<Vec<Candidate>, NavError> {
        let system = self.act_prompt()?;
        let user = self.act_user(ctx, obs, history);
        let mut raw = Vec::new();
        for _round in 0..2 {
            let mut out = Vec::new();
            for _ in 0..k.max(1) {
                let response = self.session.ask(ctx.purpose, system.clone(), user.clone())?;
                match parse_action(&response) {
                    Ok((reasoning, action)) => match action_targets(&action) {
                        Some(id) if !obs.element_ids.contains(&id) => self
                            .session
                            .warn(format!("step {}: dropped `{action}`: element {id} absent", obs.step_index)),
                        _ => out.push(Candidate { reasoning, action }),
                    },
                    Err(e) => self
                        .session
                        .warn(format!("step {}: unparsable action ({e})", obs.step_index)),
                }
                raw.push(response);
            }
            if !out.is_empty() {
                return Ok(out);
            }
        }
        Err(NavError::NoValidCandidate { responses: raw })
    }

    pub fn judge_select(
        &self,
        mut candidates: Vec<Candidate>,
        task: &TaskSpec,
        obs: &Observation,
        history: &Trajectory,
    ) -> Result<Candidate, NavError> {
        assert!(!candidates.is_empty(), "judge_select needs candidates");
        if candidates.len() == 1 {
            return Ok(candidates.remove(0));
        }
        let listing: Vec<String> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. Reason: {}\n   Action: {}", i + 1, c.reasoning, c.action))
            .collect();
        let user = format!(
            "Task instruction:\n{}\n\nCurrent observation:\n{}\n\nInteraction history:\n{}\n\nCandidate actions:\n{}",
            task.instruction,
            obs.ax_tree,
            self.render_history(history),
            listing.join("\n")
        );
        let response = self
            .session
            .ask(purpose::JUDGE, prompts::fixed(prompts::JUDGE), user)?;
        let pick = integer()
            .find(&response)
            .and_then(|m| m.as_str().parse::<usize>().ok())
            .filter(|n| (1..=candidates.len()).contains(n));
        match pick {
            Some(n) => Ok(candidates.swap_remove(n - 1)),
            None => {
                self.session.warn(format!(
                    "step {}: judge answer {:?} matched no candidate; using candidate 1",
                    obs.step_index,
                    response.trim()
                ));
                Ok(candidates.remove(0))
            }
        }
    }

    pub fn maybe_replan(
        &self,
        obs: &Observation,
        history: &Trajectory,
        plan: &Plan,
        decomposition: &Decomposition,
        task: &TaskSpec,
    ) -> Result<ReplanDecision, NavError> {
        let slots = BTreeMap::from([
            ("output_specifications", prompts::fixed(prompts::REPLAN_OUTPUT_SPEC)),
            ("website_tips", self.website_tips.clone()),
        ]);
        let system = prompts::render_prompt(prompts::REPLANNING, &slots)?;
        let user = format!(
            "Original task objective:\n{}\n\nCurrent decomposition:\n{}\n\nCurrent navigation plan:\n{}\n\nCurrent step: {}\n\nCurrent observation:\n{}\n\nInteraction history:\n{}",
            task.instruction,
            crate::decomposer::render_parts(
                decomposition.nav_objective(),
                decomposition.exec_objective().unwrap_or("None"),
            )
            .trim_end(),
            plan.render(),
            obs.step_index,
            obs.ax_tree,
            self.render_history(history)
        );
        let response = self.session.ask(purpose::REPLAN, system, user)?;
        match parse_replan(&response, plan.version() + 1) {
            Ok((decision, warnings)) => {
                for w in warnings {
                    self.session.warn(format!("step {}: {w}", obs.step_index));
                }
                Ok(decision)
            }
            Err(why) => {
                self.session
                    .warn(format!("step {}: replan output ignored: {why}", obs.step_index));
                Ok(ReplanDecision::keep(why))
            }
        }
    }

    /// Runs the full plan → (re-plan, propose, judge, act) loop.
    pub fn run_navigation(
        &self,
        task: &TaskSpec,
        decomposition: &mut Decomposition,
        env: &mut dyn Environment,
        sink: Option<&mut dyn Write>,
    ) -> Result<NavOutcome, NavError> {
        self.limits.validate()?;
        let initial = env.observe().at_step(1);
        let mut plan = self.generate_plan(decomposition.nav_objective(), &initial)?;
        let mut trajectory = Trajectory::new(task.task_id.clone());
        trajectory.record_objective(decomposition.version(), decomposition.nav_objective())?;
        let mut replans = 0;
        let mut obs = initial;
        let mut sink = sink;
        for t in 1..=self.limits.max_steps {
            // The plan was generated from the first observation, so re-planning
            // starts at step 2.
            if self.limits.replan_enabled && t > 1 && (t - 1) % self.limits.replan_every == 0 {
                let decision = self.maybe_replan(&obs, &trajectory, &plan, decomposition, task)?;
                if decision.changed {
                    replans += 1;
                    if let Some(objective) = decision.new_nav_objective {
                        decomposition.revise_nav_objective(objective);
                        trajectory
                            .record_objective(decomposition.version(), decomposition.nav_objective())?;
                    }
                    if let Some(new_plan) = decision.new_plan {
                        plan = new_plan;
                    }
                }
            }
            let ctx = ActContext {
                objective: decomposition.nav_objective(),
                plan: Some(&plan),
                extra: None,
                purpose: purpose::ACT,
            };
            let candidates = self.propose_actions(&ctx, &obs, &trajectory, self.limits.max_candidates)?;
            let chosen = self.judge_select(candidates, task, &obs, &trajectory)?;
            let (next, stop) = self.apply(env, &chosen, &obs)?;
            trajectory.push(StepRecord {
                t,
                reasoning: chosen.reasoning,
                action: chosen.action,
                observation: obs,
                plan_version: plan.version(),
                nav_objective_version: decomposition.version(),
                error: next.1,
            })?;
            emit(&mut sink, &trajectory, t)?;
            if stop {
                break;
            }
            obs = next.0.at_step(t + 1);
        }
        Ok(NavOutcome {
            trajectory,
            plan: Some(plan),
            replan_events: replans,
        })
    }

    /// Short acting loop without plan or re-planning, conditioned on extra
    /// context such as an analysis result.
    pub fn run_acting(
        &self,
        task: &TaskSpec,
        ctx: &ActContext,
        env: &mut dyn Environment,
        sink: Option<&mut dyn Write>,
    ) -> Result<NavOutcome, NavError> {
        self.limits.validate()?;
        let mut trajectory = Trajectory::new(task.task_id.clone());
        trajectory.record_objective(0, ctx.objective)?;
        let mut obs = env.observe().at_step(1);
        let mut sink = sink;
        for t in 1..=self.limits.max_steps {
            let candidates = self.propose_actions(ctx, &obs, &trajectory, self.limits.max_candidates)?;
            let chosen = self.judge_select(candidates, task, &obs, &trajectory)?;
            let (next, stop) = self.apply(env, &chosen, &obs)?;
            trajectory.push(StepRecord {
                t,
                reasoning: chosen.reasoning,
                action: chosen.action,
                observation: obs,
                plan_version: 0,
                nav_objective_version: 0,
                error: next.1,
            })?;
            emit(&mut sink, &trajectory, t)?;
            if stop {
                break;
            }
            obs = next.0.at_step(t + 1);
        }
        Ok(NavOutcome {
            trajectory,
            plan: None,
            replan_events: 0,
        })
    }

    /// Applies an action. Rejected actions leave the page unchanged and
    /// come back as an error note for the history.
    #[allow(clippy::type_complexity)]
    fn apply(
        &self,
        env: &mut dyn Environment,
        chosen: &Candidate,
        obs: &Observation,
    ) -> Result<((Observation, Option<String>), bool), NavError> {
        match env.step(&chosen.action) {
            Ok(StepOutcome::Terminal { .. }) => Ok(((obs.clone(), None), true)),
            Ok(StepOutcome::Page { observation, warning }) => Ok(((observation, warning), false)),
            Err(EnvError::Terminated) => Err(EnvError::Terminated.into()),
            Err(e) => {
                self.session
                    .warn(format!("step {}: `{}` failed: {e}", obs.step_index, chosen.action));
                Ok(((env.observe(), Some(e.to_string())), false))
            }
        }
    }
}

fn emit(sink: &mut Option<&mut dyn Write>, trajectory: &Trajectory, t: u32) -> Result<(), NavError> {
    if let Some(w) = sink.as_mut() {
        if let Some(line) = trajectory.step_line(t) {
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
    }
    Ok(())
}

fn decision_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?mi)^\s*\**decision\**\s*:\s*\**\s*([a-z ]+)").expect("static regex"))
}

fn section_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*#{1,6}[ \t]*(.+?)[ \t]*$").expect("static regex"))
}

fn normalize_heading(h: &str) -> String {
    h.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parses re-plan output (`Decision: keep|update` followed, on update, by
/// optional `### Part 1 – Navigation` and `### Navigation Plan` sections).
/// Returns the decision plus warnings, or a reason when unparsable.
pub fn parse_replan(text: &str, next_plan_version: u32) -> Result<(ReplanDecision, Vec<String>), String> {
    let mut warnings = Vec::new();
    let decision = decision_re()
        .captures(text)
        .map(|c| c[1].trim().to_lowercase());
    let rationale = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("Reasoning:").map(|r| r.trim().to_string()))
        .unwrap_or_default();
    let update = match decision.as_deref() {
        Some(d) if d.starts_with("update") || d.starts_with("modify") || d.starts_with("change") => true,
        Some(d) if d.starts_with("keep") || d.starts_with("no change") || d.starts_with("unchanged") => false,
        Some(d) => return Err(format!("unknown decision `{d}`")),
        None if text.to_lowercase().contains("no change") => false,
        None => return Err("no decision line".into()),
    };
    if !update {
        return Ok((ReplanDecision::keep(rationale), warnings));
    }
    let headers: Vec<(String, usize, usize)> = section_re()
        .captures_iter(text)
        .map(|c| {
            let m = c.get(0).expect("match");
            (normalize_heading(&c[1]), m.start(), m.end())
        })
        .collect();
    let body = |i: usize| {
        let end = headers.get(i + 1).map_or(text.len(), |h| h.1);
        text[headers[i].2..end].trim().to_string()
    };
    let mut objective = None;
    let mut plan = None;
    for (i, (name, _, _)) in headers.iter().enumerate() {
        if name == &normalize_heading(PART1_HEADER) {
            let b = body(i);
            if !b.is_empty() {
                objective = Some(b);
            }
        } else if name.starts_with("part 2") {
            warnings.push("re-plan tried to change the analysis part; ignored".to_string());
        } else if name.contains("plan") {
            plan = parse_plan(&body(i), next_plan_version).ok();
        }
    }
    if objective.is_none() && plan.is_none() {
        return Err("update without a navigation objective or plan".into());
    }
    Ok((
        ReplanDecision {
            changed: true,
            new_nav_objective: objective,
            new_plan: plan,
            rationale,
        },
        warnings,
    ))
}
