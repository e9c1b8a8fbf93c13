//! Domain types shared by every pipeline stage, plus the two flat-file
//! formats: trajectory JSON Lines and the records file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::action::Action;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("task instruction is empty")]
    EmptyInstruction,
    #[error("invalid route: {0}")]
    InvalidRoute(String),
    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("invalid extraction schema: {0}")]
    InvalidSchema(String),
    #[error("trajectory invariant violated: {0}")]
    TrajectoryInvariant(String),
    #[error("line {line}: malformed: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: invariant violated: {message}")]
    InvariantViolation { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    pub site_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub website_tips: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_target: Option<String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.instruction.trim().is_empty() {
            return Err(ModelError::EmptyInstruction);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Navigation,
    Extraction,
    Execution,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Navigation => "navigation",
            Stage::Extraction => "extraction",
            Stage::Execution => "execution",
        })
    }
}

/// Which pipeline stages a task runs, always in pipeline order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Route(Vec<Stage>);

impl Route {
    pub fn new(stages: impl IntoIterator<Item = Stage>) -> Result<Self, ModelError> {
        let set: BTreeSet<Stage> = stages.into_iter().collect();
        if !set.contains(&Stage::Navigation) {
            return Err(ModelError::InvalidRoute(
                "navigation stage is mandatory".into(),
            ));
        }
        Ok(Route(set.into_iter().collect()))
    }

    pub fn nav_only() -> Self {
        Route(vec![Stage::Navigation])
    }

    pub fn full() -> Self {
        Route(vec![Stage::Navigation, Stage::Extraction, Stage::Execution])
    }

    pub fn stages(&self) -> &[Stage] {
        &self.0
    }

    pub fn contains(&self, stage: Stage) -> bool {
        self.0.contains(&stage)
    }

    pub fn is_nav_only(&self) -> bool {
        self.0.len() == 1
    }
}

impl<'de> Deserialize<'de> for Route {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let stages = Vec::<Stage>::deserialize(deserializer)?;
        Route::new(stages).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.0.iter().map(Stage::to_string).collect();
        f.write_str(&names.join(","))
    }
}

/// The split of a task into per-stage objectives.
///
/// Only `nav_objective` may change after construction; each change bumps
/// `version`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    nav_objective: String,
    ie_objective: Option<String>,
    exec_objective: Option<String>,
    route: Route,
    version: u32,
}

impl Decomposition {
    pub fn new(
        nav_objective: String,
        ie_objective: Option<String>,
        exec_objective: Option<String>,
        route: Route,
    ) -> Result<Self, ModelError> {
        if nav_objective.trim().is_empty() {
            return Err(ModelError::InvalidDecomposition(
                "navigation objective is empty".into(),
            ));
        }
        if ie_objective.is_some() != route.contains(Stage::Extraction) {
            return Err(ModelError::InvalidDecomposition(
                "extraction objective must be present iff extraction is routed".into(),
            ));
        }
        if exec_objective.is_some() != route.contains(Stage::Execution) {
            return Err(ModelError::InvalidDecomposition(
                "execution objective must be present iff execution is routed".into(),
            ));
        }
        Ok(Decomposition {
            nav_objective,
            ie_objective,
            exec_objective,
            route,
            version: 0,
        })
    }

    /// Navigation-only decomposition: the instruction is the objective.
    pub fn nav_only(instruction: &str) -> Self {
        Decomposition {
            nav_objective: instruction.to_string(),
            ie_objective: None,
            exec_objective: None,
            route: Route::nav_only(),
            version: 0,
        }
    }

    pub fn nav_objective(&self) -> &str {
        &self.nav_objective
    }

    pub fn ie_objective(&self) -> Option<&str> {
        self.ie_objective.as_deref()
    }

    pub fn exec_objective(&self) -> Option<&str> {
        self.exec_objective.as_deref()
    }

    pub fn route(&self) -> &Route {
        &self.route
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Replaces the navigation objective and bumps the version.
    pub fn revise_nav_objective(&mut self, objective: String) {
        self.nav_objective = objective;
        self.version += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub step_index: u32,
    pub page_id: String,
    pub url: String,
    pub ax_tree: String,
    pub element_ids: BTreeSet<u32>,
}

fn bracket_id_pattern() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[(\d+)\]").expect("static regex"))
}

impl Observation {
    /// Builds an observation, collecting every bracketed id in the tree.
    pub fn from_tree(step_index: u32, page_id: &str, url: &str, ax_tree: &str) -> Self {
        let element_ids = bracket_id_pattern()
            .captures_iter(ax_tree)
            .filter_map(|c| c[1].parse().ok())
            .collect();
        Observation {
            step_index,
            page_id: page_id.to_string(),
            url: url.to_string(),
            ax_tree: ax_tree.to_string(),
            element_ids,
        }
    }

    pub fn at_step(mut self, step_index: u32) -> Self {
        self.step_index = step_index;
        self
    }

    /// First `max_lines` lines of the tree (the title line is always first).
    pub fn summary(&self, max_lines: usize) -> String {
        self.ax_tree
            .lines()
            .take(max_lines)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub t: u32,
    pub reasoning: String,
    pub action: Action,
    pub observation: Observation,
    pub plan_version: u32,
    pub nav_objective_version: u32,
    /// Set when the environment rejected the action.
    pub error: Option<String>,
}

/// Interaction history of one navigation run. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trajectory {
    task_id: String,
    steps: Vec<StepRecord>,
    terminal_answer: Option<String>,
    objective_history: Vec<(u32, String)>,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>) -> Self {
        Trajectory {
            task_id: task_id.into(),
            ..Default::default()
        }
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn terminal_answer(&self) -> Option<&str> {
        self.terminal_answer.as_deref()
    }

    pub fn objective_history(&self) -> &[(u32, String)] {
        &self.objective_history
    }

    /// True when the run ended without a stop action.
    pub fn is_truncated(&self) -> bool {
        self.terminal_answer.is_none()
    }

    pub fn step(&self, t: u32) -> Option<&StepRecord> {
        t.checked_sub(1).and_then(|i| self.steps.get(i as usize))
    }

    /// Records a navigation-objective version. Versions must strictly increase.
    pub fn record_objective(&mut self, version: u32, objective: &str) -> Result<(), ModelError> {
        if let Some((last, _)) = self.objective_history.last() {
            if version <= *last {
                return Err(ModelError::TrajectoryInvariant(format!(
                    "objective version {version} does not follow {last}"
                )));
            }
        }
        self.objective_history.push((version, objective.to_string()));
        Ok(())
    }

    pub fn push(&mut self, step: StepRecord) -> Result<(), ModelError> {
        let expected = self.steps.len() as u32 + 1;
        if self.terminal_answer.is_some() {
            return Err(ModelError::TrajectoryInvariant(
                "cannot append after a stop action".into(),
            ));
        }
        if step.t != expected {
            return Err(ModelError::TrajectoryInvariant(format!(
                "expected step {expected}, got {}",
                step.t
            )));
        }
        if step.observation.step_index != step.t {
            return Err(ModelError::TrajectoryInvariant(format!(
                "step {} carries observation index {}",
                step.t, step.observation.step_index
            )));
        }
        if let Some(prev) = self.steps.last() {
            if step.plan_version < prev.plan_version
                || step.nav_objective_version < prev.nav_objective_version
            {
                return Err(ModelError::TrajectoryInvariant(format!(
                    "versions decrease at step {}",
                    step.t
                )));
            }
        }
        if let Action::Stop { answer } = &step.action {
            self.terminal_answer = Some(answer.clone());
        }
        self.steps.push(step);
        Ok(())
    }

    /// JSON Lines rendering, one object per step.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (line, _) in self.lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// The JSON line for step `t` as it appears in [`Trajectory::to_jsonl`].
    pub fn step_line(&self, t: u32) -> Option<String> {
        self.lines().into_iter().nth(t.checked_sub(1)? as usize).map(|(l, _)| l)
    }

    fn lines(&self) -> Vec<(String, u32)> {
        let mut pending = self.objective_history.iter().peekable();
        let last = self.steps.len();
        self.steps
            .iter()
            .enumerate()
            .map(|(i, step)| {
                let mut updates = Vec::new();
                while let Some((v, text)) = pending.peek() {
                    if *v <= step.nav_objective_version || i + 1 == last {
                        updates.push((*v, text.clone()));
                        pending.next();
                    } else {
                        break;
                    }
                }
                let line = StepLine {
                    task_id: self.task_id.clone(),
                    t: step.t,
                    page_id: step.observation.page_id.clone(),
                    url: step.observation.url.clone(),
                    reason: step.reasoning.clone(),
                    action: step.action.to_string(),
                    plan_version: step.plan_version,
                    nav_objective_version: step.nav_objective_version,
                    error: step.error.clone(),
                    objective_updates: updates,
                    observation: step.observation.ax_tree.clone(),
                };
                (
                    serde_json::to_string(&line).expect("step line serializes"),
                    step.t,
                )
            })
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ModelError> {
        let mut trajectory = Trajectory::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let line: StepLine =
                serde_json::from_str(raw).map_err(|e| ModelError::MalformedLine {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let action: Action = line.action.parse().map_err(|e| ModelError::MalformedLine {
                line: line_no,
                message: format!("action: {e}"),
            })?;
            if line.t == 0 {
                return Err(ModelError::InvariantViolation {
                    line: line_no,
                    message: "step index must be at least 1".into(),
                });
            }
            if trajectory.steps.is_empty() {
                trajectory.task_id = line.task_id.clone();
            } else if trajectory.task_id != line.task_id {
                return Err(ModelError::InvariantViolation {
                    line: line_no,
                    message: "task id changes mid-trajectory".into(),
                });
            }
            for (v, text) in &line.objective_updates {
                trajectory
                    .record_objective(*v, text)
                    .map_err(|e| ModelError::InvariantViolation {
                        line: line_no,
                        message: e.to_string(),
                    })?;
            }
            let observation =
                Observation::from_tree(line.t, &line.page_id, &line.url, &line.observation);
            trajectory
                .push(StepRecord {
                    t: line.t,
                    reasoning: line.reason,
                    action,
                    observation,
                    plan_version: line.plan_version,
                    nav_objective_version: line.nav_objective_version,
                    error: line.error,
                })
                .map_err(|e| ModelError::InvariantViolation {
                    line: line_no,
                    message: e.to_string(),
                })?;
        }
        Ok(trajectory)
    }
}

#[derive(Serialize, Deserialize)]
struct StepLine {
    task_id: String,
    t: u32,
    page_id: String,
    url: String,
    reason: String,
    action: String,
    plan_version: u32,
    nav_objective_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    objective_updates: Vec<(u32, String)>,
    observation: String,
}

/// High-level browsing plan with a stopping criterion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    steps: Vec<String>,
    stopping_criterion: String,
    version: u32,
}

impl Plan {
    pub fn new(
        steps: Vec<String>,
        stopping_criterion: String,
        version: u32,
    ) -> Result<Self, ModelError> {
        if steps.is_empty() || steps.iter().all(|s| s.trim().is_empty()) {
            return Err(ModelError::InvalidPlan("plan has no steps".into()));
        }
        if stopping_criterion.trim().is_empty() {
            return Err(ModelError::InvalidPlan("stopping criterion is empty".into()));
        }
        Ok(Plan {
            steps,
            stopping_criterion,
            version,
        })
    }

    pub fn steps(&self) -> &[String] {
        &self.steps
    }

    pub fn stopping_criterion(&self) -> &str {
        &self.stopping_criterion
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Numbered rendering used in prompts.
    pub fn render(&self) -> String {
        let mut out: Vec<String> = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {s}", i + 1))
            .collect();
        out.push(format!("Stopping criterion: {}", self.stopping_criterion));
        out.join("\n")
    }
}

/// Canonical decimal text (shortest round-trip form), e.g. `12.5`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Decimal(String);

impl Decimal {
    pub fn from_f64(value: f64) -> Option<Self> {
        value.is_finite().then(|| Decimal(format!("{value}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.parse().expect("canonical decimal parses")
    }
}

impl std::str::FromStr for Decimal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: f64 = s.trim().parse().map_err(|_| format!("not a decimal: {s}"))?;
        Decimal::from_f64(v).ok_or_else(|| format!("not finite: {s}"))
    }
}

/// A record field value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scalar {
    Text(String),
    Integer(i64),
    Decimal(Decimal),
    Bool(bool),
    Null,
}

impl Scalar {
    /// Coerces a JSON value; arrays and objects have no scalar form.
    pub fn from_json(value: &Value) -> Option<Scalar> {
        Some(match value {
            Value::Null => Scalar::Null,
            Value::Bool(b) => Scalar::Bool(*b),
            Value::String(s) => Scalar::Text(s.clone()),
            Value::Number(n) => match n.as_i64() {
                Some(i) => Scalar::Integer(i),
                None => Scalar::Decimal(Decimal::from_f64(n.as_f64()?)?),
            },
            Value::Array(_) | Value::Object(_) => return None,
        })
    }

    pub fn to_json(&self) -> Value {
        match self {
            Scalar::Text(s) => Value::String(s.clone()),
            Scalar::Integer(i) => Value::from(*i),
            Scalar::Decimal(d) => serde_json::Number::from_f64(d.to_f64())
                .map(Value::Number)
                .unwrap_or(Value::Null),
            Scalar::Bool(b) => Value::Bool(*b),
            Scalar::Null => Value::Null,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Scalar::Null)
    }

    /// Key used for identifier comparison during deduplication.
    pub fn identity_key(&self) -> String {
        match self {
            Scalar::Text(s) => format!("s:{s}"),
            Scalar::Integer(i) => format!("n:{i}"),
            Scalar::Decimal(d) => format!("n:{}", d.as_str()),
            Scalar::Bool(b) => format!("b:{b}"),
            Scalar::Null => "null".into(),
        }
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(deserializer)?;
        Scalar::from_json(&v).ok_or_else(|| serde::de::Error::custom("expected a scalar value"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub description: String,
}

/// The fixed field layout every extracted record shares.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionSchema {
    pub field_specs: Vec<FieldSpec>,
    pub identifier_field: String,
    pub example_record: BTreeMap<String, Scalar>,
    pub prompt_text: String,
}

impl ExtractionSchema {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.field_specs.is_empty() {
            return Err(ModelError::InvalidSchema("schema has no fields".into()));
        }
        let names: BTreeSet<&str> = self.field_specs.iter().map(|f| f.name.as_str()).collect();
        if names.len() != self.field_specs.len() {
            return Err(ModelError::InvalidSchema("duplicate field names".into()));
        }
        if !names.contains(self.identifier_field.as_str()) {
            return Err(ModelError::InvalidSchema(format!(
                "identifier `{}` is not a field",
                self.identifier_field
            )));
        }
        let example: BTreeSet<&str> = self.example_record.keys().map(String::as_str).collect();
        if example != names {
            return Err(ModelError::InvalidSchema(
                "example record keys differ from field names".into(),
            ));
        }
        Ok(())
    }

    pub fn field_names(&self) -> impl Iterator<Item = &str> {
        self.field_specs.iter().map(|f| f.name.as_str())
    }

    pub fn has_field(&self, name: &str) -> bool {
        self.field_specs.iter().any(|f| f.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub values: BTreeMap<String, Scalar>,
    pub source_step: u32,
}

impl Record {
    pub fn identifier<'a>(&'a self, schema: &ExtractionSchema) -> Option<&'a Scalar> {
        self.values
            .get(&schema.identifier_field)
            .filter(|v| !v.is_null())
    }

    /// The flat value map a sandboxed script sees as one element of `data`.
    pub fn to_json_values(&self) -> Value {
        Value::Object(
            self.values
                .iter()
                .map(|(k, v)| (k.clone(), v.to_json()))
                .collect(),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaHeader {
    schema: ExtractionSchema,
}

/// Records file: a `{"schema": ...}` header line then one record per line.
pub fn records_to_jsonl(schema: &ExtractionSchema, records: &[Record]) -> String {
    let mut out = serde_json::to_string(&SchemaHeader {
        schema: schema.clone(),
    })
    .expect("schema serializes");
    out.push('\n');
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<(ExtractionSchema, Vec<Record>), ModelError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(ModelError::MalformedLine {
        line: 1,
        message: "missing schema header".into(),
    })?;
    let header: SchemaHeader =
        serde_json::from_str(header).map_err(|e| ModelError::MalformedLine {
            line: 1,
            message: e.to_string(),
        })?;
    let schema = header.schema;
    let mut records = Vec::new();
    for (idx, raw) in lines {
        let record: Record = serde_json::from_str(raw).map_err(|e| ModelError::MalformedLine {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if let Some(key) = record.values.keys().find(|k| !schema.has_field(k)) {
            return Err(ModelError::InvariantViolation {
                line: idx + 1,
                message: format!("unknown field `{key}`"),
            });
        }
        if record.identifier(&schema).is_none() {
            return Err(ModelError::InvariantViolation {
                line: idx + 1,
                message: "identifier value is null".into(),
            });
        }
        records.push(record);
    }
    Ok((schema, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttemptStatus {
    Ok,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub code: String,
    pub status: AttemptStatus,
    pub answer: Option<Value>,
    pub traceback: Option<String>,
    pub wall_ms: u64,
}

/// Every sandbox attempt of one execution stage, in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutcome {
    attempts: Vec<Attempt>,
    final_answer: Option<Value>,
}

impl AnalysisOutcome {
    pub fn push(&mut self, attempt: Attempt) -> Result<(), ModelError> {
        if self.final_answer.is_some() {
            return Err(ModelError::TrajectoryInvariant(
                "no attempt may follow a successful one".into(),
            ));
        }
        if attempt.status == AttemptStatus::Ok {
            self.final_answer = Some(attempt.answer.clone().unwrap_or(Value::Null));
        }
        self.attempts.push(attempt);
        Ok(())
    }

    pub fn attempts(&self) -> &[Attempt] {
        &self.attempts
    }

    pub fn final_answer(&self) -> Option<&Value> {
        self.final_answer.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub task_id: String,
    #[serde(default)]
    pub site_id: String,
    pub success: bool,
    pub nav_steps: u32,
    pub replan_events: u32,
    pub llm_calls: u32,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(t: u32, page: &str) -> Observation {
        Observation::from_tree(t, page, "http://x", &format!("[1] RootWebArea '{page}'\n\t[2] link 'Next'"))
    }

    fn step(t: u32, action: Action) -> StepRecord {
        StepRecord {
            t,
            reasoning: format!("reason {t}"),
            action,
            observation: obs(t, &format!("p{t}")),
            plan_version: 0,
            nav_objective_version: 0,
            error: None,
        }
    }

    #[test]
    fn route_is_canonical() {
        let r = Route::new([Stage::Execution, Stage::Navigation]).unwrap();
        assert_eq!(r.stages(), &[Stage::Navigation, Stage::Execution]);
        assert!(Route::new([Stage::Extraction]).is_err());
        assert!(Route::new([]).is_err());
    }

    #[test]
    fn decomposition_presence_rules() {
        let route = Route::new([Stage::Navigation, Stage::Execution]).unwrap();
        assert!(Decomposition::new("a".into(), None, Some("b".into()), route.clone()).is_ok());
        assert!(Decomposition::new("a".into(), Some("x".into()), Some("b".into()), route.clone()).is_err());
        assert!(Decomposition::new("a".into(), None, None, route).is_err());
    }

    #[test]
    fn observation_ids_cover_brackets() {
        let o = obs(1, "home");
        assert_eq!(o.element_ids, BTreeSet::from([1, 2]));
    }

    #[test]
    fn empty_trajectory_serializes_to_nothing() {
        assert_eq!(Trajectory::new("t").to_jsonl(), "");
        assert_eq!(Trajectory::from_jsonl("").unwrap(), Trajectory::default());
    }

    #[test]
    fn single_stop_step() {
        let mut tr = Trajectory::new("t1");
        tr.record_objective(0, "find it").unwrap();
        tr.push(step(1, Action::Stop { answer: "done".into() })).unwrap();
        let text = tr.to_jsonl();
        assert_eq!(text.lines().count(), 1);
        let v: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["action"], "stop [done]");
        for key in ["t", "page_id", "reason", "action", "plan_version", "nav_objective_version"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(Trajectory::from_jsonl(&text).unwrap(), tr);
        assert_eq!(tr.terminal_answer(), Some("done"));
    }

    #[test]
    fn zero_step_index_is_rejected() {
        let mut tr = Trajectory::new("t1");
        tr.push(step(1, Action::GoBack)).unwrap();
        let line = tr.to_jsonl().replace("\"t\":1", "\"t\":0");
        assert!(matches!(
            Trajectory::from_jsonl(&line),
            Err(ModelError::InvariantViolation { line: 1, .. })
        ));
    }

    #[test]
    fn truncated_line_reports_its_number() {
        let mut tr = Trajectory::new("t1");
        tr.push(step(1, Action::Click { id: 2 })).unwrap();
        tr.push(step(2, Action::GoBack)).unwrap();
        let text = tr.to_jsonl();
        let second = text.lines().nth(1).unwrap();
        let broken = format!("{}\n{}\n", text.lines().next().unwrap(), &second[..second.len() / 2]);
        assert!(matches!(
            Trajectory::from_jsonl(&broken),
            Err(ModelError::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn non_increasing_steps_rejected() {
        let mut tr = Trajectory::new("t1");
        tr.push(step(1, Action::Click { id: 2 })).unwrap();
        assert!(tr.push(step(1, Action::GoBack)).is_err());
        assert!(tr.push(step(3, Action::GoBack)).is_err());
        let mut regress = step(2, Action::GoBack);
        regress.plan_version = 0;
        let mut tr2 = Trajectory::new("t2");
        let mut first = step(1, Action::Click { id: 2 });
        first.plan_version = 2;
        tr2.push(first).unwrap();
        assert!(tr2.push(regress).is_err());
    }

    #[test]
    fn nothing_appends_after_stop() {
        let mut tr = Trajectory::new("t1");
        tr.push(step(1, Action::Stop { answer: "x".into() })).unwrap();
        assert!(tr.push(step(2, Action::GoBack)).is_err());
    }

    #[test]
    fn decimal_and_scalar_json() {
        let v: Value = serde_json::from_str(r#"{"a": 12.50, "b": 3, "c": "x", "d": null, "e": true}"#).unwrap();
        let s: BTreeMap<String, Scalar> = serde_json::from_value(v).unwrap();
        assert_eq!(s["a"], Scalar::Decimal("12.5".parse().unwrap()));
        assert_eq!(s["b"], Scalar::Integer(3));
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"a":12.5,"b":3,"c":"x","d":null,"e":true}"#);
        assert!(Scalar::from_json(&serde_json::json!([1])).is_none());
    }

    #[test]
    fn records_file_round_trip() {
        let schema = ExtractionSchema {
            field_specs: vec![
                FieldSpec { name: "sku".into(), description: "id".into() },
                FieldSpec { name: "price".into(), description: "".into() },
            ],
            identifier_field: "sku".into(),
            example_record: BTreeMap::from([
                ("sku".into(), Scalar::Text("A".into())),
                ("price".into(), Scalar::Decimal("1.5".parse().unwrap())),
            ]),
            prompt_text: "extract".into(),
        };
        schema.validate().unwrap();
        let records = vec![Record {
            values: BTreeMap::from([
                ("sku".into(), Scalar::Text("C1".into())),
                ("price".into(), Scalar::Decimal("19.99".parse().unwrap())),
            ]),
            source_step: 3,
        }];
        let text = records_to_jsonl(&schema, &records);
        assert!(text.starts_with("{\"schema\":"));
        assert_eq!(records_from_jsonl(&text).unwrap(), (schema, records));
    }

    #[test]
    fn outcome_rejects_attempt_after_ok() {
        let mut outcome = AnalysisOutcome::default();
        let ok = Attempt {
            code: "answer = 1".into(),
            status: AttemptStatus::Ok,
            answer: Some(Value::from(1)),
            traceback: None,
            wall_ms: 1,
        };
        outcome.push(ok.clone()).unwrap();
        assert_eq!(outcome.final_answer(), Some(&Value::from(1)));
        assert!(outcome.push(ok).is_err());
    }
}
