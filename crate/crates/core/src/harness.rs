//! Per-task pipeline runs, scoring, artifacts and batch aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::answer::answers_match;
use crate::decomposer::{self, resolve_tips, DecomposeError};
use crate::env::oracle::{oracle_answer, post_exists, EvalTarget, OracleError};
use crate::env::{EnvError, Environment, SiteRegistry, WebTwin};
use crate::executor::{self, ExecError, ExecLimits};
use crate::extractor::{self, ExtractError};
use crate::gateway::{ChatBackend, Exchange, GatewayError, GenerationParams, ScriptedBackend, ScriptedFixture, Session};
use crate::model::{records_to_jsonl, AnalysisOutcome, Decomposition, ModelError, Route, RunMetrics, Stage, TaskSpec, Trajectory};
use crate::navigator::{NavError, NavLimits, Navigator};
use crate::sandbox::Sandbox;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("decomposition: {0}")]
    Decompose(#[from] DecomposeError),
    #[error("navigation: {0}")]
    Nav(#[from] NavError),
    #[error("extraction: {0}")]
    Extract(#[from] ExtractError),
    #[error("execution: {0}")]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scoring: {0}")]
    Oracle(#[from] OracleError),
    #[error("artifacts: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Run(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteMode {
    #[default]
    Auto,
    NavOnly,
}

/// Where each run gets its model backend from.
#[derive(Clone)]
pub enum BackendSource {
    /// A fresh scripted backend per task, built from the entries that apply
    /// to that task.
    Scripted { fixture: ScriptedFixture, strict: bool },
    Shared(Arc<dyn ChatBackend>),
}

#[derive(Clone)]
pub struct RunConfig {
    pub backend: BackendSource,
    pub params: GenerationParams,
    pub sandbox: Arc<dyn Sandbox>,
    pub nav: NavLimits,
    pub exec: ExecLimits,
    pub route_mode: RouteMode,
    /// Run directory root; `None` writes no artifacts.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: Stage,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageLog {
    pub route: Option<String>,
    pub invocations: Vec<StageEvent>,
    pub warnings: Vec<String>,
}

impl StageLog {
    pub fn stages(&self) -> Vec<Stage> {
        self.invocations.iter().map(|e| e.stage).collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub answer: Option<String>,
    pub expected: Option<String>,
    pub metrics: RunMetrics,
    pub stages: StageLog,
    pub route: Option<Route>,
    pub initial_decomposition: Option<Decomposition>,
    pub final_decomposition: Option<Decomposition>,
    pub trajectory: Option<Trajectory>,
    pub act_trajectory: Option<Trajectory>,
    pub outcome: Option<AnalysisOutcome>,
    pub records: usize,
    pub llm_purposes: BTreeMap<String, usize>,
    pub transcript: Vec<Exchange>,
}

/// Writer that counts complete lines while forwarding them.
struct LineSink {
    file: Option<File>,
    lines: u32,
}

impl Write for LineSink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.lines += buf.iter().filter(|&&b| b == b'\n').count() as u32;
        match &mut self.file {
            Some(f) => f.write(buf),
            None => Ok(buf.len()),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match &mut self.file {
            Some(f) => f.flush(),
            None => Ok(()),
        }
    }
}

fn sink(dir: Option<&Path>, name: &str) -> io::Result<LineSink> {
    let file = dir.map(|d| File::create(d.join(name))).transpose()?;
    Ok(LineSink { file, lines: 0 })
}

fn write_json(dir: Option<&Path>, name: &str, value: &impl Serialize) -> io::Result<()> {
    if let Some(dir) = dir {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

/// Mutable state of one run, so a failure at any point still leaves
/// everything gathered so far.
struct RunState {
    report: RunReport,
    env: Option<WebTwin>,
    nav_lines: u32,
}

/// Runs one task end to end. Failures are recorded in the returned metrics,
/// never raised.
pub fn run_task(task: &TaskSpec, registry: &SiteRegistry, config: &RunConfig) -> RunReport {
    let started = Instant::now();
    let mut state = RunState {
        report: RunReport {
            answer: None,
            expected: None,
            metrics: RunMetrics {
                task_id: task.task_id.clone(),
                site_id: task.site_id.clone(),
                success: false,
                nav_steps: 0,
                replan_events: 0,
                llm_calls: 0,
                wall_ms: 0,
                error: None,
            },
            stages: StageLog {
                route: None,
                invocations: Vec::new(),
                warnings: Vec::new(),
            },
            route: None,
            initial_decomposition: None,
            final_decomposition: None,
            trajectory: None,
            act_trajectory: None,
            outcome: None,
            records: 0,
            llm_purposes: BTreeMap::new(),
            transcript: Vec::new(),
        },
        env: None,
        nav_lines: 0,
    };
    let dir = config.out_dir.as_ref().map(|d| d.join(&task.task_id));
    let session = match make_session(task, config) {
        Ok(s) => Some(s),
        Err(e) => {
            state.report.metrics.error = Some(e.to_string());
            None
        }
    };
    if let Some(session) = &session {
        let result = dir
            .as_deref()
            .map(fs::create_dir_all)
            .transpose()
            .map_err(HarnessError::from)
            .and_then(|_| pipeline(task, registry, config, session, dir.as_deref(), &mut state))
            .and_then(|_| session.verify().map_err(HarnessError::from))
            .and_then(|_| score(task, registry, &mut state));
        if let Err(e) = result {
            state.report.metrics.error = Some(e.to_string());
            state.report.metrics.success = false;
        }
        state.report.metrics.llm_calls = session.llm_calls();
        state.report.stages.warnings = session.warnings();
        state.report.transcript = session.transcript();
        for exchange in &state.report.transcript {
            *state.report.llm_purposes.entry(exchange.purpose.clone()).or_default() += 1;
        }
    }
    let report = &mut state.report;
    report.metrics.nav_steps = report
        .trajectory
        .as_ref()
        .map_or(state.nav_lines, |t| t.len() as u32);
    report.metrics.wall_ms = started.elapsed().as_millis() as u64;
    if let Err(e) = write_summary(dir.as_deref(), report) {
        tracing::error!("{}: cannot write artifacts: {e}", task.task_id);
        report.metrics.error.get_or_insert(format!("artifacts: {e}"));
    }
    state.report
}

fn make_session(task: &TaskSpec, config: &RunConfig) -> Result<Session, HarnessError> {
    let backend: Arc<dyn ChatBackend> = match &config.backend {
        BackendSource::Scripted { fixture, strict } => {
            Arc::new(ScriptedBackend::new(&fixture.for_task(&task.task_id), *strict)?)
        }
        BackendSource::Shared(b) => b.clone(),
    };
    Ok(Session::new(backend, config.params.clone()))
}

fn pipeline(
    task: &TaskSpec,
    registry: &SiteRegistry,
    config: &RunConfig,
    session: &Session,
    dir: Option<&Path>,
    state: &mut RunState,
) -> Result<(), HarnessError> {
    task.validate()?;
    let route = match config.route_mode {
        RouteMode::NavOnly => Route::nav_only(),
        RouteMode::Auto => decomposer::route_task(task, session)?,
    };
    state.report.stages.route = Some(route.to_string());
    state.report.route = Some(route.clone());
    let mut decomposition = decomposer::decompose(task, &route, session)?;
    state.report.initial_decomposition = Some(decomposition.clone());
    let tips = resolve_tips(task);
    state.env = Some(registry.reset(task)?);
    let env = state.env.as_mut().expect("env just set");

    let navigator = Navigator::new(session, config.nav.clone(), tips.clone());
    let mut nav_sink = sink(dir, "trajectory.jsonl")?;
    let nav = navigator.run_navigation(task, &mut decomposition, env, Some(&mut nav_sink));
    state.nav_lines = nav_sink.lines;
    state.report.final_decomposition = Some(decomposition.clone());
    let nav = stage_result(&mut state.report.stages, Stage::Navigation, nav)?;
    state.report.metrics.replan_events = nav.replan_events;
    state.report.trajectory = Some(nav.trajectory.clone());
    let initial = state.report.initial_decomposition.as_ref().expect("set above");
    if initial.ie_objective() != decomposition.ie_objective()
        || initial.exec_objective() != decomposition.exec_objective()
    {
        return Err(HarnessError::Run("re-planning changed a non-navigation objective".into()));
    }

    let mut records = None;
    if route.contains(Stage::Extraction) {
        let ie = decomposition.ie_objective().expect("routed extraction has an objective");
        let extracted = extract_stage(task, decomposition.nav_objective(), ie, &nav.trajectory, session);
        let (schema, found) = stage_result(&mut state.report.stages, Stage::Extraction, extracted)?;
        state.report.records = found.len();
        if let Some(dir) = dir {
            fs::write(dir.join("records.jsonl"), records_to_jsonl(&schema, &found))?;
        }
        records = Some(found);
    }

    let mut last = nav.trajectory;
    if route.contains(Stage::Execution) {
        let exec_objective = decomposition
            .exec_objective()
            .expect("routed execution has an objective")
            .to_string();
        let act_limits = NavLimits {
            max_steps: config.exec.act_max_steps,
            replan_enabled: false,
            ..config.nav.clone()
        };
        let actor = Navigator::new(session, act_limits, tips);
        let mutate = executor::requires_mutation(&task.instruction);
        let exec = (|| -> Result<(Option<AnalysisOutcome>, Option<Trajectory>), HarnessError> {
            let mut outcome = None;
            if let Some(records) = &records {
                let code = executor::generate_analysis_code(
                    &exec_objective,
                    records,
                    config.exec.sample_size,
                    session,
                )?;
                let result = executor::run_with_reflection(
                    code,
                    &exec_objective,
                    records,
                    config.sandbox.as_ref(),
                    session,
                    &config.exec,
                );
                outcome = Some(result?);
            }
            if mutate || records.is_none() {
                let result = outcome
                    .as_ref()
                    .and_then(AnalysisOutcome::final_answer)
                    .map(crate::answer::render_answer);
                let mut act_sink = sink(dir, "act_trajectory.jsonl")?;
                env.resume();
                let act = executor::short_horizon_act(
                    result.as_deref(),
                    &exec_objective,
                    task,
                    env,
                    &actor,
                    Some(&mut act_sink),
                )?;
                return Ok((outcome, Some(act.trajectory)));
            }
            Ok((outcome, None))
        })();
        let (outcome, act) = stage_result(&mut state.report.stages, Stage::Execution, exec)?;
        if let Some(outcome) = &outcome {
            write_json(dir, "attempts.json", outcome)?;
            if outcome.final_answer().is_none() {
                state.report.outcome = Some(outcome.clone());
                return Err(HarnessError::Run(format!(
                    "analysis failed after {} attempts",
                    outcome.attempts().len()
                )));
            }
        }
        state.report.outcome = outcome;
        if let Some(act) = act {
            state.report.act_trajectory = Some(act.clone());
            last = act;
        }
    }
    state.report.answer =
        executor::finalize_answer(&route, Some(&last), state.report.outcome.as_ref());
    Ok(())
}

fn extract_stage(
    task: &TaskSpec,
    nav_objective: &str,
    ie_objective: &str,
    trajectory: &Trajectory,
    session: &Session,
) -> Result<(crate::model::ExtractionSchema, Vec<crate::model::Record>), ExtractError> {
    let selected = if trajectory.is_empty() {
        Vec::new()
    } else {
        extractor::select_pages(nav_objective, trajectory, session)?
    };
    let schema = extractor::synthesize_extraction_prompt(task, ie_objective, session)?;
    let mut all = Vec::new();
    for t in selected {
        let step = trajectory.step(t).expect("selection is range-checked");
        all.extend(extractor::extract_fields(&step.observation, &schema, session)?);
    }
    let (kept, dropped) = extractor::dedupe(all, &schema);
    if dropped > 0 {
        tracing::debug!("{}: dropped {dropped} duplicate records", task.task_id);
    }
    Ok((schema, kept))
}

fn stage_result<T, E: Into<HarnessError>>(
    log: &mut StageLog,
    stage: Stage,
    result: Result<T, E>,
) -> Result<T, HarnessError> {
    let result = result.map_err(Into::into);
    log.invocations.push(StageEvent {
        stage,
        ok: result.is_ok(),
        detail: result.as_ref().err().map(|e| e.to_string()),
    });
    result
}

fn score(task: &TaskSpec, registry: &SiteRegistry, state: &mut RunState) -> Result<(), HarnessError> {
    let report = &mut state.report;
    let Some(raw) = task.eval_target.as_deref() else {
        report.metrics.success = false;
        return Ok(());
    };
    let target: EvalTarget = raw.parse()?;
    if let EvalTarget::PostCreated { forum, title } = &target {
        let submissions = state.env.as_ref().map_or(&[][..], |e| e.submissions());
        report.metrics.success = post_exists(submissions, forum, title);
        return Ok(());
    }
    let fixture = registry
        .get(&task.site_id)
        .ok_or_else(|| EnvError::UnknownSite(task.site_id.clone()))?;
    let expected = oracle_answer(task, fixture)?;
    report.metrics.success = report
        .answer
        .as_deref()
        .is_some_and(|a| answers_match(a, &expected));
    report.expected = Some(expected);
    if report.answer.is_none() {
        return Err(HarnessError::Run("run produced no answer".into()));
    }
    Ok(())
}

fn write_summary(dir: Option<&Path>, report: &RunReport) -> io::Result<()> {
    let Some(dir) = dir else { return Ok(()) };
    fs::create_dir_all(dir)?;
    write_json(Some(dir), "stages.json", &report.stages)?;
    write_json(Some(dir), "metrics.json", &report.metrics)?;
    write_json(
        Some(dir),
        "decomposition.json",
        &json!({
            "initial": report.initial_decomposition,
            "final": report.final_decomposition,
        }),
    )?;
    write_json(
        Some(dir),
        "answer.json",
        &json!({ "answer": report.answer, "expected": report.expected }),
    )
}

/// Runs a batch with up to `jobs` tasks in flight. Reports come back in task
/// order.
pub fn run_batch(tasks: &[TaskSpec], registry: &SiteRegistry, config: &RunConfig, jobs: usize) -> Vec<RunReport> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunReport>>> = Mutex::new(vec![None; tasks.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(task) = tasks.get(i) else { break };
                let report = run_task(task, registry, config);
                slots.lock().expect("report lock")[i] = Some(report);
            });
        }
    });
    slots
        .into_inner()
        .expect("report lock")
        .into_iter()
        .map(|r| r.expect("every task ran"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub site_id: String,
    pub runs: usize,
    pub success_pct: f64,
    pub mean_nav_steps: f64,
    pub mean_llm_calls: f64,
    pub replan_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub sites: Vec<SummaryRow>,
    pub overall: SummaryRow,
}

fn row(site_id: &str, metrics: &[&RunMetrics]) -> SummaryRow {
    let n = metrics.len();
    let mean = |f: &dyn Fn(&RunMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            metrics.iter().map(|m| f(m)).sum::<f64>() / n as f64
        }
    };
    SummaryRow {
        site_id: site_id.to_string(),
        runs: n,
        success_pct: mean(&|m| if m.success { 100.0 } else { 0.0 }),
        mean_nav_steps: mean(&|m| f64::from(m.nav_steps)),
        mean_llm_calls: mean(&|m| f64::from(m.llm_calls)),
        replan_events: metrics.iter().map(|m| u64::from(m.replan_events)).sum(),
    }
}

pub fn aggregate(metrics: &[RunMetrics]) -> Summary {
    let mut by_site: BTreeMap<&str, Vec<&RunMetrics>> = BTreeMap::new();
    for m in metrics {
        by_site.entry(m.site_id.as_str()).or_default().push(m);
    }
    Summary {
        sites: by_site.iter().map(|(site, ms)| row(site, ms)).collect(),
        overall: row("overall", &metrics.iter().collect::<Vec<_>>()),
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>5} {:>9} {:>10} {:>10} {:>8}",
            "site", "runs", "success%", "avg steps", "avg calls", "replans"
        )?;
        for r in self.sites.iter().chain(std::iter::once(&self.overall)) {
            writeln!(
                f,
                "{:<20} {:>5} {:>9.1} {:>10.1} {:>10.1} {:>8}",
                r.site_id, r.runs, r.success_pct, r.mean_nav_steps, r.mean_llm_calls, r.replan_events
            )?;
        }
        write!(f, "(answers scored by normalized exact match; an approximation of benchmark evaluators)")
    }
}

/// Reads every `*/metrics.json` under a run directory, in path order.
pub fn load_metrics(dir: &Path) -> io::Result<Vec<RunMetrics>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path().join("metrics.json")))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))
        })
        .collect()
}
