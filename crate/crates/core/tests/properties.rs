mod support;

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, Mutex};

use proptest::prelude::*;
use serde_json::{json, Value};

use sitewalk::action::{parse_action, Action};
use sitewalk::decomposer::{parse_decomposition, render_parts};
use sitewalk::env::{Environment, GeneratorParams, SiteFixture, StepOutcome, WebTwin};
use sitewalk::executor::{run_with_reflection, ExecLimits};
use sitewalk::extractor::dedupe;
use sitewalk::gateway::{purpose, ScriptEntry};
use sitewalk::harness::run_task;
use sitewalk::model::{
    AttemptStatus, Decomposition, ExtractionSchema, FieldSpec, Observation, Record, Route, Scalar, Stage,
    StepRecord, Trajectory,
};
use sitewalk::navigator::{NavLimits, Navigator};
use sitewalk::sandbox::{Sandbox, SandboxError, SandboxRequest, SandboxResponse};
use sitewalk::scripting::{sample_tasks, script_task, ScriptOptions};

fn text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.'-]{0,40}"
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (0u32..10_000).prop_map(|id| Action::Click { id }),
        (0u32..10_000, "[A-Za-z0-9 ,.'-]{1,30}", any::<bool>()).prop_map(|(id, content, press_enter)| {
            Action::TypeText { id, content: content.trim().to_string() + "x", press_enter }
        }),
        Just(Action::GoBack),
        "[A-Za-z0-9 ,.'\n-]{0,60}".prop_map(|answer| Action::Stop { answer }),
    ]
}

/// A valid trajectory: contiguous steps, non-decreasing versions, at most
/// one stop and only at the end. An empty trajectory has no lines and so
/// no task id to recover; at least one step is generated.
fn trajectory() -> impl Strategy<Value = Trajectory> {
    prop::collection::vec((text(), action(), 0u32..3, 0u32..3, prop::option::of(text())), 1..12).prop_map(|raw| {
        let mut t = Trajectory::new("prop");
        let (mut plan_v, mut obj_v) = (0, 0);
        t.record_objective(0, "objective v0").unwrap();
        let n = raw.len();
        for (i, (reasoning, mut action, dp, dv, error)) in raw.into_iter().enumerate() {
            if matches!(action, Action::Stop { .. }) && i + 1 != n {
                action = Action::GoBack;
            }
            plan_v += dp;
            if dv > 1 {
                obj_v += 1;
                t.record_objective(obj_v, &format!("objective v{obj_v}")).unwrap();
            }
            let step = (i + 1) as u32;
            t.push(StepRecord {
                t: step,
                reasoning,
                action,
                observation: Observation::from_tree(step, &format!("p{i}"), "http://site/x", &format!("[{i}] RootWebArea 'p{i}'")),
                plan_version: plan_v,
                nav_objective_version: obj_v,
                error,
            })
            .unwrap();
        }
        t
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trajectory_jsonl_round_trips(t in trajectory()) {
        let text = t.to_jsonl();
        prop_assert_eq!(Trajectory::from_jsonl(&text).unwrap(), t);
    }

    #[test]
    fn actions_round_trip_through_surface_form(a in action(), reasoning in "[A-Za-z ,.]{0,40}") {
        let wire = format!("Reason: {reasoning}\nAction: {a}");
        let (_, parsed) = parse_action(&wire).unwrap();
        prop_assert_eq!(&parsed, &a);
        let json: Action = serde_json::from_value(serde_json::to_value(&a).unwrap()).unwrap();
        prop_assert_eq!(json, a);
    }

    #[test]
    fn pushes_never_change_existing_steps(t in trajectory(), extra in action()) {
        let before = t.steps().to_vec();
        let mut t2 = t.clone();
        let step = before.len() as u32 + 1;
        let _ = t2.push(StepRecord {
            t: step,
            reasoning: String::new(),
            action: extra,
            observation: Observation::from_tree(step, "q", "u", "[1] RootWebArea 'q'"),
            plan_version: 0,
            nav_objective_version: 0,
            error: None,
        });
        prop_assert_eq!(&t2.steps()[..before.len()], &before[..]);
    }

    #[test]
    fn dedupe_keeps_first_occurrences_in_order(ids in prop::collection::vec(0i64..8, 0..40)) {
        let schema = ExtractionSchema {
            field_specs: vec![
                FieldSpec { name: "id".into(), description: String::new() },
                FieldSpec { name: "pos".into(), description: String::new() },
            ],
            identifier_field: "id".into(),
            example_record: BTreeMap::new(),
            prompt_text: String::new(),
        };
        let records: Vec<Record> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| Record {
                values: BTreeMap::from([
                    ("id".to_string(), Scalar::Integer(*id)),
                    ("pos".to_string(), Scalar::Integer(i as i64)),
                ]),
                source_step: i as u32 + 1,
            })
            .collect();
        let (kept, dropped) = dedupe(records, &schema);
        prop_assert_eq!(kept.len() + dropped, ids.len());
        let positions: Vec<i64> = kept.iter().map(|r| match r.values["pos"] { Scalar::Integer(p) => p, _ => unreachable!() }).collect();
        prop_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        let mut seen = HashSet::new();
        let expected: Vec<i64> = ids.iter().enumerate().filter(|(_, id)| seen.insert(**id)).map(|(i, _)| i as i64).collect();
        prop_assert_eq!(positions, expected);
    }

    #[test]
    fn rendered_parts_parse_back(nav in "[A-Za-z][A-Za-z0-9 ,.]{0,60}", analysis in "[A-Za-z][A-Za-z0-9 ,.]{0,60}") {
        let route = Route::new([Stage::Navigation, Stage::Execution]).unwrap();
        let d = parse_decomposition(&render_parts(&nav, &analysis), &route).unwrap();
        prop_assert_eq!(d.nav_objective(), nav.trim());
        prop_assert_eq!(d.exec_objective(), Some(analysis.trim()));
    }
}

fn small_site(seed: u64, items: u32) -> SiteFixture {
    SiteFixture::generate(
        "prop",
        seed,
        &GeneratorParams {
            categories: vec![support::category("Home Audio", items)],
            ..Default::default()
        },
    )
}

/// Clicks the `choice`-th link or option on the page, if any.
fn click_nth(twin: &mut WebTwin, choice: usize) -> Option<Action> {
    let ids: Vec<u32> = twin.nodes().iter().filter(|n| n.role == "link" || n.role == "option").map(|n| n.id).collect();
    if ids.is_empty() {
        return None;
    }
    let action = Action::Click { id: ids[choice % ids.len()] };
    match twin.step(&action) {
        Ok(StepOutcome::Page { .. }) | Err(_) => Some(action),
        Ok(StepOutcome::Terminal { .. }) => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generation_is_deterministic_with_unique_ids(seed in any::<u64>(), items in 0u32..60) {
        let a = small_site(seed, items);
        prop_assert_eq!(&a, &small_site(seed, items));
        let ids: HashSet<&str> = a.items.iter().map(|i| i.item_id.as_str()).collect();
        prop_assert_eq!(ids.len(), a.items.len());
        prop_assert!(a.items.iter().all(|i| i.rating_pct <= 100));
    }

    #[test]
    fn same_actions_give_same_observations(seed in any::<u64>(), choices in prop::collection::vec(0usize..50, 1..12)) {
        let fixture = Arc::new(small_site(seed, 40));
        let mut a = WebTwin::new(fixture.clone());
        let mut b = WebTwin::new(fixture);
        for c in choices {
            let Some(action) = click_nth(&mut a, c) else { break };
            let _ = b.step(&action);
            prop_assert_eq!(a.observe().ax_tree, b.observe().ax_tree);
            prop_assert_eq!(a.nav_stack().last().cloned(), Some(a.current_page_id()));
        }
    }

    #[test]
    fn walking_all_pages_covers_the_category(seed in any::<u64>(), items in 1u32..70) {
        let fixture = small_site(seed, items);
        let expected: HashSet<String> = fixture.items_in("Home Audio").map(|i| i.item_id.clone()).collect();
        let mut twin = WebTwin::new(Arc::new(fixture));
        let id = twin.find("link", "Home Audio").unwrap();
        twin.step(&Action::Click { id }).unwrap();
        let mut seen = Vec::new();
        loop {
            seen.extend(twin.listed_ids());
            let Some(next) = twin.find("link", "Next Page") else { break };
            twin.step(&Action::Click { id: next }).unwrap();
        }
        prop_assert_eq!(seen.len(), expected.len());
        prop_assert_eq!(seen.into_iter().collect::<HashSet<_>>(), expected);
    }

    #[test]
    fn navigation_respects_the_step_cap(max_steps in 1u32..8, script_len in 0usize..10) {
        let session = support::session(
            std::iter::once(ScriptEntry::new(purpose::PLAN, "", "1. Wander.\n2. Stop when done."))
                .chain((0..script_len).map(|_| ScriptEntry::new(purpose::ACT, "", "Action: go_back")))
                .collect(),
        );
        let limits = NavLimits { max_steps, replan_enabled: false, ..NavLimits::default() };
        let mut env = WebTwin::new(Arc::new(small_site(1, 5)));
        let mut d = Decomposition::nav_only("wander");
        let task = sitewalk::model::TaskSpec {
            task_id: "cap".into(),
            instruction: "wander".into(),
            site_id: "prop".into(),
            website_tips: None,
            eval_target: None,
        };
        // Terminates either at the cap or when the script runs dry.
        match Navigator::new(&session, limits, "").run_navigation(&task, &mut d, &mut env, None) {
            Ok(outcome) => {
                prop_assert!(outcome.trajectory.len() as u32 <= max_steps);
                prop_assert_eq!(outcome.trajectory.len(), (max_steps as usize).min(script_len));
            }
            Err(_) => prop_assert!(script_len < max_steps as usize),
        }
    }
}

/// Sandbox double that fails a scripted number of times, then succeeds.
struct Flaky {
    failures: usize,
    seen: Mutex<Vec<usize>>,
}

impl Sandbox for Flaky {
    fn execute(&self, request: &SandboxRequest) -> Result<SandboxResponse, SandboxError> {
        let mut seen = self.seen.lock().unwrap();
        seen.push(request.records.len());
        Ok(if seen.len() <= self.failures {
            SandboxResponse::error(format!("Traceback: failure {}", seen.len()))
        } else {
            SandboxResponse { status: AttemptStatus::Ok, answer: Some(json!(seen.len())), traceback: None, stdout: String::new() }
        })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflection_attempts_are_bounded_and_ordered(
        failures in 0usize..6,
        max_attempts in 1u32..5,
        sample_size in 0usize..4,
        n_records in 0usize..20,
    ) {
        let sandbox = Flaky { failures, seen: Mutex::new(Vec::new()) };
        let session = support::session(
            (0..max_attempts).map(|i| ScriptEntry::new(purpose::REFLECT, "", format!("```python\nanswer = {i}\n```"))).collect(),
        );
        let records: Vec<Record> = (0..n_records)
            .map(|i| Record { values: BTreeMap::from([("n".to_string(), Scalar::Integer(i as i64))]), source_step: 1 })
            .collect();
        let limits = ExecLimits { max_attempts, sample_size, ..ExecLimits::default() };
        let outcome = run_with_reflection("answer = 0".into(), "count", &records, &sandbox, &session, &limits).unwrap();
        let attempts = outcome.attempts();
        prop_assert_eq!(attempts.len(), (failures + 1).min(max_attempts as usize));
        let first_ok = attempts.iter().position(|a| a.status == AttemptStatus::Ok);
        if let Some(i) = first_ok {
            prop_assert_eq!(i, attempts.len() - 1);
        }
        prop_assert_eq!(outcome.final_answer().is_some(), failures < max_attempts as usize);
        // Full-data guarantee.
        prop_assert!(sandbox.seen.lock().unwrap().iter().all(|&n| n == n_records));
        // Every reflection request quotes the failing code and its traceback.
        for (i, e) in session.transcript().iter().enumerate() {
            prop_assert!(e.request.contains(&attempts[i].code));
            let traceback = format!("Traceback: failure {}", i + 1);
            prop_assert!(e.request.contains(&traceback));
        }
    }
}

#[test]
fn scripted_runs_repeat_exactly_and_count_calls() {
    let shop = support::shop(13);
    let task = sample_tasks(&shop, 13, 1).remove(0);
    let reg = support::registry([shop]);
    let script = script_task(&task, Arc::clone(reg.get("shop").unwrap()), ScriptOptions::default()).unwrap();
    let a = run_task(&task, &reg, &support::config(script.clone(), true));
    let b = run_task(&task, &reg, &support::config(script, true));
    assert!(a.metrics.success);
    assert_eq!(a.transcript, b.transcript);
    assert_eq!(a.metrics.llm_calls as usize, a.transcript.len());
    let by_purpose: usize = a.llm_purposes.values().sum();
    assert_eq!(by_purpose, a.transcript.len());
    let _: Value = serde_json::to_value(&a.metrics).unwrap();
}
