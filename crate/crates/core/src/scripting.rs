//! Authoring scripted model fixtures for harness tasks.
//!
//! A fixture is produced by driving a fresh simulated site with an expert
//! browsing policy and recording what a faithful model would answer at each
//! call: routing, decomposition, plan, actions, re-plan decisions, page
//! selection, extraction (echoing the rendered page) and analysis code.
//! Used by the acceptance suite and the CLI `demo` command.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::action::Action;
use crate::decomposer::render_parts;
use crate::env::oracle::{EvalTarget, OracleError};
use crate::env::{dollars, EnvError, Environment, SiteFixture, StepOutcome, WebTwin};
use crate::gateway::{purpose, ScriptEntry, ScriptedFixture};
use crate::model::TaskSpec;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("task `{0}` has no evaluation target")]
    NoTarget(String),
    #[error("cannot script task: {0}")]
    Unscriptable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    /// Visit every listing page of the category.
    #[default]
    Conservative,
    /// After the first listing page, re-plan to apply the narrowest price
    /// filter covering the task's range. Needs re-planning enabled.
    PriceFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptOptions {
    pub policy: Policy,
    /// Whether the run re-plans; decides if re-plan answers are scripted.
    pub replan: bool,
    /// First analysis attempt fails, and the reflection reply fixes it.
    pub faulty_first_code: bool,
}

impl Default for ScriptOptions {
    fn default() -> Self {
        ScriptOptions {
            policy: Policy::Conservative,
            replan: true,
            faulty_first_code: false,
        }
    }
}

struct Step {
    reason: String,
    action: Action,
    /// Records a faithful extractor returns for this step's page, when the
    /// page is one the selector should pick.
    records: Option<Vec<Value>>,
    /// Re-plan answer given at the start of this step.
    replan: Option<String>,
}

const KEEP: &str = "Decision: keep\nReasoning: The current plan still fits the page.";

fn at_step(t: usize) -> String {
    format!("Current step: {t}\n")
}

fn item_records(twin: &WebTwin) -> Vec<Value> {
    twin.listed_items()
        .iter()
        .map(|i| {
            json!({
                "sku": i.item_id,
                "name": i.name,
                "price": i.price_cents as f64 / 100.0,
                "reviews": i.review_count,
                "rating": i.rating_pct,
            })
        })
        .collect()
}

fn post_records(twin: &WebTwin) -> Vec<Value> {
    twin.listed_posts()
        .iter()
        .map(|p| {
            json!({
                "title": p.title,
                "author": p.author,
                "comments": p.comment_count,
                "rank": p.hotness_rank,
            })
        })
        .collect()
}

/// Drives the twin and records steps.
struct Driver {
    twin: WebTwin,
    steps: Vec<Step>,
}

impl Driver {
    fn new(fixture: Arc<SiteFixture>) -> Self {
        Driver {
            twin: WebTwin::new(fixture),
            steps: Vec::new(),
        }
    }

    fn id(&self, role: &str, name: &str) -> Result<u32, ScriptError> {
        self.twin.find(role, name).ok_or_else(|| {
            ScriptError::Unscriptable(format!(
                "no {role} '{name}' on {}",
                self.twin.current_page_id()
            ))
        })
    }

    fn act(&mut self, reason: &str, action: Action, records: Option<Vec<Value>>) -> Result<(), ScriptError> {
        self.steps.push(Step {
            reason: reason.to_string(),
            action: action.clone(),
            records,
            replan: None,
        });
        match self.twin.step(&action)? {
            StepOutcome::Page { warning: Some(w), .. } => {
                Err(ScriptError::Unscriptable(format!("`{action}` had no effect: {w}")))
            }
            _ => Ok(()),
        }
    }

    fn click(&mut self, reason: &str, role: &str, name: &str, records: Option<Vec<Value>>) -> Result<(), ScriptError> {
        let id = self.id(role, name)?;
        self.act(reason, Action::Click { id }, records)
    }

    /// Follows `next` links until they run out, collecting page records.
    fn page_through(
        &mut self,
        next: &str,
        records: fn(&WebTwin) -> Vec<Value>,
        enough: &dyn Fn(usize) -> bool,
    ) -> Result<usize, ScriptError> {
        let mut seen = 0;
        loop {
            let page = records(&self.twin);
            seen += page.len();
            if enough(seen) || self.twin.find("link", next).is_none() {
                let pages = self.steps.iter().filter(|s| s.records.is_some()).count() + 1;
                self.act(
                    "Every listing page needed has been visited.",
                    Action::Stop {
                        answer: format!("Visited {pages} listing pages covering {seen} entries."),
                    },
                    Some(page),
                )?;
                return Ok(seen);
            }
            self.click(&format!("Open the next page via '{next}'."), "link", next, Some(page))?;
        }
    }
}

fn catalog_schema_prompt() -> &'static str {
    "Extract every product listed on the page as a JSON list.\n\
     Use these keys for each JSON object:\n\
     - `sku`: the product SKU code shown as \"SKU: ...\"; this is the identifier field\n\
     - `name`: the product name exactly as shown\n\
     - `price`: the price in dollars as a number, without the currency sign\n\
     - `reviews`: the number of reviews as an integer\n\
     - `rating`: the rating percentage as an integer\n\
     Return only the JSON list. Example:\n\
     [{\"sku\": \"P00001\", \"name\": \"Example Lamp\", \"price\": 19.99, \"reviews\": 12, \"rating\": 80}]"
}

fn forum_schema_prompt() -> &'static str {
    "Extract every submission listed on the page as a JSON list.\n\
     Use these keys for each JSON object:\n\
     - `rank`: the hot rank as an integer; this is the identifier field\n\
     - `title`: the submission title\n\
     - `author`: the author name without the leading \"by\"\n\
     - `comments`: the number of comments as an integer\n\
     Return only the JSON list. Example:\n\
     [{\"rank\": 1, \"title\": \"Hello there\", \"author\": \"jo_1\", \"comments\": 4}]"
}

fn price_condition(min_cents: u64, max_cents: Option<u64>) -> String {
    match max_cents {
        Some(max) => format!("{min_cents} <= round(r[\"price\"] * 100) <= {max}"),
        None => format!("{min_cents} <= round(r[\"price\"] * 100)"),
    }
}

/// Analysis code a faithful model writes for the target family.
pub fn analysis_code(target: &EvalTarget) -> Option<String> {
    let code = match target {
        EvalTarget::TopKByReviewsInPriceRange { k, min_cents, max_cents, .. } => format!(
            "rows = [r for r in data if r.get(\"price\") is not None and {}]\n\
             rows.sort(key=lambda r: (-int(r[\"reviews\"]), r[\"sku\"]))\n\
             answer = [r[\"name\"] for r in rows[:{k}]]",
            price_condition(*min_cents, *max_cents)
        ),
        EvalTarget::AveragePriceInCategory { .. } => "cents = [round(r[\"price\"] * 100) for r in data if r.get(\"price\") is not None]\n\
             answer = (sum(cents) / len(cents)) / 100"
            .to_string(),
        EvalTarget::CountByPriceBracket { .. } => "cents = [round(r[\"price\"] * 100) for r in data if r.get(\"price\") is not None]\n\
             answer = {\n\
             \x20   \"<50\": sum(1 for c in cents if c < 5000),\n\
             \x20   \"50-99\": sum(1 for c in cents if 5000 <= c < 10000),\n\
             \x20   \"100+\": sum(1 for c in cents if c >= 10000),\n\
             }"
            .to_string(),
        EvalTarget::ReviewsBelowRating { stars, .. } => format!(
            "rows = [r for r in data if r.get(\"rating\") is not None and int(r[\"rating\"]) <= {}]\n\
             rows.sort(key=lambda r: (r[\"name\"], r[\"sku\"]))\n\
             answer = [r[\"name\"] for r in rows]",
            u32::from(*stars) * 20
        ),
        EvalTarget::TotalCommentsTopN { n, .. } => format!(
            "rows = sorted(data, key=lambda r: int(r[\"rank\"]))[:{n}]\n\
             answer = sum(int(r[\"comments\"]) for r in rows)"
        ),
        EvalTarget::UniqueAuthorsTopNHottest { n, .. } => format!(
            "rows = sorted(data, key=lambda r: int(r[\"rank\"]))[:{n}]\n\
             answer = len({{r[\"author\"] for r in rows}})"
        ),
        EvalTarget::PostCreated { .. } => return None,
    };
    Some(code)
}

fn fenced(code: &str) -> String {
    format!("```python\n{code}\n```")
}

/// The task text and the decomposition a faithful model produces.
fn parts(target: &EvalTarget) -> (String, String) {
    match target {
        EvalTarget::TopKByReviewsInPriceRange { category, k, min_cents, max_cents } => (
            format!("Visit the listing pages of the {category} category, which show each product's name, SKU, price and number of reviews. Do not go to each product detail page if all the information is available in the listing page."),
            format!(
                "Keep only products priced from {} {}. Sort them by number of reviews, most first, and return the names of the top {k}, separated by line breaks.",
                dollars(*min_cents),
                max_cents.map_or("upwards".to_string(), |m| format!("to {}", dollars(m)))
            ),
        ),
        EvalTarget::AveragePriceInCategory { category } => (
            format!("Visit the listing pages of the {category} category, which show each product's SKU and price. Do not go to each product detail page."),
            "Compute the average price over all collected products, rounded to 2 decimal places.".to_string(),
        ),
        EvalTarget::CountByPriceBracket { category } => (
            format!("Visit the pages containing product title and price information for {category} products. Do not go to each product detail page if all the information is available in product listing page."),
            "Group the collected items by price brackets < $50, $50-$99, $100+. Count how many fall into each bracket and output the counts in the following format: '<50 : __, 50-99 : __, 100+ : __'".to_string(),
        ),
        EvalTarget::ReviewsBelowRating { category, stars } => (
            format!("Visit the listing pages of the {category} category, collecting each product's name along with its rating."),
            format!("Convert ratings to stars by dividing the percentage by 20, keep products with {stars} stars or below, and list their names alphabetically, separated by line breaks."),
        ),
        EvalTarget::TotalCommentsTopN { forum, n } | EvalTarget::UniqueAuthorsTopNHottest { forum, n } => (
            format!("Navigate to the /f/{forum} forum in hot order and go over its submission listing pages until at least {n} submissions have been seen, collecting title, author, comment count and hot rank."),
            match target {
                EvalTarget::TotalCommentsTopN { .. } => format!("Keep the {n} submissions with the best hot rank and sum their comment counts."),
                _ => format!("Keep the {n} submissions with the best hot rank and count their distinct authors."),
            },
        ),
        EvalTarget::PostCreated { forum, title } => (
            format!("Navigate to the submission form of the /f/{forum} forum."),
            format!("Create a submission titled '{title}' using the form."),
        ),
    }
}

fn instruction(target: &EvalTarget) -> String {
    match target {
        EvalTarget::TopKByReviewsInPriceRange { category, k, min_cents, max_cents } => format!(
            "What are the top {k} products with the highest number of reviews in the {category} category priced {}? List their names separated by line breaks.",
            match max_cents {
                Some(m) => format!("between {} and {}", dollars(*min_cents), dollars(*m)),
                None => format!("at {} or more", dollars(*min_cents)),
            }
        ),
        EvalTarget::AveragePriceInCategory { category } => {
            format!("What is the average price of the products in the {category} category? Round to 2 decimal places.")
        }
        EvalTarget::CountByPriceBracket { category } => format!(
            "Among products in the {category} category, count how many cost below $50, $50-$99, and $100+. Return: '<50 : __, 50-99 : __, 100+ : __'."
        ),
        EvalTarget::ReviewsBelowRating { category, stars } => format!(
            "List the products in the {category} category rated {stars} stars or below, alphabetically, separated by line breaks."
        ),
        EvalTarget::TotalCommentsTopN { forum, n } => {
            format!("What is the total number of comments on the {n} hottest submissions in /f/{forum}?")
        }
        EvalTarget::UniqueAuthorsTopNHottest { forum, n } => {
            format!("How many distinct authors wrote the {n} hottest submissions in /f/{forum}?")
        }
        EvalTarget::PostCreated { forum, title } => format!("Post '{title}' on /f/{forum}"),
    }
}

/// A task for `target` on `fixture`, with a generated instruction.
pub fn make_task(task_id: &str, fixture: &SiteFixture, target: &EvalTarget) -> TaskSpec {
    TaskSpec {
        task_id: task_id.to_string(),
        instruction: instruction(target),
        site_id: fixture.site_id.clone(),
        website_tips: Some(if fixture.posts.is_empty() { "shopping" } else { "reddit" }.to_string()),
        eval_target: Some(target.to_string()),
    }
}

/// Samples `n` answerable tasks over the fixture's categories and forums,
/// cycling through the families the fixture supports.
pub fn sample_tasks(fixture: &SiteFixture, seed: u64, n: usize) -> Vec<TaskSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories: Vec<String> = fixture
        .categories()
        .into_iter()
        .filter(|c| fixture.items_in(c).next().is_some())
        .collect();
    let forums = fixture.forums();
    let mut families: Vec<u8> = Vec::new();
    if !categories.is_empty() {
        families.extend([0, 1, 2, 3]);
    }
    if !forums.is_empty() {
        families.extend([4, 5]);
    }
    if families.is_empty() {
        return Vec::new();
    }
    (0..n)
        .map(|i| {
            let target = match families[i % families.len()] {
                0 => {
                    let range = *fixture.price_ranges.choose(&mut rng).expect("ranges");
                    EvalTarget::TopKByReviewsInPriceRange {
                        category: categories.choose(&mut rng).expect("categories").clone(),
                        k: rng.gen_range(2..=5),
                        min_cents: range.min_cents,
                        max_cents: range.max_cents,
                    }
                }
                1 => EvalTarget::AveragePriceInCategory {
                    category: categories.choose(&mut rng).expect("categories").clone(),
                },
                2 => EvalTarget::CountByPriceBracket {
                    category: categories.choose(&mut rng).expect("categories").clone(),
                },
                3 => EvalTarget::ReviewsBelowRating {
                    category: categories.choose(&mut rng).expect("categories").clone(),
                    stars: rng.gen_range(1..=3),
                },
                f => {
                    let forum = forums.choose(&mut rng).expect("forums").clone();
                    let n = rng.gen_range(5..=30);
                    if f == 4 {
                        EvalTarget::TotalCommentsTopN { forum, n }
                    } else {
                        EvalTarget::UniqueAuthorsTopNHottest { forum, n }
                    }
                }
            };
            make_task(&format!("{}-{:03}", fixture.site_id, i + 1), fixture, &target)
        })
        .collect()
}

fn plan_text(target: &EvalTarget) -> &'static str {
    match target {
        EvalTarget::TotalCommentsTopN { .. } | EvalTarget::UniqueAuthorsTopNHottest { .. } => {
            "1. Open the Forums page\n2. Open the forum from the list\n3. Go over the submission pages using 'More'\n4. Stop once enough submissions have been seen"
        }
        EvalTarget::PostCreated { .. } => {
            "1. Open the Forums page\n2. Open the forum from the list\n3. Open the Submit form\n4. Stop when the submission form is shown"
        }
        _ => "1. Open the category from the Categories menu\n2. Visit every listing page using 'Next Page'\n3. Stop when no 'Next Page' link remains",
    }
}

/// Scripted entries for one task, all bound to its task id. Tasks
/// targeting `post_created` are scripted through the fast path.
pub fn script_task(task: &TaskSpec, fixture: Arc<SiteFixture>, options: ScriptOptions) -> Result<ScriptedFixture, ScriptError> {
    let target: EvalTarget = task
        .eval_target
        .as_deref()
        .ok_or_else(|| ScriptError::NoTarget(task.task_id.clone()))?
        .parse()?;
    let mut driver = Driver::new(fixture.clone());
    let (nav_objective, analysis) = parts(&target);
    let mut replanned = false;

    match &target {
        EvalTarget::TopKByReviewsInPriceRange { category, .. }
        | EvalTarget::AveragePriceInCategory { category }
        | EvalTarget::CountByPriceBracket { category }
        | EvalTarget::ReviewsBelowRating { category, .. } => {
            driver.click(&format!("Open the {category} category."), "link", category, None)?;
            let filter = match (&target, options.policy, options.replan) {
                (EvalTarget::TopKByReviewsInPriceRange { min_cents, max_cents, .. }, Policy::PriceFilter, true) => fixture
                    .price_ranges
                    .iter()
                    .filter(|r| {
                        r.min_cents <= *min_cents
                            && match (r.max_cents, max_cents) {
                                (None, _) => true,
                                (Some(rm), Some(tm)) => *tm <= rm,
                                (Some(_), None) => false,
                            }
                    })
                    .max_by_key(|r| r.min_cents)
                    .cloned(),
                _ => None,
            };
            if let Some(range) = filter {
                let label = range.label();
                let objective = format!(
                    "Visit the listing pages of the {category} category filtered to the price range {label}, which show each product's name, SKU, price and number of reviews."
                );
                let update = format!(
                    "Decision: update\nReasoning: The listing offers a price filter that covers the requested range, so fewer pages need visiting.\n{}\n{objective}\n### Navigation Plan\n1. Click the price filter '{label}'\n2. Visit every filtered listing page using 'Next Page'\n3. Stop when no 'Next Page' link remains",
                    crate::decomposer::PART1_HEADER
                );
                driver.click(&format!("Apply the price filter {label}."), "link", &label, None)?;
                driver.steps.last_mut().expect("just pushed").replan = Some(update);
                replanned = true;
            }
            driver.page_through("Next Page", item_records, &|_| false)?;
        }
        EvalTarget::TotalCommentsTopN { forum, n } | EvalTarget::UniqueAuthorsTopNHottest { forum, n } => {
            let n = *n;
            driver.click("Open the list of forums.", "link", "Forums", None)?;
            driver.click(&format!("Open /f/{forum}."), "link", forum, None)?;
            driver.page_through("More", post_records, &|seen| seen >= n)?;
        }
        EvalTarget::PostCreated { forum, .. } => {
            driver.click("Open the list of forums.", "link", "Forums", None)?;
            driver.click(&format!("Open /f/{forum}."), "link", forum, None)?;
            driver.click("Open the submission form.", "link", "Submit", None)?;
            driver.act(
                "The submission form is open.",
                Action::Stop { answer: "The submission form is open.".into() },
                None,
            )?;
        }
    }

    let id = task.task_id.as_str();
    let mut out = ScriptedFixture::default();
    let mut push = |purpose: &str, matcher: &str, response: String| {
        out.push(ScriptEntry::new(purpose, matcher, response).for_task(id));
    };
    let posting = target.is_env_check();
    push(
        purpose::ROUTE,
        "",
        if posting { "stages: nav,execute" } else { "stages: nav,extract,execute" }.into(),
    );
    push(purpose::DECOMPOSE, "", render_parts(&nav_objective, &analysis));
    push(purpose::PLAN, "", plan_text(&target).into());
    for (i, step) in driver.steps.iter().enumerate() {
        let t = i + 1;
        if options.replan && t > 1 {
            push(purpose::REPLAN, &at_step(t), step.replan.clone().unwrap_or_else(|| KEEP.into()));
        }
        push(
            purpose::ACT,
            &at_step(t),
            format!("Reason: {}\nAction: {}", step.reason, step.action),
        );
    }
    if !replanned && options.policy == Policy::PriceFilter && options.replan {
        tracing::debug!("{id}: no price filter applies; scripted conservatively");
    }

    if posting {
        let EvalTarget::PostCreated { title, .. } = &target else { unreachable!() };
        let title_box = driver.id("textbox", "Title")?;
        push(
            purpose::EXEC_ACT,
            &at_step(1),
            format!(
                "Reason: Type the title and press Enter to submit.\nAction: {}",
                Action::TypeText { id: title_box, content: title.clone(), press_enter: true }
            ),
        );
        push(
            purpose::EXEC_ACT,
            &at_step(2),
            format!("Reason: The submission was created.\nAction: stop [Posted '{title}' on the forum.]"),
        );
        return Ok(out);
    }

    let selected: Vec<usize> = driver
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s.records.is_some())
        .map(|(i, _)| i + 1)
        .collect();
    push(
        purpose::SELECT,
        "",
        format!(
            "Steps {:?} show listing pages with the needed fields; the others are navigation.\n{}",
            selected,
            serde_json::to_string(&selected).expect("list serializes")
        ),
    );
    let forum = matches!(
        target,
        EvalTarget::TotalCommentsTopN { .. } | EvalTarget::UniqueAuthorsTopNHottest { .. }
    );
    push(
        purpose::SCHEMA,
        "",
        if forum { forum_schema_prompt() } else { catalog_schema_prompt() }.into(),
    );
    for step in driver.steps.iter().filter_map(|s| s.records.as_ref()) {
        push(purpose::EXTRACT, "", Value::Array(step.clone()).to_string());
    }
    let code = analysis_code(&target).expect("answer families have analysis code");
    if options.faulty_first_code {
        let broken = code.replace("data", "data_rows");
        push(purpose::CODEGEN, "", fenced(&broken));
        push(purpose::REFLECT, "data_rows", format!("The variable is named `data`.\n{}", fenced(&code)));
    } else {
        push(purpose::CODEGEN, "", fenced(&code));
    }
    Ok(out)
}

/// Scripts every task, skipping none: the first failure is returned.
pub fn script_batch(
    tasks: &[TaskSpec],
    fixtures: &crate::env::SiteRegistry,
    options: ScriptOptions,
) -> Result<ScriptedFixture, ScriptError> {
    let mut all = ScriptedFixture::default();
    for task in tasks {
        let fixture = fixtures
            .get(&task.site_id)
            .ok_or_else(|| EnvError::UnknownSite(task.site_id.clone()))?;
        for entry in script_task(task, fixture.clone(), options)?.entries {
            all.push(entry);
        }
    }
    Ok(all)
}
