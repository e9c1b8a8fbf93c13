//! Deterministic simulated websites rendered as accessibility trees.
//!
//! A [`WebTwin`] is one browsing session over an immutable [`SiteFixture`]:
//! a catalog (categories, search, product pages) and/or a forum (forums,
//! posts, user profiles, a submission form). Listing pages honour the
//! fixture's widgets: sort menu, price filter, page-size menu, pagination.

mod fixture;
pub mod oracle;
mod render;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::action::Action;
use crate::model::{Observation, TaskSpec};

pub use fixture::{
    default_price_ranges, dollars, CatalogItem, CategoryParams, FixtureFile, ForumParams,
    ForumPost, GeneratorParams, PriceRange, SiteFixture, Widget, DEFAULT_PAGE_SIZES,
};
pub use render::Node;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("element {0} is not on the current page")]
    InvalidElement(u32),
    #[error("element {0} does not accept text input")]
    NotTypeable(u32),
    #[error("environment already terminated")]
    Terminated,
    #[error("invalid fixture: {0}")]
    InvalidFixture(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Page {
        observation: Observation,
        /// Set when the action had no effect (go_back at the root,
        /// clicking static text).
        warning: Option<String>,
    },
    Terminal {
        answer: String,
    },
}

/// What the navigator needs from a browsing environment.
pub trait Environment {
    fn observe(&self) -> Observation;
    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError>;

    /// Re-opens a session that a stop action ended, keeping the current
    /// page. Used when a follow-up acting loop continues the same session.
    fn resume(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SortKey {
    Position,
    PriceAsc,
    PriceDesc,
    ReviewsDesc,
    NameAsc,
    Hot,
    MostCommented,
}

impl SortKey {
    pub const CATALOG: [SortKey; 5] = [
        SortKey::Position,
        SortKey::PriceAsc,
        SortKey::PriceDesc,
        SortKey::ReviewsDesc,
        SortKey::NameAsc,
    ];
    pub const FORUM: [SortKey; 2] = [SortKey::Hot, SortKey::MostCommented];

    pub fn label(self) -> &'static str {
        match self {
            SortKey::Position => "Position",
            SortKey::PriceAsc => "Price: Low to High",
            SortKey::PriceDesc => "Price: High to Low",
            SortKey::ReviewsDesc => "Reviews: Most to Least",
            SortKey::NameAsc => "Product Name",
            SortKey::Hot => "Hot",
            SortKey::MostCommented => "Most commented",
        }
    }

    fn slug(self) -> &'static str {
        match self {
            SortKey::Position => "position",
            SortKey::PriceAsc => "price_asc",
            SortKey::PriceDesc => "price_desc",
            SortKey::ReviewsDesc => "reviews_desc",
            SortKey::NameAsc => "name",
            SortKey::Hot => "hot",
            SortKey::MostCommented => "most_commented",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PageRef {
    Home,
    Category(String),
    Search(String),
    Product(String),
    Forums,
    Forum(String),
    User(String),
    Post(String),
    Submit(String),
}

impl PageRef {
    fn is_catalog_listing(&self) -> bool {
        matches!(self, PageRef::Category(_) | PageRef::Search(_))
    }

    fn is_forum_listing(&self) -> bool {
        matches!(self, PageRef::Forum(_) | PageRef::User(_))
    }

    pub fn is_listing(&self) -> bool {
        self.is_catalog_listing() || self.is_forum_listing()
    }

    /// Page family used for element-id hashing: ignores controls and paging
    /// so the same item keeps its id across sorts and pages.
    fn family(&self) -> String {
        match self {
            PageRef::Home => "home".into(),
            PageRef::Category(c) => format!("category/{}", slug(c)),
            PageRef::Search(_) => "search".into(),
            PageRef::Product(id) => format!("product/{id}"),
            PageRef::Forums => "forums".into(),
            PageRef::Forum(f) => format!("f/{}", slug(f)),
            PageRef::User(u) => format!("user/{u}"),
            PageRef::Post(id) => format!("post/{id}"),
            PageRef::Submit(f) => format!("submit/{}", slug(f)),
        }
    }
}

pub fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Controls {
    pub sort: SortKey,
    pub price: Option<usize>,
    pub page_size: u32,
    pub page: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PageState {
    pub page: PageRef,
    pub controls: Controls,
    /// Text typed into the page's input without pressing enter.
    pub draft: Option<String>,
}

impl PageState {
    /// `page_id`: family plus every non-default control.
    pub fn page_id(&self, fixture: &SiteFixture) -> String {
        let mut query = Vec::new();
        if let PageRef::Search(q) = &self.page {
            query.push(format!("q={}", q.replace(' ', "+")));
        }
        if self.page.is_listing() {
            let default_sort = default_sort(&self.page);
            if self.controls.sort != default_sort {
                query.push(format!("sort={}", self.controls.sort.slug()));
            }
            if let Some(p) = self.controls.price {
                query.push(format!("price={p}"));
            }
            if self.controls.page_size != fixture.default_page_size() {
                query.push(format!("limit={}", self.controls.page_size));
            }
            if self.controls.page != 1 {
                query.push(format!("p={}", self.controls.page));
            }
        }
        let family = self.page.family();
        if query.is_empty() {
            family
        } else {
            format!("{family}?{}", query.join("&"))
        }
    }
}

fn default_sort(page: &PageRef) -> SortKey {
    match page {
        PageRef::Forum(_) | PageRef::User(_) => SortKey::Hot,
        _ => SortKey::Position,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Effect {
    Static,
    Goto(PageRef),
    Sort(SortKey),
    Price(Option<usize>),
    PageSize(u32),
    Page(u32),
    SearchBox,
    SearchButton,
    TitleBox,
    SubmitButton,
}

/// The registry of sites a harness can reset into.
#[derive(Debug, Clone, Default)]
pub struct SiteRegistry {
    sites: BTreeMap<String, Arc<SiteFixture>>,
}

impl SiteRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, fixture: SiteFixture) {
        self.sites
            .insert(fixture.site_id.clone(), Arc::new(fixture));
    }

    pub fn get(&self, site_id: &str) -> Option<&Arc<SiteFixture>> {
        self.sites.get(site_id)
    }

    pub fn contains(&self, site_id: &str) -> bool {
        self.sites.contains_key(site_id)
    }

    /// Fresh session on the task's site, positioned at the home page.
    pub fn reset(&self, task: &TaskSpec) -> Result<WebTwin, EnvError> {
        self.sites
            .get(&task.site_id)
            .map(|f| WebTwin::new(Arc::clone(f)))
            .ok_or_else(|| EnvError::UnknownSite(task.site_id.clone()))
    }
}

impl FromIterator<SiteFixture> for SiteRegistry {
    fn from_iter<T: IntoIterator<Item = SiteFixture>>(iter: T) -> Self {
        let mut registry = SiteRegistry::new();
        for f in iter {
            registry.insert(f);
        }
        registry
    }
}

/// One browsing session.
#[derive(Debug, Clone)]
pub struct WebTwin {
    fixture: Arc<SiteFixture>,
    stack: Vec<PageState>,
    submissions: Vec<ForumPost>,
    rendered: render::Rendered,
    terminal: Option<String>,
}

pub const AGENT_USER: &str = "sitewalk_agent";

impl WebTwin {
    pub fn new(fixture: Arc<SiteFixture>) -> Self {
        let home = PageState {
            page: PageRef::Home,
            controls: Controls {
                sort: SortKey::Position,
                price: None,
                page_size: fixture.default_page_size(),
                page: 1,
            },
            draft: None,
        };
        let rendered = render::render(&fixture, &home, &[]);
        WebTwin {
            fixture,
            stack: vec![home],
            submissions: Vec::new(),
            rendered,
            terminal: None,
        }
    }

    pub fn fixture(&self) -> &SiteFixture {
        &self.fixture
    }

    pub fn current(&self) -> &PageState {
        self.stack.last().expect("nav stack never empty")
    }

    pub fn current_page_id(&self) -> String {
        self.current().page_id(&self.fixture)
    }

    pub fn nav_stack(&self) -> Vec<String> {
        self.stack.iter().map(|s| s.page_id(&self.fixture)).collect()
    }

    pub fn applied_controls(&self) -> &Controls {
        &self.current().controls
    }

    pub fn submissions(&self) -> &[ForumPost] {
        &self.submissions
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal.is_some()
    }

    /// Rendered nodes of the current page.
    pub fn nodes(&self) -> &[Node] {
        &self.rendered.nodes
    }

    /// Id of the first node on the current page with this role and name.
    pub fn find(&self, role: &str, name: &str) -> Option<u32> {
        self.rendered
            .nodes
            .iter()
            .find(|n| n.role == role && n.name == name)
            .map(|n| n.id)
    }

    /// Ids (item or post) listed on the current page, in display order.
    pub fn listed_ids(&self) -> Vec<String> {
        self.rendered.listed.clone()
    }

    /// Items on the current listing page, in display order.
    pub fn listed_items(&self) -> Vec<&CatalogItem> {
        self.rendered
            .listed
            .iter()
            .filter_map(|id| self.fixture.items.iter().find(|i| &i.item_id == id))
            .collect()
    }

    pub fn listed_posts(&self) -> Vec<&ForumPost> {
        self.rendered
            .listed
            .iter()
            .filter_map(|id| self.fixture.posts.iter().find(|p| &p.post_id == id))
            .collect()
    }

    fn push(&mut self, state: PageState) {
        self.stack.push(state);
        self.rerender();
    }

    fn rerender(&mut self) {
        self.rendered = render::render(&self.fixture, self.current(), &self.submissions);
    }

    fn with_controls(&self, change: impl FnOnce(&mut Controls)) -> PageState {
        let mut next = self.current().clone();
        next.draft = None;
        change(&mut next.controls);
        next
    }

    fn goto(&self, page: PageRef) -> PageState {
        PageState {
            controls: Controls {
                sort: default_sort(&page),
                price: None,
                page_size: self.fixture.default_page_size(),
                page: 1,
            },
            page,
            draft: None,
        }
    }

    fn submit_post(&mut self, title: &str) -> Option<String> {
        let PageRef::Submit(forum) = &self.current().page else {
            return Some("no submission form on this page".into());
        };
        if title.trim().is_empty() {
            return Some("title is required".into());
        }
        let post = ForumPost {
            post_id: format!("S{:05}", self.submissions.len() + 1),
            forum: forum.clone(),
            title: title.trim().to_string(),
            author: AGENT_USER.into(),
            comment_count: 0,
            hotness_rank: 0,
        };
        let page = PageRef::Post(post.post_id.clone());
        self.submissions.push(post);
        let next = self.goto(page);
        self.push(next);
        None
    }

    fn run_search(&mut self, query: &str) {
        let next = self.goto(PageRef::Search(query.trim().to_string()));
        self.push(next);
    }

    fn node(&self, id: u32) -> Result<&Node, EnvError> {
        self.rendered
            .nodes
            .iter()
            .find(|n| n.id == id)
            .ok_or(EnvError::InvalidElement(id))
    }

    fn page_outcome(&self, warning: Option<String>) -> StepOutcome {
        StepOutcome::Page {
            observation: self.observe(),
            warning,
        }
    }
}

impl Environment for WebTwin {
    fn resume(&mut self) {
        self.terminal = None;
    }

    fn observe(&self) -> Observation {
        Observation::from_tree(
            0,
            &self.rendered.page_id,
            &self.rendered.url,
            &self.rendered.ax_tree,
        )
    }

    fn step(&mut self, action: &Action) -> Result<StepOutcome, EnvError> {
        if self.terminal.is_some() {
            return Err(EnvError::Terminated);
        }
        match action {
            Action::Stop { answer } => {
                self.terminal = Some(answer.clone());
                Ok(StepOutcome::Terminal {
                    answer: answer.clone(),
                })
            }
            Action::GoBack => {
                if self.stack.len() == 1 {
                    return Ok(self.page_outcome(Some("already at the first page".into())));
                }
                self.stack.pop();
                self.rerender();
                Ok(self.page_outcome(None))
            }
            Action::Click { id } => {
                let effect = self.node(*id)?.effect.clone();
                let next = match effect {
                    Effect::Static | Effect::SearchBox | Effect::TitleBox => {
                        return Ok(self.page_outcome(Some(format!(
                            "clicking element {id} changed nothing"
                        ))))
                    }
                    Effect::Goto(page) => self.goto(page),
                    Effect::Sort(sort) => self.with_controls(|c| {
                        c.sort = sort;
                        c.page = 1;
                    }),
                    Effect::Price(price) => self.with_controls(|c| {
                        c.price = price;
                        c.page = 1;
                    }),
                    Effect::PageSize(size) => self.with_controls(|c| {
                        c.page_size = size;
                        c.page = 1;
                    }),
                    Effect::Page(page) => self.with_controls(|c| c.page = page),
                    Effect::SearchButton => {
                        let query = self.current().draft.clone().unwrap_or_default();
                        if query.trim().is_empty() {
                            return Ok(self.page_outcome(Some("search box is empty".into())));
                        }
                        self.run_search(&query);
                        return Ok(self.page_outcome(None));
                    }
                    Effect::SubmitButton => {
                        let title = self.current().draft.clone().unwrap_or_default();
                        let warning = self.submit_post(&title);
                        return Ok(self.page_outcome(warning));
                    }
                };
                self.push(next);
                Ok(self.page_outcome(None))
            }
            Action::TypeText {
                id,
                content,
                press_enter,
            } => {
                let effect = self.node(*id)?.effect.clone();
                match (effect, press_enter) {
                    (Effect::SearchBox, true) => {
                        self.run_search(content);
                        Ok(self.page_outcome(None))
                    }
                    (Effect::TitleBox, true) => {
                        let warning = self.submit_post(content);
                        Ok(self.page_outcome(warning))
                    }
                    (Effect::SearchBox | Effect::TitleBox, false) => {
                        self.stack.last_mut().expect("stack").draft = Some(content.clone());
                        self.rerender();
                        Ok(self.page_outcome(None))
                    }
                    _ => Err(EnvError::NotTypeable(*id)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site() -> Arc<SiteFixture> {
        Arc::new(SiteFixture::generate(
            "shop",
            11,
            &GeneratorParams {
                categories: vec![
                    CategoryParams { name: "Home Audio".into(), parent: Some("Electronics".into()), items: 25 },
                    CategoryParams { name: "Empty Shelf".into(), parent: None, items: 0 },
                ],
                forums: vec![ForumParams { name: "OldSchoolCool".into(), posts: 30 }],
                ..Default::default()
            },
        ))
    }

    fn click(env: &mut WebTwin, role: &str, name: &str) -> StepOutcome {
        let id = env.find(role, name).unwrap_or_else(|| panic!("no {role} '{name}'"));
        env.step(&Action::Click { id }).unwrap()
    }

    #[test]
    fn home_layout() {
        let env = WebTwin::new(site());
        let tree = env.observe().ax_tree;
        assert!(tree.contains("searchbox 'Search'"));
        assert!(tree.contains("link 'Home Audio'"));
        assert!(tree.contains("link 'Forums'"));
        assert_eq!(env.current_page_id(), "home");
    }

    #[test]
    fn reset_is_deterministic_and_checks_site() {
        let registry: SiteRegistry = [SiteFixture::clone(&site())].into_iter().collect();
        let task = TaskSpec {
            task_id: "t".into(),
            instruction: "x".into(),
            site_id: "shop".into(),
            website_tips: None,
            eval_target: None,
        };
        let a = registry.reset(&task).unwrap().observe();
        let b = registry.reset(&task).unwrap().observe();
        assert_eq!(a, b);
        let missing = TaskSpec { site_id: "nope".into(), ..task };
        assert_eq!(registry.reset(&missing).unwrap_err(), EnvError::UnknownSite("nope".into()));
    }

    #[test]
    fn pagination_12_12_1() {
        let mut env = WebTwin::new(site());
        click(&mut env, "link", "Home Audio");
        assert_eq!(env.listed_ids().len(), 12);
        click(&mut env, "link", "Next Page");
        assert_eq!(env.listed_ids().len(), 12);
        click(&mut env, "link", "Next Page");
        assert_eq!(env.listed_ids().len(), 1);
        assert!(env.find("link", "Next Page").is_none());
        assert!(env.observe().ax_tree.contains("Page 3 of 3"));
    }

    #[test]
    fn empty_category_has_no_items_and_no_next() {
        let mut env = WebTwin::new(site());
        click(&mut env, "link", "Empty Shelf");
        let tree = env.observe().ax_tree;
        assert!(tree.contains("StaticText 'No items found.'"));
        assert!(env.find("link", "Next Page").is_none());
    }

    #[test]
    fn go_back_at_home_warns() {
        let mut env = WebTwin::new(site());
        let before = env.observe();
        match env.step(&Action::GoBack).unwrap() {
            StepOutcome::Page { observation, warning } => {
                assert_eq!(observation, before);
                assert!(warning.is_some());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn absent_element_leaves_state_unchanged() {
        let mut env = WebTwin::new(site());
        let before = (env.observe(), env.nav_stack());
        assert_eq!(env.step(&Action::Click { id: 1 }), Err(EnvError::InvalidElement(1)));
        assert_eq!((env.observe(), env.nav_stack()), before);
    }

    #[test]
    fn typing_into_a_link_is_rejected() {
        let mut env = WebTwin::new(site());
        let id = env.find("link", "Home Audio").unwrap();
        let action = Action::TypeText { id, content: "x".into(), press_enter: true };
        assert_eq!(env.step(&action), Err(EnvError::NotTypeable(id)));
    }

    #[test]
    fn search_is_case_insensitive_substring() {
        let fixture = site();
        let needle = fixture.items[3].name.split(' ').next().unwrap().to_uppercase();
        let mut env = WebTwin::new(Arc::clone(&fixture));
        let id = env.find("searchbox", "Search").unwrap();
        env.step(&Action::TypeText { id, content: needle.clone(), press_enter: true }).unwrap();
        let expected: usize = fixture
            .items
            .iter()
            .filter(|i| i.name.to_lowercase().contains(&needle.to_lowercase()))
            .count();
        let mut seen = env.listed_ids().len();
        while env.find("link", "Next Page").is_some() {
            click(&mut env, "link", "Next Page");
            seen += env.listed_ids().len();
        }
        assert_eq!(seen, expected);
    }

    #[test]
    fn submitting_a_post() {
        let mut env = WebTwin::new(site());
        click(&mut env, "link", "Forums");
        click(&mut env, "link", "OldSchoolCool");
        click(&mut env, "link", "Submit");
        let id = env.find("textbox", "Title").unwrap();
        env.step(&Action::TypeText { id, content: "Hello, world!".into(), press_enter: true }).unwrap();
        assert_eq!(env.submissions().len(), 1);
        assert_eq!(env.submissions()[0].forum, "OldSchoolCool");
        assert!(env.observe().ax_tree.contains("heading 'Hello, world!'"));
    }

    #[test]
    fn stop_is_terminal() {
        let mut env = WebTwin::new(site());
        assert_eq!(
            env.step(&Action::Stop { answer: "a".into() }).unwrap(),
            StepOutcome::Terminal { answer: "a".into() }
        );
        assert_eq!(env.step(&Action::GoBack), Err(EnvError::Terminated));
    }

    #[test]
    fn item_ids_stable_across_sorting() {
        let mut env = WebTwin::new(site());
        click(&mut env, "link", "Home Audio");
        let first = env.listed_items()[0].clone();
        let id_before = env.find("link", &first.name).unwrap();
        click(&mut env, "option", SortKey::NameAsc.label());
        let mut found = env.find("link", &first.name);
        while found.is_none() {
            click(&mut env, "link", "Next Page");
            found = env.find("link", &first.name);
        }
        assert_eq!(found, Some(id_before));
    }

    #[test]
    fn observation_ids_match_nodes() {
        let mut env = WebTwin::new(site());
        click(&mut env, "link", "Home Audio");
        let obs = env.observe();
        let nodes: std::collections::BTreeSet<u32> = env.nodes().iter().map(|n| n.id).collect();
        assert_eq!(obs.element_ids, nodes);
        assert!(nodes.iter().all(|id| (1000..10000).contains(id)));
    }
}
