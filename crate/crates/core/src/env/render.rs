use std::collections::HashSet;

use super::fixture::{dollars, CatalogItem, ForumPost, SiteFixture, Widget};
use super::{Effect, PageRef, PageState, SortKey, AGENT_USER};

/// One rendered accessibility node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: u32,
    pub role: String,
    pub name: String,
    pub depth: usize,
    pub(crate) effect: Effect,
}

#[derive(Debug, Clone)]
pub(crate) struct Rendered {
    pub page_id: String,
    pub url: String,
    pub ax_tree: String,
    pub nodes: Vec<Node>,
    /// Item or post ids shown on a listing page, in order.
    pub listed: Vec<String>,
}

const ID_BASE: u32 = 1000;
const ID_SPAN: u32 = 9000;

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

struct Builder {
    family: String,
    used: HashSet<u32>,
    nodes: Vec<Node>,
    lines: Vec<String>,
}

impl Builder {
    fn new(family: String) -> Self {
        Builder {
            family,
            used: HashSet::new(),
            nodes: Vec::new(),
            lines: Vec::new(),
        }
    }

    fn add(&mut self, depth: usize, key: &str, role: &str, name: &str, attrs: &[String], effect: Effect) {
        let mut id = ID_BASE + (fnv1a(&format!("{}#{key}", self.family)) % u64::from(ID_SPAN)) as u32;
        while !self.used.insert(id) {
            id = if id == ID_BASE + ID_SPAN - 1 { ID_BASE } else { id + 1 };
        }
        let mut line = format!("{}[{id}] {role} '{name}'", "\t".repeat(depth));
        if !attrs.is_empty() {
            line.push_str(&format!(" {{{}}}", attrs.join(", ")));
        }
        self.lines.push(line);
        self.nodes.push(Node {
            id,
            role: role.to_string(),
            name: name.to_string(),
            depth,
            effect,
        });
    }

    fn text(&mut self, depth: usize, key: &str, text: &str) {
        self.add(depth, key, "StaticText", text, &[], Effect::Static);
    }

    fn link(&mut self, depth: usize, key: &str, name: &str, to: PageRef) {
        self.add(depth, key, "link", name, &[], Effect::Goto(to));
    }
}

/// Catalog items for a listing page's source, filtered and sorted but not
/// paginated.
pub(crate) fn catalog_entries<'a>(fixture: &'a SiteFixture, state: &PageState) -> Vec<&'a CatalogItem> {
    let mut items: Vec<&CatalogItem> = match &state.page {
        PageRef::Category(c) => fixture.items_in(c).collect(),
        PageRef::Search(q) => {
            let q = q.to_lowercase();
            fixture
                .items
                .iter()
                .filter(|i| i.name.to_lowercase().contains(&q))
                .collect()
        }
        _ => Vec::new(),
    };
    if let Some(range) = state.controls.price.and_then(|i| fixture.price_ranges.get(i)) {
        items.retain(|i| range.contains(i.price_cents));
    }
    items.sort_by(|a, b| {
        let primary = match state.controls.sort {
            SortKey::PriceAsc => a.price_cents.cmp(&b.price_cents),
            SortKey::PriceDesc => b.price_cents.cmp(&a.price_cents),
            SortKey::ReviewsDesc => b.review_count.cmp(&a.review_count),
            SortKey::NameAsc => a.name.cmp(&b.name),
            _ => std::cmp::Ordering::Equal,
        };
        primary.then_with(|| a.item_id.cmp(&b.item_id))
    });
    items
}

pub(crate) fn post_entries<'a>(fixture: &'a SiteFixture, state: &PageState) -> Vec<&'a ForumPost> {
    let mut posts: Vec<&ForumPost> = match &state.page {
        PageRef::Forum(f) => fixture.posts_in(f).collect(),
        PageRef::User(u) => fixture.posts.iter().filter(|p| &p.author == u).collect(),
        _ => Vec::new(),
    };
    posts.sort_by(|a, b| {
        let primary = match state.controls.sort {
            SortKey::MostCommented => b.comment_count.cmp(&a.comment_count),
            _ => a
                .forum
                .cmp(&b.forum)
                .then(a.hotness_rank.cmp(&b.hotness_rank)),
        };
        primary.then_with(|| a.post_id.cmp(&b.post_id))
    });
    posts
}

fn page_window(fixture: &SiteFixture, state: &PageState, total: usize) -> (usize, usize, u32, u32) {
    if !fixture.has_widget(Widget::Pagination) {
        return (0, total, 1, 1);
    }
    let size = state.controls.page_size.max(1) as usize;
    let pages = total.div_ceil(size).max(1) as u32;
    let page = state.controls.page.clamp(1, pages);
    let start = (page as usize - 1) * size;
    (start, (start + size).min(total), page, pages)
}

pub(crate) fn render(fixture: &SiteFixture, state: &PageState, submissions: &[ForumPost]) -> Rendered {
    let page_id = state.page_id(fixture);
    let url = format!("http://{}.local/{page_id}", fixture.site_id);
    let mut b = Builder::new(state.page.family());
    let site = if fixture.title.is_empty() { "Site" } else { fixture.title.as_str() };
    let mut listed = Vec::new();

    match &state.page {
        PageRef::Home => {
            b.add(0, "root", "RootWebArea", &format!("{site} - Home"), &[], Effect::Static);
            search_bar(&mut b, state);
            if !fixture.items.is_empty() {
                b.add(1, "menu", "menu", "Categories", &[], Effect::Static);
                for c in fixture.categories() {
                    b.link(2, &format!("cat:{c}"), &c, PageRef::Category(c.clone()));
                }
            }
            if !fixture.posts.is_empty() {
                b.link(1, "forums", "Forums", PageRef::Forums);
            }
        }
        PageRef::Category(_) | PageRef::Search(_) => {
            let heading = match &state.page {
                PageRef::Category(c) => c.clone(),
                PageRef::Search(q) => format!("Search results for: {q}"),
                _ => unreachable!(),
            };
            let entries = catalog_entries(fixture, state);
            let (start, end, page, pages) = page_window(fixture, state, entries.len());
            b.add(
                0,
                "root",
                "RootWebArea",
                &format!("{site} - {heading} - Page {page} of {pages}"),
                &[],
                Effect::Static,
            );
            b.link(1, "home", "Home", PageRef::Home);
            search_bar(&mut b, state);
            b.add(1, "heading", "heading", &heading, &[], Effect::Static);
            if entries.is_empty() {
                b.text(1, "count", "Items 0 of 0");
            } else {
                b.text(1, "count", &format!("Items {}-{} of {}", start + 1, end, entries.len()));
            }
            if fixture.has_widget(Widget::SortMenu) {
                sort_menu(&mut b, state, &SortKey::CATALOG);
            }
            if fixture.has_widget(Widget::PriceFilter) {
                b.add(1, "price", "group", "Price", &[], Effect::Static);
                for (i, range) in fixture.price_ranges.iter().enumerate() {
                    let attrs = if state.controls.price == Some(i) {
                        vec!["selected".to_string()]
                    } else {
                        vec![]
                    };
                    b.add(2, &format!("price:{i}"), "link", &range.label(), &attrs, Effect::Price(Some(i)));
                }
                if state.controls.price.is_some() {
                    b.add(2, "price:clear", "link", "Clear price filter", &[], Effect::Price(None));
                }
            }
            page_size_menu(&mut b, fixture, state);
            if entries.is_empty() {
                b.text(1, "empty", "No items found.");
            } else {
                b.add(1, "list", "list", "Products", &[], Effect::Static);
                for item in &entries[start..end] {
                    let k = &item.item_id;
                    b.add(2, &format!("item:{k}"), "listitem", "", &[], Effect::Static);
                    b.link(3, &format!("item:{k}:link"), &item.name, PageRef::Product(k.clone()));
                    b.text(3, &format!("item:{k}:sku"), &format!("SKU: {k}"));
                    b.text(3, &format!("item:{k}:price"), &format!("Price: {}", dollars(item.price_cents)));
                    b.text(3, &format!("item:{k}:rating"), &format!("Rating: {}%", item.rating_pct));
                    b.text(3, &format!("item:{k}:reviews"), &format!("{} Reviews", item.review_count));
                    listed.push(k.clone());
                }
            }
            pager(&mut b, page, pages, "Next Page");
        }
        PageRef::Product(id) => {
            match fixture.items.iter().find(|i| &i.item_id == id) {
                Some(item) => {
                    b.add(0, "root", "RootWebArea", &format!("{site} - {}", item.name), &[], Effect::Static);
                    b.link(1, "home", "Home", PageRef::Home);
                    b.add(1, "heading", "heading", &item.name, &[], Effect::Static);
                    b.text(1, "sku", &format!("SKU: {}", item.item_id));
                    b.text(1, "price", &format!("Price: {}", dollars(item.price_cents)));
                    b.text(1, "rating", &format!("Rating: {}%", item.rating_pct));
                    b.text(1, "reviews", &format!("{} Reviews", item.review_count));
                    b.link(1, "category", item.category(), PageRef::Category(item.category().to_string()));
                }
                None => not_found(&mut b, site),
            }
        }
        PageRef::Forums => {
            b.add(0, "root", "RootWebArea", &format!("{site} - Forums"), &[], Effect::Static);
            b.link(1, "home", "Home", PageRef::Home);
            b.add(1, "heading", "heading", "Forums (alphabetical)", &[], Effect::Static);
            for f in fixture.forums() {
                b.link(1, &format!("forum:{f}"), &f, PageRef::Forum(f.clone()));
            }
        }
        PageRef::Forum(_) | PageRef::User(_) => {
            let heading = match &state.page {
                PageRef::Forum(f) => format!("/f/{f}"),
                PageRef::User(u) => format!("Submissions by {u}"),
                _ => unreachable!(),
            };
            let entries = post_entries(fixture, state);
            let (start, end, page, pages) = page_window(fixture, state, entries.len());
            b.add(
                0,
                "root",
                "RootWebArea",
                &format!("{site} - {heading} - Page {page} of {pages}"),
                &[],
                Effect::Static,
            );
            b.link(1, "home", "Home", PageRef::Home);
            b.link(1, "forums", "Forums", PageRef::Forums);
            b.add(1, "heading", "heading", &heading, &[], Effect::Static);
            if let PageRef::Forum(f) = &state.page {
                b.link(1, "submit", "Submit", PageRef::Submit(f.clone()));
            }
            if fixture.has_widget(Widget::SortMenu) {
                sort_menu(&mut b, state, &SortKey::FORUM);
            }
            page_size_menu(&mut b, fixture, state);
            if entries.is_empty() {
                b.text(1, "empty", "No submissions found.");
            } else {
                b.add(1, "list", "list", "Submissions", &[], Effect::Static);
                for post in &entries[start..end] {
                    let k = &post.post_id;
                    b.add(2, &format!("post:{k}"), "article", "", &[], Effect::Static);
                    b.link(3, &format!("post:{k}:title"), &post.title, PageRef::Post(k.clone()));
                    b.text(3, &format!("post:{k}:rank"), &format!("Hot rank: {}", post.hotness_rank));
                    if matches!(state.page, PageRef::User(_)) {
                        b.text(3, &format!("post:{k}:forum"), &format!("in /f/{}", post.forum));
                    }
                    if fixture.has_widget(Widget::ProfileLink) {
                        b.link(3, &format!("post:{k}:author"), &format!("by {}", post.author), PageRef::User(post.author.clone()));
                    } else {
                        b.text(3, &format!("post:{k}:author"), &format!("by {}", post.author));
                    }
                    b.text(3, &format!("post:{k}:comments"), &format!("{} comments", post.comment_count));
                    listed.push(k.clone());
                }
            }
            pager(&mut b, page, pages, "More");
        }
        PageRef::Post(id) => {
            let post = fixture
                .posts
                .iter()
                .chain(submissions.iter())
                .find(|p| &p.post_id == id);
            match post {
                Some(post) => {
                    b.add(0, "root", "RootWebArea", &format!("{site} - {}", post.title), &[], Effect::Static);
                    b.link(1, "home", "Home", PageRef::Home);
                    b.link(1, "forum", &format!("/f/{}", post.forum), PageRef::Forum(post.forum.clone()));
                    b.add(1, "heading", "heading", &post.title, &[], Effect::Static);
                    b.text(1, "by", &format!("Submitted by {} in /f/{}", post.author, post.forum));
                    b.text(1, "comments", &format!("{} comments", post.comment_count));
                }
                None => not_found(&mut b, site),
            }
        }
        PageRef::Submit(forum) => {
            b.add(0, "root", "RootWebArea", &format!("{site} - Create submission"), &[], Effect::Static);
            b.link(1, "home", "Home", PageRef::Home);
            b.add(1, "heading", "heading", &format!("Create submission in /f/{forum}"), &[], Effect::Static);
            b.text(1, "as", &format!("Posting as {AGENT_USER}"));
            let attrs = draft_attrs(state);
            b.add(1, "title", "textbox", "Title", &attrs, Effect::TitleBox);
            b.add(1, "create", "button", "Create submission", &[], Effect::SubmitButton);
        }
    }

    Rendered {
        page_id,
        url,
        ax_tree: b.lines.join("\n"),
        nodes: b.nodes,
        listed,
    }
}

fn draft_attrs(state: &PageState) -> Vec<String> {
    state
        .draft
        .as_ref()
        .map(|d| vec![format!("value: {d}")])
        .unwrap_or_default()
}

fn search_bar(b: &mut Builder, state: &PageState) {
    let attrs = draft_attrs(state);
    b.add(1, "search", "searchbox", "Search", &attrs, Effect::SearchBox);
    b.add(1, "search:go", "button", "Search", &[], Effect::SearchButton);
}

fn sort_menu(b: &mut Builder, state: &PageState, keys: &[SortKey]) {
    let current = vec![format!("value: {}", state.controls.sort.label())];
    b.add(1, "sort", "combobox", "Sort By", &current, Effect::Static);
    for &key in keys {
        let attrs = if key == state.controls.sort {
            vec!["selected".to_string()]
        } else {
            vec![]
        };
        b.add(2, &format!("sort:{key:?}"), "option", key.label(), &attrs, Effect::Sort(key));
    }
}

fn page_size_menu(b: &mut Builder, fixture: &SiteFixture, state: &PageState) {
    if !(fixture.has_widget(Widget::PageSizeMenu) && fixture.has_widget(Widget::Pagination)) {
        return;
    }
    let current = vec![format!("value: {}", state.controls.page_size)];
    b.add(1, "size", "combobox", "Show", &current, Effect::Static);
    for &n in &fixture.page_size_options {
        let attrs = if n == state.controls.page_size {
            vec!["selected".to_string()]
        } else {
            vec![]
        };
        b.add(2, &format!("size:{n}"), "option", &format!("{n} per page"), &attrs, Effect::PageSize(n));
    }
}

fn pager(b: &mut Builder, page: u32, pages: u32, next_label: &str) {
    if page > 1 {
        b.add(1, "prev", "link", "Previous Page", &[], Effect::Page(page - 1));
    }
    if page < pages {
        b.add(1, "next", "link", next_label, &[], Effect::Page(page + 1));
    }
}

fn not_found(b: &mut Builder, site: &str) {
    b.add(0, "root", "RootWebArea", &format!("{site} - Not found"), &[], Effect::Static);
    b.link(1, "home", "Home", PageRef::Home);
    b.text(1, "missing", "The page you requested was not found.");
}
