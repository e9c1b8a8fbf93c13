use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub item_id: String,
    pub name: String,
    pub price_cents: u64,
    pub review_count: u32,
    pub rating_pct: u8,
    pub category_path: Vec<String>,
}

impl CatalogItem {
    pub fn category(&self) -> &str {
        self.category_path.last().map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForumPost {
    pub post_id: String,
    pub forum: String,
    pub title: String,
    pub author: String,
    pub comment_count: u32,
    pub hotness_rank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Widget {
    SortMenu,
    PriceFilter,
    PageSizeMenu,
    Pagination,
    ProfileLink,
}

impl Widget {
    pub const ALL: [Widget; 5] = [
        Widget::SortMenu,
        Widget::PriceFilter,
        Widget::PageSizeMenu,
        Widget::Pagination,
        Widget::ProfileLink,
    ];
}

/// Inclusive price bracket in cents; `max_cents: None` is open-ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceRange {
    pub min_cents: u64,
    pub max_cents: Option<u64>,
}

impl PriceRange {
    pub fn contains(&self, cents: u64) -> bool {
        cents >= self.min_cents && self.max_cents.is_none_or(|m| cents <= m)
    }

    pub fn label(&self) -> String {
        match self.max_cents {
            Some(max) => format!("{} - {}", dollars(self.min_cents), dollars(max)),
            None => format!("{} and above", dollars(self.min_cents)),
        }
    }
}

pub fn dollars(cents: u64) -> String {
    format!("${}.{:02}", cents / 100, cents % 100)
}

/// A complete simulated site. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteFixture {
    pub site_id: String,
    pub seed: u64,
    #[serde(default)]
    pub title: String,
    /// Declared leaf categories; categories of items are always included.
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub items: Vec<CatalogItem>,
    #[serde(default)]
    pub posts: Vec<ForumPost>,
    pub widgets: BTreeSet<Widget>,
    pub page_size_options: Vec<u32>,
    pub price_ranges: Vec<PriceRange>,
}

pub const DEFAULT_PAGE_SIZES: [u32; 3] = [12, 24, 36];

pub fn default_price_ranges() -> Vec<PriceRange> {
    vec![
        PriceRange { min_cents: 0, max_cents: Some(4999) },
        PriceRange { min_cents: 5000, max_cents: Some(9999) },
        PriceRange { min_cents: 10000, max_cents: None },
    ]
}

impl SiteFixture {
    pub fn validate(&self) -> Result<(), EnvError> {
        let mut ids = HashSet::new();
        for id in self
            .items
            .iter()
            .map(|i| &i.item_id)
            .chain(self.posts.iter().map(|p| &p.post_id))
        {
            if !ids.insert(id) {
                return Err(EnvError::InvalidFixture(format!("duplicate id `{id}`")));
            }
        }
        for item in &self.items {
            if item.rating_pct > 100 {
                return Err(EnvError::InvalidFixture(format!(
                    "{}: rating above 100",
                    item.item_id
                )));
            }
            if item.category_path.is_empty() {
                return Err(EnvError::InvalidFixture(format!(
                    "{}: empty category path",
                    item.item_id
                )));
            }
        }
        let mut ranks = HashSet::new();
        for post in &self.posts {
            if !ranks.insert((&post.forum, post.hotness_rank)) {
                return Err(EnvError::InvalidFixture(format!(
                    "hotness rank {} repeats in forum {}",
                    post.hotness_rank, post.forum
                )));
            }
        }
        let texts = self
            .items
            .iter()
            .flat_map(|i| std::iter::once(&i.name).chain(&i.category_path))
            .chain(self.posts.iter().flat_map(|p| [&p.title, &p.forum, &p.author]));
        for text in texts {
            if text.contains(['[', ']', '\'', '\n']) {
                return Err(EnvError::InvalidFixture(format!(
                    "text `{text}` contains reserved characters"
                )));
            }
        }
        if self.page_size_options.is_empty() || self.page_size_options.contains(&0) {
            return Err(EnvError::InvalidFixture("bad page size options".into()));
        }
        Ok(())
    }

    pub fn default_page_size(&self) -> u32 {
        self.page_size_options[0]
    }

    pub fn has_widget(&self, widget: Widget) -> bool {
        self.widgets.contains(&widget)
    }

    /// Leaf categories in alphabetical order.
    pub fn categories(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .items
            .iter()
            .map(CatalogItem::category)
            .chain(self.categories.iter().map(String::as_str))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn forums(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.posts.iter().map(|p| p.forum.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn items_in(&self, category: &str) -> impl Iterator<Item = &CatalogItem> {
        let category = category.to_string();
        self.items.iter().filter(move |i| i.category() == category)
    }

    pub fn posts_in(&self, forum: &str) -> impl Iterator<Item = &ForumPost> {
        let forum = forum.to_string();
        self.posts.iter().filter(move |p| p.forum == forum)
    }

    /// Generates a site from `params`; the same seed yields the same site.
    pub fn generate(site_id: &str, seed: u64, params: &GeneratorParams) -> SiteFixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = HashSet::new();
        let mut items = Vec::new();
        for category in &params.categories {
            for _ in 0..category.items {
                let name = loop {
                    let candidate = format!(
                        "{} {} {}{}",
                        ADJECTIVES.choose(&mut rng).expect("words"),
                        NOUNS.choose(&mut rng).expect("words"),
                        (b'A' + rng.gen_range(0..26u8)) as char,
                        rng.gen_range(100..1000)
                    );
                    if names.insert(candidate.clone()) {
                        break candidate;
                    }
                };
                let (lo, hi) = PRICE_BANDS[rng.gen_range(0..PRICE_BANDS.len())];
                let mut path = Vec::new();
                if let Some(parent) = &category.parent {
                    path.push(parent.clone());
                }
                path.push(category.name.clone());
                items.push(CatalogItem {
                    item_id: format!("P{:05}", items.len() + 1),
                    name,
                    price_cents: rng.gen_range(lo..=hi),
                    review_count: rng.gen_range(0..400),
                    rating_pct: rng.gen_range(4..=20) * 5,
                    category_path: path,
                });
            }
        }

        let authors: Vec<String> = (1..=params.authors.max(1))
            .map(|i| format!("{}_{}", HANDLES[(i as usize - 1) % HANDLES.len()], i))
            .collect();
        let mut posts = Vec::new();
        for forum in &params.forums {
            let mut ranks: Vec<u32> = (1..=forum.posts).collect();
            ranks.shuffle(&mut rng);
            for rank in ranks {
                let title = format!(
                    "{} {} {} {}",
                    OPENERS.choose(&mut rng).expect("words"),
                    ADJECTIVES.choose(&mut rng).expect("words").to_lowercase(),
                    NOUNS.choose(&mut rng).expect("words").to_lowercase(),
                    rng.gen_range(1..100)
                );
                posts.push(ForumPost {
                    post_id: format!("F{:05}", posts.len() + 1),
                    forum: forum.name.clone(),
                    title,
                    author: authors.choose(&mut rng).expect("authors").clone(),
                    comment_count: rng.gen_range(0..300),
                    hotness_rank: rank,
                });
            }
        }

        SiteFixture {
            site_id: site_id.to_string(),
            seed,
            title: params.title.clone().unwrap_or_else(|| "One Stop Market".into()),
            categories: params.categories.iter().map(|c| c.name.clone()).collect(),
            items,
            posts,
            widgets: params
                .widgets
                .clone()
                .unwrap_or_else(|| Widget::ALL.into_iter().collect()),
            page_size_options: params
                .page_size_options
                .clone()
                .unwrap_or_else(|| DEFAULT_PAGE_SIZES.to_vec()),
            price_ranges: params.price_ranges.clone().unwrap_or_else(default_price_ranges),
        }
    }

    /// Loads a fixture file holding one site or a list of sites, each either
    /// explicit or described by generator parameters.
    pub fn load_all(path: &Path) -> Result<Vec<SiteFixture>, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::InvalidFixture(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| EnvError::InvalidFixture(format!("{}: {e}", path.display())))?;
        let specs: Vec<FixtureFile> = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|one| vec![one])
        }
        .map_err(|e| EnvError::InvalidFixture(format!("{}: {e}", path.display())))?;
        specs.into_iter().map(FixtureFile::build).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryParams {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub items: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForumParams {
    pub name: String,
    pub posts: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default)]
    pub categories: Vec<CategoryParams>,
    #[serde(default)]
    pub forums: Vec<ForumParams>,
    #[serde(default = "default_authors")]
    pub authors: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widgets: Option<BTreeSet<Widget>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_size_options: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_ranges: Option<Vec<PriceRange>>,
}

fn default_authors() -> u32 {
    12
}

/// On-disk fixture description: generator parameters or an explicit site.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureFile {
    pub site_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site: Option<SiteFixture>,
}

impl FixtureFile {
    pub fn build(self) -> Result<SiteFixture, EnvError> {
        let fixture = match (self.generator, self.site) {
            (Some(params), None) => SiteFixture::generate(&self.site_id, self.seed, &params),
            (None, Some(mut site)) => {
                site.site_id = self.site_id;
                site
            }
            _ => {
                return Err(EnvError::InvalidFixture(format!(
                    "{}: exactly one of `generator` or `site` is required",
                    self.site_id
                )))
            }
        };
        fixture.validate()?;
        Ok(fixture)
    }
}

const PRICE_BANDS: [(u64, u64); 4] = [(499, 4999), (5000, 9999), (10000, 49999), (50000, 150000)];

const ADJECTIVES: [&str; 24] = [
    "Compact", "Deluxe", "Portable", "Classic", "Smart", "Wireless", "Rugged", "Slim", "Premium",
    "Vintage", "Modern", "Ultra", "Quiet", "Bright", "Ergonomic", "Foldable", "Digital", "Solar",
    "Magnetic", "Organic", "Heavy Duty", "Mini", "Pro", "Eco",
];

const NOUNS: [&str; 24] = [
    "Speaker", "Headphones", "Soundbar", "Turntable", "Amplifier", "Receiver", "Lamp", "Kettle",
    "Blender", "Backpack", "Monitor", "Keyboard", "Router", "Camera", "Tripod", "Charger",
    "Side Table", "Bookshelf", "Tea Set", "Mug", "Desk", "Chair", "Microphone", "Subwoofer",
];

const OPENERS: [&str; 10] = [
    "Finally found a", "Thoughts on the", "Review of my", "Help with a", "Look at this",
    "Anyone else own a", "Restored a", "Cheap alternative to a", "My new", "Lost my",
];

const HANDLES: [&str; 8] = [
    "thebelsnickle", "mossy_oak", "retro_fan", "quiet_owl", "byteblaze", "night_shift", "tea_lover",
    "pixel_pusher",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GeneratorParams {
        GeneratorParams {
            categories: vec![
                CategoryParams { name: "Home Audio".into(), parent: Some("Electronics".into()), items: 30 },
                CategoryParams { name: "Kitchen".into(), parent: None, items: 20 },
            ],
            forums: vec![ForumParams { name: "OldSchoolCool".into(), posts: 40 }],
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = SiteFixture::generate("shop", 7, &params());
        let b = SiteFixture::generate("shop", 7, &params());
        let c = SiteFixture::generate("shop", 8, &params());
        assert_eq!(a, b);
        assert_ne!(a.items, c.items);
        a.validate().unwrap();
        assert_eq!(a.items.len(), 50);
        assert_eq!(a.posts.len(), 40);
    }

    #[test]
    fn ranks_form_a_permutation() {
        let site = SiteFixture::generate("shop", 3, &params());
        let mut ranks: Vec<u32> = site.posts_in("OldSchoolCool").map(|p| p.hotness_rank).collect();
        ranks.sort();
        assert_eq!(ranks, (1..=40).collect::<Vec<_>>());
    }

    #[test]
    fn validation_catches_duplicates_and_reserved_text() {
        let mut site = SiteFixture::generate("shop", 3, &params());
        site.items[1].item_id = site.items[0].item_id.clone();
        assert!(site.validate().is_err());
        let mut site = SiteFixture::generate("shop", 3, &params());
        site.items[0].name = "bad [name]".into();
        assert!(site.validate().is_err());
    }

    #[test]
    fn fixture_file_forms() {
        let generated: FixtureFile = serde_json::from_str(
            r#"{"site_id": "s", "seed": 4, "generator": {"categories": [{"name": "Laptops", "items": 5}]}}"#,
        )
        .unwrap();
        let site = generated.build().unwrap();
        assert_eq!(site.items.len(), 5);
        assert_eq!(site.page_size_options, vec![12, 24, 36]);

        let both: FixtureFile = serde_json::from_str(r#"{"site_id": "s"}"#).unwrap();
        assert!(both.build().is_err());
    }

    #[test]
    fn price_labels() {
        assert_eq!(default_price_ranges()[0].label(), "$0.00 - $49.99");
        assert_eq!(default_price_ranges()[2].label(), "$100.00 and above");
        assert!(default_price_ranges()[1].contains(9999));
        assert!(!default_price_ranges()[1].contains(10000));
    }
}
