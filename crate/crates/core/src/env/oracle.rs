//! Ground truth for harness tasks, computed by full scans over fixture data
//! with no pagination or widget logic involved.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde_json::{json, Value};
use thiserror::Error;

use super::fixture::{CatalogItem, ForumPost, SiteFixture};
use crate::answer::render_answer;
use crate::model::TaskSpec;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("unsupported evaluation target `{0}`")]
    Unsupported(String),
    #[error("malformed evaluation target `{0}`: {1}")]
    Malformed(String, String),
    #[error("no data for `{0}`")]
    Empty(String),
}

/// A task family with its parameters. Text form:
/// `family?key=value&key=value`, e.g.
/// `top_k_by_reviews_in_price_range?category=Home Audio&k=3&min=10000`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalTarget {
    TopKByReviewsInPriceRange {
        category: String,
        k: usize,
        min_cents: u64,
        max_cents: Option<u64>,
    },
    AveragePriceInCategory {
        category: String,
    },
    CountByPriceBracket {
        category: String,
    },
    TotalCommentsTopN {
        forum: String,
        n: usize,
    },
    UniqueAuthorsTopNHottest {
        forum: String,
        n: usize,
    },
    /// Product names whose star rating (percent / 20) is at most `stars`,
    /// alphabetical.
    ReviewsBelowRating {
        category: String,
        stars: u8,
    },
    /// Scored against environment state rather than answer text.
    PostCreated {
        forum: String,
        title: String,
    },
}

impl EvalTarget {
    pub fn family(&self) -> &'static str {
        match self {
            EvalTarget::TopKByReviewsInPriceRange { .. } => "top_k_by_reviews_in_price_range",
            EvalTarget::AveragePriceInCategory { .. } => "average_price_in_category",
            EvalTarget::CountByPriceBracket { .. } => "count_by_price_bracket",
            EvalTarget::TotalCommentsTopN { .. } => "total_comments_top_n",
            EvalTarget::UniqueAuthorsTopNHottest { .. } => "unique_authors_top_n_hottest",
            EvalTarget::ReviewsBelowRating { .. } => "reviews_below_rating",
            EvalTarget::PostCreated { .. } => "post_created",
        }
    }

    pub fn is_env_check(&self) -> bool {
        matches!(self, EvalTarget::PostCreated { .. })
    }
}

impl fmt::Display for EvalTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<(&str, String)> = match self {
            EvalTarget::TopKByReviewsInPriceRange {
                category,
                k,
                min_cents,
                max_cents,
            } => {
                let mut p = vec![
                    ("category", category.clone()),
                    ("k", k.to_string()),
                    ("min", min_cents.to_string()),
                ];
                if let Some(max) = max_cents {
                    p.push(("max", max.to_string()));
                }
                p
            }
            EvalTarget::AveragePriceInCategory { category }
            | EvalTarget::CountByPriceBracket { category } => vec![("category", category.clone())],
            EvalTarget::TotalCommentsTopN { forum, n }
            | EvalTarget::UniqueAuthorsTopNHottest { forum, n } => {
                vec![("forum", forum.clone()), ("n", n.to_string())]
            }
            EvalTarget::ReviewsBelowRating { category, stars } => {
                vec![("category", category.clone()), ("stars", stars.to_string())]
            }
            EvalTarget::PostCreated { forum, title } => {
                vec![("forum", forum.clone()), ("title", title.clone())]
            }
        };
        let query: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{}?{}", self.family(), query.join("&"))
    }
}

impl FromStr for EvalTarget {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = |why: &str| OracleError::Malformed(s.to_string(), why.to_string());
        let (family, query) = s.split_once('?').unwrap_or((s, ""));
        let params: HashMap<&str, &str> = query
            .split('&')
            .filter(|p| !p.is_empty())
            .map(|p| p.split_once('=').ok_or_else(|| malformed("parameter without `=`")))
            .collect::<Result<_, _>>()?;
        let text = |key: &str| {
            params
                .get(key)
                .map(|v| v.to_string())
                .ok_or_else(|| malformed(&format!("missing `{key}`")))
        };
        let number = |key: &str| -> Result<u64, OracleError> {
            text(key)?
                .parse()
                .map_err(|_| malformed(&format!("`{key}` is not a number")))
        };
        Ok(match family {
            "top_k_by_reviews_in_price_range" => EvalTarget::TopKByReviewsInPriceRange {
                category: text("category")?,
                k: number("k")? as usize,
                min_cents: if params.contains_key("min") { number("min")? } else { 0 },
                max_cents: if params.contains_key("max") { Some(number("max")?) } else { None },
            },
            "average_price_in_category" => EvalTarget::AveragePriceInCategory {
                category: text("category")?,
            },
            "count_by_price_bracket" => EvalTarget::CountByPriceBracket {
                category: text("category")?,
            },
            "total_comments_top_n" => EvalTarget::TotalCommentsTopN {
                forum: text("forum")?,
                n: number("n")? as usize,
            },
            "unique_authors_top_n_hottest" => EvalTarget::UniqueAuthorsTopNHottest {
                forum: text("forum")?,
                n: number("n")? as usize,
            },
            "reviews_below_rating" => EvalTarget::ReviewsBelowRating {
                category: text("category")?,
                stars: number("stars")?.min(5) as u8,
            },
            "post_created" => EvalTarget::PostCreated {
                forum: text("forum")?,
                title: text("title")?,
            },
            other => return Err(OracleError::Unsupported(other.to_string())),
        })
    }
}

fn in_category<'a>(fixture: &'a SiteFixture, category: &str) -> Vec<&'a CatalogItem> {
    fixture
        .items
        .iter()
        .filter(|i| i.category() == category)
        .collect()
}

fn hottest<'a>(fixture: &'a SiteFixture, forum: &str, n: usize) -> Vec<&'a ForumPost> {
    let mut posts: Vec<&ForumPost> = fixture.posts.iter().filter(|p| p.forum == forum).collect();
    posts.sort_by(|a, b| a.hotness_rank.cmp(&b.hotness_rank).then(a.post_id.cmp(&b.post_id)));
    posts.truncate(n);
    posts
}

/// The answer value for an answer-scored target.
pub fn oracle_value(target: &EvalTarget, fixture: &SiteFixture) -> Result<Value, OracleError> {
    Ok(match target {
        EvalTarget::TopKByReviewsInPriceRange {
            category,
            k,
            min_cents,
            max_cents,
        } => {
            let mut items: Vec<&CatalogItem> = in_category(fixture, category)
                .into_iter()
                .filter(|i| i.price_cents >= *min_cents && max_cents.is_none_or(|m| i.price_cents <= m))
                .collect();
            items.sort_by(|a, b| b.review_count.cmp(&a.review_count).then(a.item_id.cmp(&b.item_id)));
            json!(items.iter().take(*k).map(|i| i.name.clone()).collect::<Vec<_>>())
        }
        EvalTarget::AveragePriceInCategory { category } => {
            let items = in_category(fixture, category);
            if items.is_empty() {
                return Err(OracleError::Empty(category.clone()));
            }
            let total: u64 = items.iter().map(|i| i.price_cents).sum();
            json!((total as f64 / items.len() as f64) / 100.0)
        }
        EvalTarget::CountByPriceBracket { category } => {
            let items = in_category(fixture, category);
            let count = |pred: &dyn Fn(u64) -> bool| items.iter().filter(|i| pred(i.price_cents)).count();
            json!({
                "<50": count(&|c| c < 5000),
                "50-99": count(&|c| (5000..10000).contains(&c)),
                "100+": count(&|c| c >= 10000),
            })
        }
        EvalTarget::TotalCommentsTopN { forum, n } => {
            json!(hottest(fixture, forum, *n).iter().map(|p| u64::from(p.comment_count)).sum::<u64>())
        }
        EvalTarget::UniqueAuthorsTopNHottest { forum, n } => {
            let authors: BTreeSet<&str> = hottest(fixture, forum, *n).iter().map(|p| p.author.as_str()).collect();
            json!(authors.len())
        }
        EvalTarget::ReviewsBelowRating { category, stars } => {
            let mut items: Vec<&CatalogItem> = in_category(fixture, category)
                .into_iter()
                .filter(|i| u32::from(i.rating_pct) <= u32::from(*stars) * 20)
                .collect();
            items.sort_by(|a, b| a.name.cmp(&b.name).then(a.item_id.cmp(&b.item_id)));
            json!(items.iter().map(|i| i.name.clone()).collect::<Vec<_>>())
        }
        EvalTarget::PostCreated { .. } => {
            return Err(OracleError::Unsupported(target.family().to_string()))
        }
    })
}

/// Expected answer text for `task`, rendered with the executor's rules.
pub fn oracle_answer(task: &TaskSpec, fixture: &SiteFixture) -> Result<String, OracleError> {
    let target: EvalTarget = task
        .eval_target
        .as_deref()
        .ok_or_else(|| OracleError::Unsupported("<none>".into()))?
        .parse()?;
    oracle_value(&target, fixture).map(|v| render_answer(&v))
}

/// Environment-state check for `post_created` targets.
pub fn post_exists(submissions: &[ForumPost], forum: &str, title: &str) -> bool {
    submissions
        .iter()
        .any(|p| p.forum == forum && p.title.trim() == title.trim())
}
