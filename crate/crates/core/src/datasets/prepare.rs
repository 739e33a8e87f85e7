use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{user_id_order, ItemCatalog, PreparedUser, RawInteraction};
use crate::types::{Domain, GenreSet, InteractionRecord};

/// Users need at least `min_count` ratings; the earliest `cap` are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleDomainRules {
    pub min_count: usize,
    pub cap: usize,
}

impl Default for SingleDomainRules {
    fn default() -> Self {
        Self {
            min_count: 19,
            cap: 19,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossDomainRules {
    pub movie_min: usize,
    pub movie_cap: usize,
}

impl Default for CrossDomainRules {
    fn default() -> Self {
        Self {
            movie_min: 18,
            movie_cap: 18,
        }
    }
}

/// Groups by user and orders each user's ratings by (timestamp, item_id).
/// Exact duplicate (item, timestamp) pairs keep their first occurrence.
fn group_chronological(interactions: &[RawInteraction]) -> BTreeMap<&str, Vec<&RawInteraction>> {
    let mut by_user: BTreeMap<&str, Vec<&RawInteraction>> = BTreeMap::new();
    for r in interactions {
        by_user.entry(r.user_id.as_str()).or_default().push(r);
    }
    for list in by_user.values_mut() {
        list.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.item_id.cmp(&b.item_id))
        });
        let mut seen = HashSet::new();
        list.retain(|r| seen.insert((r.item_id.as_str(), r.timestamp)));
    }
    by_user
}

fn to_record(
    r: &RawInteraction,
    catalog: &ItemCatalog,
    domain: &Domain,
    record_id: String,
) -> InteractionRecord {
    let (title, genres) = match catalog.get(&r.item_id) {
        Some(e) => (e.title.clone(), e.genres.clone()),
        None => (format!("item {}", r.item_id), GenreSet::new()),
    };
    InteractionRecord {
        record_id,
        item_id: r.item_id.clone(),
        title,
        domain: domain.clone(),
        genres,
        description: String::new(),
        rating: r.rating,
        timestamp: r.timestamp,
    }
}

fn sorted(mut users: Vec<PreparedUser>) -> Vec<PreparedUser> {
    users.sort_by(|a, b| user_id_order(&a.user_id, &b.user_id));
    users
}

/// Keeps users with at least `rules.min_count` ratings, each truncated to
/// their chronologically earliest `rules.cap`. Output is sorted by user id.
pub fn prepare_single_domain(
    interactions: &[RawInteraction],
    catalog: &ItemCatalog,
    rules: SingleDomainRules,
) -> Vec<PreparedUser> {
    let users = group_chronological(interactions)
        .into_iter()
        .filter(|(_, list)| list.len() >= rules.min_count)
        .map(|(user, list)| PreparedUser {
            user_id: user.to_string(),
            history: list
                .iter()
                .take(rules.cap)
                .enumerate()
                .map(|(i, r)| to_record(r, catalog, &Domain::Movie, format!("{user}:m{:02}", i + 1)))
                .collect(),
            cross_target: None,
        })
        .collect();
    sorted(users)
}

/// Keeps users with enough movie ratings and at least one book rating. The
/// history is the earliest `rules.movie_cap` movies; the target is the
/// earliest book (ties broken by item id).
pub fn prepare_cross_domain(
    movie_interactions: &[RawInteraction],
    movie_catalog: &ItemCatalog,
    book_interactions: &[RawInteraction],
    book_catalog: &ItemCatalog,
    rules: CrossDomainRules,
) -> Vec<PreparedUser> {
    let books = group_chronological(book_interactions);
    let users = group_chronological(movie_interactions)
        .into_iter()
        .filter(|(_, list)| list.len() >= rules.movie_min)
        .filter_map(|(user, list)| {
            let book = books.get(user)?.first()?;
            Some(PreparedUser {
                user_id: user.to_string(),
                history: list
                    .iter()
                    .take(rules.movie_cap)
                    .enumerate()
                    .map(|(i, r)| {
                        to_record(r, movie_catalog, &Domain::Movie, format!("{user}:m{:02}", i + 1))
                    })
                    .collect(),
                cross_target: Some(to_record(book, book_catalog, &Domain::Book, format!("{user}:b01"))),
            })
        })
        .collect();
    sorted(users)
}
