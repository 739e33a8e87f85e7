//! Shared domain types: interaction records, target items and genre sets.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("rating {0} outside [1, 5]")]
    RatingOutOfRange(f64),
    #[error("field `{0}` must not be empty")]
    EmptyField(&'static str),
    #[error("invalid user id `{0}`")]
    InvalidUserId(String),
    #[error("empty genre label")]
    EmptyGenreLabel,
}

/// Item category. Serialized as a bare string: `movie`, `book`, or any other label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Movie,
    Book,
    Other(String),
}

impl Domain {
    pub fn as_str(&self) -> &str {
        match self {
            Domain::Movie => "movie",
            Domain::Book => "book",
            Domain::Other(s) => s,
        }
    }

    pub fn parse(s: &str) -> Domain {
        match s.trim().to_ascii_lowercase().as_str() {
            "movie" | "movies" => Domain::Movie,
            "book" | "books" => Domain::Book,
            other => Domain::Other(other.to_string()),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Domain {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Domain {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Domain::parse(&s))
    }
}

/// Lowercase, trim and collapse internal whitespace runs to one space.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// A set of normalized genre labels. Labels are compared case-insensitively
/// and with whitespace collapsed, so `" Sci-Fi "` and `"sci-fi"` are one label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct GenreSet(BTreeSet<String>);

impl GenreSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set, silently dropping labels that are blank after normalization.
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = GenreSet::new();
        for label in labels {
            let _ = set.insert(label.as_ref());
        }
        set
    }

    /// Like [`GenreSet::from_labels`] but rejects blank labels.
    pub fn try_from_labels<I, S>(labels: I) -> Result<Self, ValidationError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = GenreSet::new();
        for label in labels {
            set.insert(label.as_ref())?;
        }
        Ok(set)
    }

    /// Parses a comma-separated label list.
    pub fn parse_list(list: &str) -> Self {
        Self::from_labels(list.split(','))
    }

    pub fn insert(&mut self, label: &str) -> Result<bool, ValidationError> {
        let norm = normalize_label(label);
        if norm.is_empty() {
            return Err(ValidationError::EmptyGenreLabel);
        }
        Ok(self.0.insert(norm))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(&normalize_label(label))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn intersection_count(&self, other: &GenreSet) -> usize {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.0.iter().filter(|g| large.0.contains(*g)).count()
    }

    /// Labels joined by `", "` in sorted order.
    pub fn joined(&self) -> String {
        self.iter().collect::<Vec<_>>().join(", ")
    }
}

impl Serialize for GenreSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter())
    }
}

impl<'de> Deserialize<'de> for GenreSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let labels = Vec::<String>::deserialize(deserializer)?;
        GenreSet::try_from_labels(labels).map_err(serde::de::Error::custom)
    }
}

impl<S: AsRef<str>> FromIterator<S> for GenreSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        GenreSet::from_labels(iter)
    }
}

/// One row of a user's memory table.
///
/// Serialized field order is fixed: `record_id, item_id, title, domain,
/// genres, description, rating, timestamp`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub record_id: String,
    pub item_id: String,
    pub title: String,
    pub domain: Domain,
    #[serde(default)]
    pub genres: GenreSet,
    #[serde(default)]
    pub description: String,
    pub rating: f64,
    /// Seconds since the epoch; 0 when unknown.
    #[serde(default)]
    pub timestamp: i64,
}

impl InteractionRecord {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.record_id.trim().is_empty() {
            return Err(ValidationError::EmptyField("record_id"));
        }
        if self.item_id.trim().is_empty() {
            return Err(ValidationError::EmptyField("item_id"));
        }
        validate_rating(self.rating)
    }

    /// The target-item view of this record (drops rating and timestamp).
    pub fn as_target(&self) -> TargetItem {
        TargetItem {
            item_id: self.item_id.clone(),
            title: self.title.clone(),
            domain: self.domain.clone(),
            genres: self.genres.clone(),
            description: self.description.clone(),
        }
    }
}

pub fn validate_rating(rating: f64) -> Result<(), ValidationError> {
    if rating.is_finite() && (MIN_RATING..=MAX_RATING).contains(&rating) {
        Ok(())
    } else {
        Err(ValidationError::RatingOutOfRange(rating))
    }
}

/// The item a rating is being predicted for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetItem {
    pub item_id: String,
    pub title: String,
    pub domain: Domain,
    #[serde(default)]
    pub genres: GenreSet,
    #[serde(default)]
    pub description: String,
}

impl TargetItem {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.title.trim().is_empty() && self.genres.is_empty() && self.description.trim().is_empty()
        {
            return Err(ValidationError::EmptyField("title/genres/description"));
        }
        Ok(())
    }
}

/// User ids double as file names, so they are restricted to `[A-Za-z0-9_.-]`
/// and may not start with a dot.
pub fn validate_user_id(user_id: &str) -> Result<(), ValidationError> {
    let ok = !user_id.is_empty()
        && user_id.len() <= 128
        && !user_id.starts_with('.')
        && user_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ValidationError::InvalidUserId(user_id.to_string()))
    }
}
