//! Dataset loaders and the preprocessing that turns raw ratings into
//! fixed-length per-user histories.

mod amazon;
mod movielens;
mod prepare;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use amazon::load_amazon;
pub use movielens::{load_movielens, MOVIELENS_GENRES};
pub use prepare::{
    prepare_cross_domain, prepare_single_domain, CrossDomainRules, SingleDomainRules,
};

use crate::types::{normalize_label, Domain, GenreSet, InteractionRecord};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: malformed header: {reason}")]
    MalformedHeader { file: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{file}:{line}: {reason}")]
    BadPreparedLine {
        file: PathBuf,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Movielens,
    AmazonMovies,
    AmazonBooks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub timestamp: i64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemCatalogEntry {
    pub item_id: String,
    pub title: String,
    pub genres: GenreSet,
    pub domain: Domain,
}

/// Item metadata keyed by item id, with a normalized-title index.
#[derive(Debug, Clone, Default)]
pub struct ItemCatalog {
    entries: BTreeMap<String, ItemCatalogEntry>,
    by_title: HashMap<String, String>,
}

/// Strips a trailing `" (1995)"` style year.
fn strip_year(title: &str) -> &str {
    let t = title.trim_end();
    if let Some(open) = t.rfind(" (") {
        let inner = &t[open + 2..];
        if inner.len() == 5 && inner.ends_with(')') && inner[..4].chars().all(|c| c.is_ascii_digit()) {
            return &t[..open];
        }
    }
    t
}

impl ItemCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts an entry; returns `false` (and keeps the first) on a duplicate id.
    pub fn insert(&mut self, entry: ItemCatalogEntry) -> bool {
        if self.entries.contains_key(&entry.item_id) {
            return false;
        }
        for key in [normalize_label(&entry.title), normalize_label(strip_year(&entry.title))] {
            if !key.is_empty() {
                self.by_title.entry(key).or_insert_with(|| entry.item_id.clone());
            }
        }
        self.entries.insert(entry.item_id.clone(), entry);
        true
    }

    pub fn get(&self, item_id: &str) -> Option<&ItemCatalogEntry> {
        self.entries.get(item_id)
    }

    /// Case-insensitive title lookup; a release year suffix is optional.
    pub fn find_by_title(&self, title: &str) -> Option<&ItemCatalogEntry> {
        let key = normalize_label(title);
        self.by_title
            .get(&key)
            .or_else(|| self.by_title.get(&normalize_label(strip_year(title))))
            .and_then(|id| self.entries.get(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ItemCatalogEntry> {
        self.entries.values()
    }

    pub fn merge(&mut self, other: ItemCatalog) {
        for e in other.entries.into_values() {
            self.insert(e);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reject {
    pub file: String,
    pub line: usize,
    pub reason: String,
    pub raw: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileStats {
    pub file: String,
    /// Non-blank lines read.
    pub lines: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// What a loader kept, rejected and excluded. For every file
/// `accepted + rejected == lines`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub files: Vec<FileStats>,
    pub rejects: Vec<Reject>,
    /// Well-formed ratings dropped because their item has no metadata.
    pub excluded_no_metadata: usize,
    /// Well-formed ratings dropped because their item has no categories.
    pub excluded_no_categories: usize,
}

impl LoadReport {
    fn reject(&mut self, stats: &mut FileStats, line: usize, reason: impl Into<String>, raw: &str) {
        stats.rejected += 1;
        self.rejects.push(Reject {
            file: stats.file.clone(),
            line,
            reason: reason.into(),
            raw: raw.chars().take(200).collect(),
        });
    }

    pub fn merge(&mut self, other: LoadReport) {
        self.files.extend(other.files);
        self.rejects.extend(other.rejects);
        self.excluded_no_metadata += other.excluded_no_metadata;
        self.excluded_no_categories += other.excluded_no_categories;
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub interactions: Vec<RawInteraction>,
    pub catalog: ItemCatalog,
    pub report: LoadReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedUser {
    pub user_id: String,
    /// Chronological.
    pub history: Vec<InteractionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_target: Option<InteractionRecord>,
}

/// Orders numeric ids numerically and everything else lexicographically,
/// numeric ids first.
pub fn user_id_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Writes one JSON user document per line.
pub fn write_prepared(path: impl AsRef<Path>, users: &[PreparedUser]) -> io::Result<()> {
    if let Some(parent) = path.as_ref().parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for u in users {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_prepared(path: impl AsRef<Path>) -> Result<Vec<PreparedUser>, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => DatasetError::MissingFile(path.to_path_buf()),
        _ => DatasetError::Io(e),
    })?;
    let mut users = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let user: PreparedUser =
            serde_json::from_str(&line).map_err(|e| DatasetError::BadPreparedLine {
                file: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        users.push(user);
    }
    Ok(users)
}

fn require_file(path: &Path) -> Result<(), DatasetError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(DatasetError::MissingFile(path.to_path_buf()))
    }
}
