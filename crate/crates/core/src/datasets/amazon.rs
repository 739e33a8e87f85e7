//! Amazon review data: a "ratings only" CSV (`item,user,rating,timestamp`,
//! no header) joined against JSON-lines item metadata.
//!
//! Metadata lines carry `asin`, `title`, and either `category` (a flat list)
//! or `categories` (a list of category paths). Category paths are flattened
//! and lowercased into the genre set.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{
    require_file, DatasetError, FileStats, ItemCatalog, ItemCatalogEntry, LoadReport,
    LoadedDataset, RawInteraction, Source,
};
use crate::types::{validate_rating, Domain, GenreSet};

#[derive(Deserialize)]
#[serde(untagged)]
enum Categories {
    Flat(Vec<String>),
    Nested(Vec<Vec<String>>),
}

#[derive(Deserialize)]
struct MetaLine {
    asin: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    category: Option<Categories>,
    #[serde(default)]
    categories: Option<Categories>,
}

impl Categories {
    fn flatten(self) -> Vec<String> {
        match self {
            Categories::Flat(v) => v,
            Categories::Nested(v) => v.into_iter().flatten().collect(),
        }
    }
}

pub fn load_amazon(
    ratings_path: impl AsRef<Path>,
    metadata_path: impl AsRef<Path>,
    domain: Domain,
) -> Result<LoadedDataset, DatasetError> {
    let ratings_path = ratings_path.as_ref();
    let metadata_path = metadata_path.as_ref();
    require_file(ratings_path)?;
    require_file(metadata_path)?;
    let source = match domain {
        Domain::Book => Source::AmazonBooks,
        _ => Source::AmazonMovies,
    };

    let mut report = LoadReport::default();
    let mut meta_stats = FileStats {
        file: metadata_path.display().to_string(),
        ..Default::default()
    };
    let mut catalog = ItemCatalog::new();
    // items present in metadata but with no categories
    let mut uncategorized: HashMap<String, ()> = HashMap::new();
    let meta_text = String::from_utf8_lossy(&fs::read(metadata_path)?).into_owned();
    for (i, line) in meta_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        meta_stats.lines += 1;
        let meta: MetaLine = match serde_json::from_str(line) {
            Ok(m) => m,
            Err(e) => {
                report.reject(&mut meta_stats, i + 1, format!("bad metadata json: {e}"), line);
                continue;
            }
        };
        if meta.asin.trim().is_empty() {
            report.reject(&mut meta_stats, i + 1, "empty asin", line);
            continue;
        }
        let labels = meta
            .category
            .or(meta.categories)
            .map(Categories::flatten)
            .unwrap_or_default();
        let genres = GenreSet::from_labels(labels);
        let item_id = meta.asin.trim().to_string();
        if genres.is_empty() {
            uncategorized.insert(item_id, ());
            meta_stats.accepted += 1;
            continue;
        }
        let entry = ItemCatalogEntry {
            title: meta
                .title
                .map(|t| t.trim().to_string())
                .filter(|t| !t.is_empty())
                .unwrap_or_else(|| item_id.clone()),
            item_id,
            genres,
            domain: domain.clone(),
        };
        if catalog.insert(entry) {
            meta_stats.accepted += 1;
        } else {
            report.reject(&mut meta_stats, i + 1, "duplicate asin", line);
        }
    }

    let mut rating_stats = FileStats {
        file: ratings_path.display().to_string(),
        ..Default::default()
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(ratings_path)
        .map_err(|e| DatasetError::Io(std::io::Error::other(e)))?;
    let mut interactions = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rating_stats.lines += 1;
                report.reject(&mut rating_stats, i + 1, format!("unreadable row: {e}"), "");
                continue;
            }
        };
        let line_no = row.position().map_or(i + 1, |p| p.line() as usize);
        if row.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        rating_stats.lines += 1;
        let raw = row.iter().collect::<Vec<_>>().join(",");
        if row.len() != 4 {
            report.reject(&mut rating_stats, line_no, format!("expected 4 fields, got {}", row.len()), &raw);
            continue;
        }
        let (item, user) = (row[0].trim(), row[1].trim());
        let rating = match row[2].trim().parse::<f64>() {
            Ok(r) if validate_rating(r).is_ok() => r,
            _ => {
                report.reject(&mut rating_stats, line_no, format!("bad rating `{}`", &row[2]), &raw);
                continue;
            }
        };
        let Ok(timestamp) = row[3].trim().parse::<i64>() else {
            report.reject(&mut rating_stats, line_no, format!("bad timestamp `{}`", &row[3]), &raw);
            continue;
        };
        if item.is_empty() || user.is_empty() {
            report.reject(&mut rating_stats, line_no, "empty user or item id", &raw);
            continue;
        }
        rating_stats.accepted += 1;
        if catalog.get(item).is_some() {
            interactions.push(RawInteraction {
                user_id: user.to_string(),
                item_id: item.to_string(),
                rating,
                timestamp,
                source,
            });
        } else if uncategorized.contains_key(item) {
            report.excluded_no_categories += 1;
        } else {
            report.excluded_no_metadata += 1;
        }
    }
    report.files.push(rating_stats);
    report.files.push(meta_stats);
    Ok(LoadedDataset {
        interactions,
        catalog,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, ratings: &str, meta: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let r = dir.join("ratings.csv");
        let m = dir.join("meta.jsonl");
        fs::write(&r, ratings).unwrap();
        fs::write(&m, meta).unwrap();
        (r, m)
    }

    #[test]
    fn join_and_exclusions() {
        let dir = tempfile::tempdir().unwrap();
        let (r, m) = write(
            dir.path(),
            "B1,u1,5.0,100\nB2,u1,4.0,200\nB3,u2,3.0,300\nB1,u2,9,1\nbroken\n",
            concat!(
                "{\"asin\":\"B1\",\"title\":\"Dragons\",\"category\":[\"Books\",\"Fantasy\"]}\n",
                "{\"asin\":\"B2\",\"title\":\"Bare\",\"category\":[]}\n",
                "not json\n",
            ),
        );
        let ds = load_amazon(&r, &m, Domain::Book).unwrap();
        assert_eq!(ds.interactions.len(), 1);
        assert_eq!(ds.report.excluded_no_categories, 1);
        assert_eq!(ds.report.excluded_no_metadata, 1);
        assert_eq!(ds.report.rejects.len(), 3);
        let b1 = ds.catalog.get("B1").unwrap();
        assert_eq!(b1.genres, GenreSet::from_labels(["books", "fantasy"]));
        for f in &ds.report.files {
            assert_eq!(f.accepted + f.rejected, f.lines, "{}", f.file);
        }
    }

    #[test]
    fn nested_categories_flatten() {
        let dir = tempfile::tempdir().unwrap();
        let (r, m) = write(
            dir.path(),
            "M1,u1,4,1\n",
            "{\"asin\":\"M1\",\"categories\":[[\"Movies & TV\",\"Drama\"],[\"Movies & TV\",\"Comedy\"]]}\n",
        );
        let ds = load_amazon(&r, &m, Domain::Movie).unwrap();
        let m1 = ds.catalog.get("M1").unwrap();
        assert_eq!(m1.genres.joined(), "comedy, drama, movies & tv");
        assert_eq!(m1.title, "M1");
        assert_eq!(ds.interactions[0].source, Source::AmazonMovies);
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_amazon(dir.path().join("x"), dir.path().join("y"), Domain::Book),
            Err(DatasetError::MissingFile(_))
        ));
    }
}
