//! MovieLens 100k: `u.data` (tab-separated `user item rating timestamp`) and
//! `u.item` (pipe-separated, Latin-1, five metadata columns then 19 genre
//! flags).

use std::fs;
use std::path::Path;

use super::{
    require_file, DatasetError, FileStats, ItemCatalog, ItemCatalogEntry, LoadReport,
    LoadedDataset, RawInteraction, Source,
};
use crate::types::{validate_rating, Domain, GenreSet};

pub const MOVIELENS_GENRES: [&str; 19] = [
    "unknown",
    "Action",
    "Adventure",
    "Animation",
    "Children's",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Film-Noir",
    "Horror",
    "Musical",
    "Mystery",
    "Romance",
    "Sci-Fi",
    "Thriller",
    "War",
    "Western",
];

const ITEM_COLUMNS: usize = 5 + MOVIELENS_GENRES.len();

fn latin1(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| b as char).collect()
}

fn parse_item_line(line: &str) -> Result<ItemCatalogEntry, String> {
    let cols: Vec<&str> = line.split('|').collect();
    if cols.len() != ITEM_COLUMNS {
        return Err(format!("expected {ITEM_COLUMNS} columns, got {}", cols.len()));
    }
    let item_id = cols[0].trim();
    if item_id.is_empty() {
        return Err("empty item id".into());
    }
    let mut genres = GenreSet::new();
    for (flag, label) in cols[5..].iter().zip(MOVIELENS_GENRES) {
        match flag.trim() {
            "1" => {
                genres.insert(label).expect("canonical labels are non-empty");
            }
            "0" => {}
            other => return Err(format!("bad genre flag `{other}`")),
        }
    }
    Ok(ItemCatalogEntry {
        item_id: item_id.to_string(),
        title: cols[1].trim().to_string(),
        genres,
        domain: Domain::Movie,
    })
}

fn parse_rating_line(line: &str) -> Result<RawInteraction, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 {
        return Err(format!("expected 4 columns, got {}", cols.len()));
    }
    let (user, item) = (cols[0].trim(), cols[1].trim());
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item id".into());
    }
    let rating: f64 = cols[2]
        .trim()
        .parse()
        .map_err(|_| format!("bad rating `{}`", cols[2]))?;
    validate_rating(rating).map_err(|e| e.to_string())?;
    let timestamp: i64 = cols[3]
        .trim()
        .parse()
        .map_err(|_| format!("bad timestamp `{}`", cols[3]))?;
    Ok(RawInteraction {
        user_id: user.to_string(),
        item_id: item.to_string(),
        rating,
        timestamp,
        source: Source::Movielens,
    })
}

/// Loads `u.data` and `u.item` from `dir`. Malformed lines go to the
/// report's rejects; a file whose first line has the wrong shape fails with
/// `MalformedHeader`.
pub fn load_movielens(dir: impl AsRef<Path>) -> Result<LoadedDataset, DatasetError> {
    let dir = dir.as_ref();
    let data_path = dir.join("u.data");
    let item_path = dir.join("u.item");
    require_file(&data_path)?;
    require_file(&item_path)?;

    let mut report = LoadReport::default();

    let item_text = latin1(&fs::read(&item_path)?);
    let mut item_stats = FileStats {
        file: item_path.display().to_string(),
        ..Default::default()
    };
    let mut catalog = ItemCatalog::new();
    let mut first = true;
    for (i, line) in item_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if first {
            first = false;
            let cols = line.split('|').count();
            if cols != ITEM_COLUMNS {
                return Err(DatasetError::MalformedHeader {
                    file: item_path,
                    reason: format!("first row has {cols} pipe-separated columns, expected {ITEM_COLUMNS}"),
                });
            }
        }
        item_stats.lines += 1;
        match parse_item_line(line) {
            Ok(entry) => {
                if catalog.insert(entry) {
                    item_stats.accepted += 1;
                } else {
                    report.reject(&mut item_stats, i + 1, "duplicate item id", line);
                }
            }
            Err(reason) => report.reject(&mut item_stats, i + 1, reason, line),
        }
    }

    let data_text = latin1(&fs::read(&data_path)?);
    let mut data_stats = FileStats {
        file: data_path.display().to_string(),
        ..Default::default()
    };
    let mut interactions = Vec::with_capacity(100_000);
    let mut first = true;
    for (i, line) in data_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if first {
            first = false;
            let cols = line.split('\t').count();
            if cols != 4 {
                return Err(DatasetError::MalformedHeader {
                    file: data_path,
                    reason: format!("first row has {cols} tab-separated columns, expected 4"),
                });
            }
        }
        data_stats.lines += 1;
        match parse_rating_line(line) {
            Ok(r) => {
                data_stats.accepted += 1;
                interactions.push(r);
            }
            Err(reason) => report.reject(&mut data_stats, i + 1, reason, line),
        }
    }
    report.files.push(data_stats);
    report.files.push(item_stats);
    Ok(LoadedDataset {
        interactions,
        catalog,
        report,
    })
}
