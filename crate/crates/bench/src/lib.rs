//! Shared fixtures for the criterion benches.

use map_core::{Domain, GenreSet, InteractionRecord, TargetItem};

const LABELS: [&str; 12] = [
    "Action", "Adventure", "Comedy", "Crime", "Drama", "Fantasy", "Horror", "Mystery", "Romance",
    "Sci-Fi", "Thriller", "War",
];

/// A deterministic history of `n` records with one to three genres each.
pub fn history(n: usize) -> Vec<InteractionRecord> {
    (0..n)
        .map(|i| {
            let genres = GenreSet::from_labels((0..1 + i % 3).map(|j| LABELS[(i * 7 + j * 5) % LABELS.len()]));
            InteractionRecord {
                record_id: format!("u:m{i:04}"),
                item_id: format!("item-{i}"),
                title: format!("Feature Presentation Number {i}"),
                domain: Domain::Movie,
                genres,
                description: String::new(),
                rating: (i % 5 + 1) as f64,
                timestamp: 1_000_000 + i as i64,
            }
        })
        .collect()
}

pub fn target() -> TargetItem {
    TargetItem {
        item_id: "target".into(),
        title: "The Long Night Before Morning".into(),
        domain: Domain::Movie,
        genres: GenreSet::from_labels(["Drama", "Sci-Fi", "Thriller"]),
        description: String::new(),
    }
}

/// Replies of the kinds a chat model tends to give for a rating request.
pub const REPLIES: [&str; 6] = [
    "4",
    "3.5",
    "I would predict a rating of 4 out of 5.",
    "Rating: 2/5",
    "Based on the user's history of enjoying science fiction, they would likely rate it 4.5.",
    "Hard to say, but probably around 3",
];
