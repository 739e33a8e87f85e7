#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use map_core::datasets::{PreparedUser, MOVIELENS_GENRES};
use map_core::{Domain, GenreSet, InteractionRecord};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ML_USERS: usize = 943;
pub const ML_ITEMS: usize = 1682;
pub const ML_RATINGS: usize = 100_000;

/// Users whose id is a multiple of ten get fewer than 19 ratings.
pub fn ml_sparse_user(user: usize) -> bool {
    user % 10 == 0
}

/// Writes `u.data` and `u.item` with the MovieLens 100k shape: 943 users,
/// 1682 items, 100,000 ratings. Returns the number of users with at least
/// 19 ratings.
pub fn write_synthetic_movielens(dir: &Path) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(100_000);
    let mut items = String::new();
    for i in 1..=ML_ITEMS {
        let mut flags = [0u8; 19];
        let n = rng.random_range(1..=3);
        for g in sample(&mut rng, 18, n).iter() {
            flags[g + 1] = 1;
        }
        let flags: Vec<String> = flags.iter().map(|f| f.to_string()).collect();
        let year = 1930 + i % 68;
        let _ = writeln!(
            items,
            "{i}|Synthetic Film {i} ({year})|01-Jan-{year}||http://example.invalid/{i}|{}",
            flags.join("|")
        );
    }

    let mut counts = vec![0usize; ML_USERS + 1];
    let mut assigned = 0;
    for (u, count) in counts.iter_mut().enumerate().skip(1) {
        if ml_sparse_user(u) {
            *count = rng.random_range(5..=18);
            assigned += *count;
        }
    }
    let dense: Vec<usize> = (1..=ML_USERS).filter(|u| !ml_sparse_user(*u)).collect();
    let remaining = ML_RATINGS - assigned;
    for (i, u) in dense.iter().enumerate() {
        counts[*u] = remaining / dense.len() + usize::from(i < remaining % dense.len());
    }

    let mut data = String::with_capacity(ML_RATINGS * 24);
    for (u, count) in counts.iter().enumerate().skip(1) {
        let mut ts: i64 = 874_724_710 + rng.random_range(0..10_000_000);
        for item in sample(&mut rng, ML_ITEMS, *count).iter() {
            // about one in eight ratings shares the previous timestamp
            if rng.random_range(0..8) != 0 {
                ts += rng.random_range(1..5_000);
            }
            let _ = writeln!(data, "{u}\t{}\t{}\t{ts}", item + 1, rng.random_range(1..=5));
        }
    }
    fs::write(dir.join("u.item"), items).unwrap();
    fs::write(dir.join("u.data"), data).unwrap();
    counts.iter().skip(1).filter(|c| **c >= 19).count()
}

pub struct AmazonFixture {
    pub movies_ratings: std::path::PathBuf,
    pub movies_meta: std::path::PathBuf,
    pub books_ratings: std::path::PathBuf,
    pub books_meta: std::path::PathBuf,
    /// Users expected to survive cross-domain preparation.
    pub expected_users: usize,
}

/// Amazon-style ratings and metadata for movies and books. Some users have
/// too few movies, some have no book, and some items lack metadata or
/// categories.
pub fn write_synthetic_amazon(dir: &Path, users: usize) -> AmazonFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(533);
    let movie_genres = ["Drama", "Comedy", "Action", "Horror", "Romance", "Documentary"];
    let book_genres = ["Fantasy", "Mystery", "Romance", "History", "Science Fiction"];
    let (n_movies, n_books) = (400, 300);

    let mut mm = String::new();
    for i in 0..n_movies {
        match i % 25 {
            0 => continue, // no metadata line at all
            1 => {
                let _ = writeln!(mm, r#"{{"asin":"M{i:05}","title":"Bare {i}","category":[]}}"#);
            }
            _ => {
                let g1 = movie_genres[i % movie_genres.len()];
                let g2 = movie_genres[(i / 7) % movie_genres.len()];
                let _ = writeln!(
                    mm,
                    r#"{{"asin":"M{i:05}","title":"Movie {i}","category":["Movies & TV","{g1}","{g2}"]}}"#
                );
            }
        }
    }
    let mut bm = String::new();
    for i in 0..n_books {
        let g = book_genres[i % book_genres.len()];
        let _ = writeln!(
            bm,
            r#"{{"asin":"B{i:05}","title":"Book {i}","categories":[["Books","{g}"]]}}"#
        );
    }

    let usable_movie = |i: usize| i % 25 > 1;
    let mut mr = String::new();
    let mut br = String::new();
    let mut expected = 0;
    for u in 0..users {
        let user = format!("A{u:06}");
        let n = if u % 7 == 0 { rng.random_range(5..18) } else { rng.random_range(18..40) };
        let mut usable = 0;
        for (j, item) in sample(&mut rng, n_movies, n).iter().enumerate() {
            usable += usize::from(usable_movie(item));
            let _ = writeln!(mr, "M{item:05},{user},{}.0,{}", rng.random_range(1..=5), 1_300_000_000 + j * 86_400);
        }
        let has_book = u % 5 != 0;
        if has_book {
            for b in 0..rng.random_range(1..4) {
                let item = rng.random_range(0..n_books);
                let _ = writeln!(br, "B{item:05},{user},{}.0,{}", rng.random_range(1..=5), 1_400_000_000 + b * 3_600);
            }
        }
        if usable >= 18 && has_book {
            expected += 1;
        }
    }
    let f = AmazonFixture {
        movies_ratings: dir.join("Movies_and_TV.csv"),
        movies_meta: dir.join("meta_Movies_and_TV.json"),
        books_ratings: dir.join("Books.csv"),
        books_meta: dir.join("meta_Books.json"),
        expected_users: expected,
    };
    fs::write(&f.movies_ratings, mr).unwrap();
    fs::write(&f.movies_meta, mm).unwrap();
    fs::write(&f.books_ratings, br).unwrap();
    fs::write(&f.books_meta, bm).unwrap();
    f
}

fn record(user: &str, idx: usize, domain: Domain, genres: GenreSet, rating: f64) -> InteractionRecord {
    let prefix = if domain == Domain::Book { "b" } else { "m" };
    InteractionRecord {
        record_id: format!("{user}:{prefix}{idx:02}"),
        item_id: format!("{user}-{prefix}{idx}"),
        title: format!("Item {idx}"),
        domain,
        genres,
        description: String::new(),
        rating,
        timestamp: 1_000 + idx as i64,
    }
}

/// Users with 19 movies (and a book target) whose ratings all equal `rating`.
pub fn constant_users(n: usize, rating: f64) -> Vec<PreparedUser> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    (0..n)
        .map(|u| {
            let user = format!("{}", u + 1);
            let history = (1..=19)
                .map(|i| {
                    let g = MOVIELENS_GENRES[rng.random_range(1..19)];
                    record(&user, i, Domain::Movie, GenreSet::from_labels([g]), rating)
                })
                .collect();
            let book = record(&user, 1, Domain::Book, GenreSet::from_labels(["Fantasy"]), rating);
            PreparedUser {
                user_id: user,
                history,
                cross_target: Some(book),
            }
        })
        .collect()
}

/// Users whose rating of an item is a fixed per-user function of its single
/// genre. Four genres, so same-genre history accumulates quickly.
pub fn genre_consistent_users(n: usize, seed: u64) -> Vec<PreparedUser> {
    let genres = ["Action", "Comedy", "Drama", "Horror"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|u| {
            let user = format!("g{u:03}");
            let prefs: Vec<f64> = genres.iter().map(|_| rng.random_range(1..=5) as f64).collect();
            let history = (1..=19)
                .map(|i| {
                    let g = rng.random_range(0..genres.len());
                    record(&user, i, Domain::Movie, GenreSet::from_labels([genres[g]]), prefs[g])
                })
                .collect();
            PreparedUser {
                user_id: user,
                history,
                cross_target: None,
            }
        })
        .collect()
}

/// Users with varied genres, titles and ratings.
pub fn varied_users(n: usize, seed: u64) -> Vec<PreparedUser> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|u| {
            let user = format!("v{u:03}");
            let history = (1..=19)
                .map(|i| {
                    let k = rng.random_range(1..=3);
                    let labels: Vec<&str> = sample(&mut rng, 18, k).iter().map(|g| MOVIELENS_GENRES[g + 1]).collect();
                    let mut r = record(&user, i, Domain::Movie, GenreSet::from_labels(labels), rng.random_range(1..=5) as f64);
                    r.title = format!("A Rather Long Synthetic Movie Title Number {}", rng.random_range(1..2000));
                    r
                })
                .collect();
            let book = record(&user, 1, Domain::Book, GenreSet::from_labels(["Fantasy", "Adventure"]), 4.0);
            PreparedUser {
                user_id: user,
                history,
                cross_target: Some(book),
            }
        })
        .collect()
}
