use map_core::datasets::ItemCatalog;
use map_core::embedding::{EmbeddingProvider, TrigramProvider};
use map_core::prompting::parse_rating_reply;
use map_core::session::{classify_rules, extract_preference, QueryType};
use regex::Regex;

fn rows(text: &str) -> impl Iterator<Item = (String, &str)> {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| {
        let (input, expected) = l.rsplit_once('\t').expect("tab-separated row");
        (input.replace("\\n", "\n"), expected)
    })
}

/// First in-range, non-negative numeric token found by a regex scan.
fn regex_oracle(reply: &str) -> Option<f64> {
    let re = Regex::new(r"-?[0-9]+(?:\.[0-9]+)?").unwrap();
    let found = re
        .find_iter(reply)
        .filter(|m| !m.as_str().starts_with('-'))
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .find(|v| (1.0..=5.0).contains(v));
    found
}

#[test]
fn rating_reply_fixture() {
    let text = include_str!("fixtures/rating_replies.tsv");
    let mut n = 0;
    for (reply, expected) in rows(text) {
        let expected = match expected {
            "none" => None,
            v => Some(v.parse::<f64>().unwrap()),
        };
        let got = parse_rating_reply(&reply).ok();
        assert_eq!(got, expected, "reply {reply:?}");
        assert_eq!(regex_oracle(&reply), expected, "oracle on {reply:?}");
        n += 1;
    }
    assert_eq!(n, 50);
}

#[test]
fn classifier_fixture() {
    let text = include_str!("fixtures/classifier.tsv");
    let mut n = 0;
    for (message, expected) in rows(text) {
        let expected = match expected {
            "A" => QueryType::A,
            "B" => QueryType::B,
            "C" => QueryType::C,
            other => panic!("bad label {other}"),
        };
        assert_eq!(classify_rules(&message), expected, "{message}");
        n += 1;
    }
    assert_eq!(n, 30);
}

#[test]
fn preference_statements_extract() {
    let cases = [
        ("I watched Up and I'd give it 4/5", "Up", 4.0),
        ("I rate Inception 5/5", "Inception", 5.0),
        ("I rated \"The Matrix\" 4.5 stars", "The Matrix", 4.5),
        ("I loved Heat", "Heat", 5.0),
        ("I hated Cats", "Cats", 1.0),
        ("I just finished Dune, 4 out of 5", "Dune", 4.0),
        ("I saw Jaws yesterday and liked it", "Jaws", 4.0),
        ("I gave Titanic 2 stars", "Titanic", 2.0),
        ("I'd give Memento a 5", "Memento", 5.0),
    ];
    for (text, title, rating) in cases {
        let p = extract_preference(text, None).unwrap_or_else(|| panic!("{text}"));
        assert_eq!((p.title.as_str(), p.rating), (title, rating), "{text}");
    }
}

#[test]
fn catalog_resolves_titles() {
    let mut catalog = ItemCatalog::new();
    catalog.insert(map_core::datasets::ItemCatalogEntry {
        item_id: "50".into(),
        title: "Star Wars (1977)".into(),
        genres: map_core::GenreSet::from_labels(["Action", "Sci-Fi"]),
        domain: map_core::Domain::Movie,
    });
    let p = extract_preference("I rated \"star wars\" 5/5", Some(&catalog)).unwrap();
    assert_eq!(p.item_id, "50");
    assert_eq!(p.title, "Star Wars (1977)");
    assert_eq!(p.genres.joined(), "action, sci-fi");
    let q = extract_preference("I rated \"Solaris\" 3/5", Some(&catalog)).unwrap();
    assert_eq!(q.item_id, "title:solaris");
}

/// Buckets and weights computed independently from FNV-1a 64 over the
/// padded character trigrams, 256 buckets, L2-normalized.
#[test]
fn trigram_reference_vectors() {
    let provider = TrigramProvider::default();
    assert_eq!(provider.dimension(), 256);
    let cases: [(&str, &[(usize, f64)]); 3] = [
        ("ab", &[(72, 0.707106781186547), (190, 0.707106781186547)]),
        ("aaaa", &[(97, 0.408248290463863), (149, 0.408248290463863), (162, 0.816496580927726)]),
        (
            "  Sci-Fi  ",
            &[
                (36, 0.408248290463863),
                (46, 0.408248290463863),
                (119, 0.408248290463863),
                (144, 0.408248290463863),
                (229, 0.408248290463863),
                (233, 0.408248290463863),
            ],
        ),
    ];
    for (text, expected) in cases {
        let v = provider.embed_one(text);
        let nonzero: Vec<(usize, f64)> = v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, x)| (i, *x)).collect();
        assert_eq!(nonzero.len(), expected.len(), "{text}");
        for ((i, x), (ei, ex)) in nonzero.iter().zip(expected) {
            assert_eq!(i, ei, "{text}");
            assert!((x - ex).abs() < 1e-12, "{text}: {x} vs {ex}");
        }
    }
}
