use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::io::Write;

use map_core::datasets::{write_prepared, PreparedUser};
use map_core::eval::read_report;
use map_core::{Domain, GenreSet, InteractionRecord};

const GENRES: [&str; 4] = ["Comedy", "Drama", "Horror", "Sci-Fi"];

fn record(user: usize, i: usize, domain: Domain) -> InteractionRecord {
    let tag = if domain == Domain::Book { "b" } else { "m" };
    InteractionRecord {
        record_id: format!("{user}:{tag}{:02}", i + 1),
        item_id: format!("{user}-{tag}{i}"),
        title: format!("Title {user} {i}"),
        domain,
        genres: GenreSet::from_labels([GENRES[(user + i) % 4]]),
        description: String::new(),
        rating: ((user + i) % 5 + 1) as f64,
        timestamp: 1000 + i as i64,
    }
}

fn users(n: usize, with_target: bool) -> Vec<PreparedUser> {
    (0..n)
        .map(|u| PreparedUser {
            user_id: u.to_string(),
            history: (0..if with_target { 18 } else { 19 }).map(|i| record(u, i, Domain::Movie)).collect(),
            cross_target: with_target.then(|| record(u, 0, Domain::Book)),
        })
        .collect()
}

fn map(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_map"))
        .current_dir(dir)
        .env_remove("MAP_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

fn only_report(dir: &Path) -> std::path::PathBuf {
    let reports: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    assert_eq!(reports.len(), 1, "{reports:?}");
    reports[0].clone()
}

#[test]
fn eval_single_with_constant_stub_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    write_prepared(dir.path().join("data/prepared/movielens.jsonl"), &users(4, false)).unwrap();
    let out = map(dir.path(), &["eval", "single", "--recommender", "map", "--stub", "constant:3"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));

    let path = only_report(&dir.path().join("reports"));
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    let mae = doc["mae_by_size"].as_object().unwrap();
    assert_eq!(mae.len(), 18);
    assert!(mae.values().all(|v| v.as_f64().is_some()));

    let report = read_report(&path).unwrap();
    assert_eq!(report.traces.len(), 4 * 18);
    assert_eq!(report.gateway, "stub:constant:3");
    for ext in ["csv", "svg"] {
        assert!(path.with_extension(ext).is_file(), "{ext}");
    }
}

#[test]
fn eval_cross_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let users_file = dir.path().join("amazon.jsonl");
    write_prepared(&users_file, &users(3, true)).unwrap();
    let users_arg = users_file.to_str().unwrap();
    for (rec, out_dir) in [("baseline", "base"), ("map", "map")] {
        let out = map(
            dir.path(),
            &["eval", "cross", "--recommender", rec, "--stub", "echo-mean", "--users", users_arg, "--seeds", "1,2", "--out", out_dir],
        );
        assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    }
    let base = only_report(&dir.path().join("base"));
    let cand = only_report(&dir.path().join("map"));
    assert_eq!(read_report(&cand).unwrap().traces.len(), 3 * 18 * 3);

    let out = map(dir.path(), &["compare", base.to_str().unwrap(), cand.to_str().unwrap(), "--sizes", "5,10"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("Vanilla GPT"), "{table}");
    assert!(table.contains("Improvement"), "{table}");
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = map(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("Usage"));

    let out = map(dir.path(), &["eval", "single", "--recommender", "map", "--stub", "random"]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));

    std::fs::write(dir.path().join("bad.toml"), "[retrieval]\nk = 3\nbogus = 1\n").unwrap();
    let out = map(dir.path(), &["--config", "bad.toml", "compare", "a", "b"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out).contains("bad.toml:3:"), "{}", text(&out));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = map(dir.path(), &["eval", "single", "--recommender", "map", "--stub", "constant:3"]);
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    let out = map(dir.path(), &["prepare", "--dataset", "movielens", "--dir", "missing"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn prepare_movielens() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("ml-100k");
    std::fs::create_dir(&raw).unwrap();
    let mut genre_flags = vec!["0"; 19];
    genre_flags[5] = "1";
    let items: String = (1..=25)
        .map(|i| format!("{i}|Movie {i} (1995)|01-Jan-1995||http://x|{}\n", genre_flags.join("|")))
        .collect();
    std::fs::write(raw.join("u.item"), items).unwrap();
    let mut data = String::new();
    for user in 1..=3 {
        let n = if user == 3 { 10 } else { 20 };
        for item in 1..=n {
            data.push_str(&format!("{user}\t{item}\t{}\t{}\n", item % 5 + 1, 880000000 + item));
        }
    }
    std::fs::write(raw.join("u.data"), data).unwrap();

    let out = map(dir.path(), &["prepare", "--dataset", "movielens", "--dir", "ml-100k"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(text(&out).contains("2 users, 38 records"), "{}", text(&out));
    let prepared = map_core::datasets::read_prepared(dir.path().join("data/prepared/movielens.jsonl")).unwrap();
    assert_eq!(prepared.len(), 2);
    assert!(prepared.iter().all(|u| u.history.len() == 19));
    assert!(dir.path().join("data/prepared/movielens.catalog.json").is_file());
}

#[test]
fn terminal_session_prints_one_event_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_map"))
        .current_dir(dir.path())
        .args(["session", "--user", "alice", "--stub", "constant:4"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"I rate Dune 4/5\n\nRecommend me something like \"Dune (Sci-Fi)\"\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let events: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(events.len(), 2);
    assert_eq!(events[0]["classified_type"], "B");
    assert_eq!(events[1]["classified_type"], "A");
    assert_eq!(events[1]["profile_revision_after"], 1);
}
