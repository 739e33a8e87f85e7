//! Deterministic offline backends.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{request_hash, BackendReply, ChatBackend, CompletionRequest, GatewayError};
use crate::prompting::format_rating;
use crate::types::normalize_label;

/// Neutral reply when a policy has nothing to average.
const MIDPOINT: f64 = 3.0;

/// Request-hash keyed replies, loaded from a JSON-lines file of
/// `{"request_hash": "...", "reply": "..."}` objects. Later lines win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayTable {
    replies: HashMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ReplayLine {
    request_hash: String,
    reply: String,
}

impl ReplayTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, request_hash: impl Into<String>, reply: impl Into<String>) {
        self.replies.insert(request_hash.into(), reply.into());
    }

    pub fn get(&self, request_hash: &str) -> Option<&str> {
        self.replies.get(request_hash).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: ReplayLine = serde_json::from_str(line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            table.insert(l.request_hash, l.reply);
        }
        Ok(table)
    }

    /// Writes entries sorted by hash.
    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut keys: Vec<_> = self.replies.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let line = ReplayLine {
                request_hash: k.clone(),
                reply: self.replies[k].clone(),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        fs::write(path, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StubPolicy {
    /// Always replies with this rating.
    Constant(f64),
    /// Replies with the mean of the ratings the prompt exposes.
    EchoMeanOfMemory,
    /// Looks the request up in a replay table; a miss is an error.
    Scripted(ReplayTable),
    /// Replies with the mean preference over the target's genres.
    GenreOracle(HashMap<String, f64>),
}

impl StubPolicy {
    pub fn genre_oracle<I, S>(prefs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        StubPolicy::GenreOracle(
            prefs
                .into_iter()
                .map(|(g, r)| (normalize_label(g.as_ref()), r))
                .collect(),
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            StubPolicy::Constant(_) => "stub:constant",
            StubPolicy::EchoMeanOfMemory => "stub:echo_mean",
            StubPolicy::Scripted(_) => "stub:scripted",
            StubPolicy::GenreOracle(_) => "stub:genre_oracle",
        }
    }
}

/// Keeps up to four decimals but at least one: `3.0`, `3.6667`.
fn format_mean(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0');
    if s.ends_with('.') {
        format!("{s}0")
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct StubBackend {
    policy: StubPolicy,
}

impl StubBackend {
    pub fn new(policy: StubPolicy) -> Self {
        Self { policy }
    }

    pub fn policy(&self) -> &StubPolicy {
        &self.policy
    }
}

impl ChatBackend for StubBackend {
    fn name(&self) -> &str {
        self.policy.name()
    }

    fn send(&self, request: &CompletionRequest) -> Result<BackendReply, GatewayError> {
        let text = match &self.policy {
            StubPolicy::Constant(v) => format_rating(*v),
            StubPolicy::EchoMeanOfMemory => {
                let r = &request.hints.memory_ratings;
                if r.is_empty() {
                    format_mean(MIDPOINT)
                } else {
                    format_mean(r.iter().sum::<f64>() / r.len() as f64)
                }
            }
            StubPolicy::Scripted(table) => {
                let hash = request_hash(request);
                table
                    .get(&hash)
                    .ok_or(GatewayError::ReplayExhausted(hash.clone()))?
                    .to_string()
            }
            StubPolicy::GenreOracle(prefs) => {
                let known: Vec<f64> = request
                    .hints
                    .target_genres
                    .iter()
                    .filter_map(|g| prefs.get(g).copied())
                    .collect();
                if known.is_empty() {
                    format_mean(MIDPOINT)
                } else {
                    format_mean(known.iter().sum::<f64>() / known.len() as f64)
                }
            }
        };
        Ok(BackendReply { text, usage: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, StubHints};
    use crate::prompting::PromptBuilder;
    use crate::types::GenreSet;

    fn req(query: &str, hints: StubHints) -> CompletionRequest {
        CompletionRequest::new(PromptBuilder::default().detection(query).unwrap(), "t").with_hints(hints)
    }

    #[test]
    fn echo_mean_of_memory() {
        let gw = Gateway::stub(StubPolicy::EchoMeanOfMemory);
        let hints = StubHints {
            memory_ratings: vec![2.0, 4.0],
            ..Default::default()
        };
        assert_eq!(gw.complete(&req("x", hints)).unwrap().text, "3.0");
        let hints = StubHints {
            memory_ratings: vec![4.0, 4.0, 3.0],
            ..Default::default()
        };
        assert_eq!(gw.complete(&req("x", hints)).unwrap().text, "3.6667");
        assert_eq!(gw.complete(&req("x", StubHints::default())).unwrap().text, "3.0");
    }

    #[test]
    fn scripted_is_deterministic_and_strict() {
        let known = req("known", StubHints::default());
        let mut table = ReplayTable::new();
        table.insert(request_hash(&known), "B");
        let gw = Gateway::stub(StubPolicy::Scripted(table));
        let a = gw.complete(&known).unwrap();
        let b = gw.complete(&known).unwrap();
        assert_eq!(a.text, "B");
        assert_eq!((a.text, a.prompt_tokens), (b.text, b.prompt_tokens));
        assert!(matches!(
            gw.complete(&req("other", StubHints::default())),
            Err(GatewayError::ReplayExhausted(_))
        ));
    }

    #[test]
    fn genre_oracle_averages_known_genres() {
        let gw = Gateway::stub(StubPolicy::genre_oracle([("Comedy", 5.0), ("Drama", 2.0)]));
        let hints = StubHints {
            target_genres: GenreSet::from_labels(["comedy", "drama", "war"]),
            ..Default::default()
        };
        assert_eq!(gw.complete(&req("x", hints)).unwrap().text, "3.5");
    }

    #[test]
    fn replay_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let mut t = ReplayTable::new();
        t.insert("abc", "4");
        t.insert("def", "A");
        t.save(&path).unwrap();
        assert_eq!(ReplayTable::load(&path).unwrap(), t);
    }
}
