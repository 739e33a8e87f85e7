//! The live loop: classify each incoming message, then recommend from
//! retrieved memory (type A), store a new preference (type B), or answer
//! directly (type C).

use std::collections::HashMap;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::{Arc, LazyLock};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{ItemCatalog, MOVIELENS_GENRES};
use crate::gateway::{CompletionRequest, Gateway, GatewayError, StubHints};
use crate::profile::{ProfileStore, StoreError};
use crate::prompting::{
    format_rating, parse_rating_reply, ChatMessage, PromptBuilder, PromptBundle, PromptError,
    PromptPurpose, Role,
};
use crate::retrieval::{retrieve_memory, RetrievalConfig, ScoredMemory};
use crate::similarity::SimilarityError;
use crate::types::{normalize_label, Domain, GenreSet, InteractionRecord, TargetItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryType {
    A,
    B,
    C,
}

impl QueryType {
    /// First standalone `A`, `B` or `C` token in a detection reply.
    pub fn from_reply(reply: &str) -> Option<QueryType> {
        reply
            .split(|c: char| !c.is_ascii_alphanumeric())
            .find_map(|tok| match tok {
                "A" => Some(QueryType::A),
                "B" => Some(QueryType::B),
                "C" => Some(QueryType::C),
                _ => None,
            })
    }
}

static RECOMMEND_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(recommend\w*|suggest\w*|predict\w*|what should i (?:watch|read|see)|would i (?:like|enjoy|love|hate)|how would i rate|will i (?:like|enjoy)|something (?:like|similar)|any good (?:movies?|books?|films?))\b",
    )
    .unwrap()
});
static FIRST_PERSON_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(i|i'd|i've|i'm|my|me)\b").unwrap());
static RATING_EXPR_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(\d+(?:\.\d+)?)\s*(?:/\s*5\b|out of (?:5|five)\b|stars?\b)").unwrap()
});
static PREFERENCE_VERB_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(rate|rated|rating|watched|read|saw|seen|finished|loved|liked|enjoyed|hated|disliked|give|gave)\b").unwrap()
});

/// Deterministic fallback classifier: recommendation verbs win, then
/// first-person rating statements, everything else is unrelated.
pub fn classify_rules(text: &str) -> QueryType {
    if RECOMMEND_RE.is_match(text) {
        return QueryType::A;
    }
    let first_person = FIRST_PERSON_RE.is_match(text);
    if first_person && (RATING_EXPR_RE.is_match(text) || PREFERENCE_VERB_RE.is_match(text)) {
        return QueryType::B;
    }
    QueryType::C
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub query_type: QueryType,
    pub via_fallback: bool,
}

/// Asks the LLM for the query type; any failure or unreadable reply falls
/// back to [`classify_rules`].
pub fn classify_query(
    query: &str,
    gateway: &Gateway,
    prompts: &PromptBuilder,
    tag: &str,
) -> Result<Classification, PromptError> {
    let bundle = prompts.detection(query)?;
    let reply = gateway.complete(&CompletionRequest::new(bundle, tag));
    let parsed = match &reply {
        Ok(r) => QueryType::from_reply(&r.text),
        Err(e) => {
            tracing::warn!(error = %e, "detection call failed, using rules");
            None
        }
    };
    Ok(match parsed {
        Some(query_type) => Classification {
            query_type,
            via_fallback: false,
        },
        None => Classification {
            query_type: classify_rules(query),
            via_fallback: true,
        },
    })
}

// ---- item extraction -------------------------------------------------------

static QUOTED_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"["“]([^"”]+)["”]"#).unwrap());
static PAREN_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\(([^)]*)\)").unwrap());
static RATE_TITLE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:rate|rated|give|gave)\s+(.+?)\s+(?:a\s+|an\s+)?\d+(?:\.\d+)?\b").unwrap()
});
static VERB_TITLE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:watched|read|saw|seen|finished|loved|liked|enjoyed|hated|disliked)\s+(.+?)(?:\s+and\b|\s+but\b|\s+it\b|\s+(?:yesterday|today|tonight|last|again|recently)\b|,|\.\s|\.$|!|;|\?|\s+-|\s+\(|\s+\d|$)").unwrap()
});
static ASK_TITLE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:would i (?:like|enjoy|love|hate)|how would i rate|will i (?:like|enjoy)|should i (?:watch|read|see)|predict my rating for|rate)\s+(?:the (?:movie|film|book)\s+)?(.+?)(?:\?|\s+\(|$|,)").unwrap()
});
static BOOK_HINT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(book|books|novel|novels|read|reading)\b").unwrap());

/// Free-text genre words mapped to canonical labels.
static GENRE_WORDS: LazyLock<Vec<(Regex, &'static str)>> = LazyLock::new(|| {
    let mut pairs: Vec<(String, &'static str)> = MOVIELENS_GENRES
        .iter()
        .filter(|g| **g != "unknown")
        .map(|g| (regex::escape(&g.to_lowercase()), *g))
        .collect();
    let synonyms: [(&str, &'static str); 16] = [
        (r"sci[- ]?fi|science fiction", "Sci-Fi"),
        ("comedies|funny", "Comedy"),
        ("thrillers", "Thriller"),
        ("horrors|scary", "Horror"),
        ("romantic|romances|rom-com", "Romance"),
        ("mysteries", "Mystery"),
        ("dramas", "Drama"),
        ("westerns", "Western"),
        ("animated|cartoons?", "Animation"),
        ("kids|children|family", "Children's"),
        ("musicals", "Musical"),
        ("documentaries", "Documentary"),
        ("noir", "Film-Noir"),
        ("action-packed", "Action"),
        ("adventures", "Adventure"),
        ("fantasies", "Fantasy"),
    ];
    pairs.extend(synonyms.iter().map(|(p, g)| (p.to_string(), *g)));
    pairs
        .into_iter()
        .map(|(p, g)| (Regex::new(&format!(r"(?i)\b(?:{p})\b")).unwrap(), g))
        .collect()
});

const PRONOUNS: [&str; 6] = ["it", "this", "that", "them", "one", "something"];

fn clean_title(raw: &str) -> Option<String> {
    let t = raw
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '“' || c == '”')
        .trim_end_matches(['.', '!', '?', ','])
        .trim();
    let t = t
        .strip_prefix("the movie ")
        .or_else(|| t.strip_prefix("the book "))
        .or_else(|| t.strip_prefix("the film "))
        .unwrap_or(t)
        .trim();
    if t.is_empty() || PRONOUNS.contains(&t.to_lowercase().as_str()) {
        None
    } else {
        Some(t.to_string())
    }
}

fn genres_in_text(text: &str) -> GenreSet {
    GENRE_WORDS
        .iter()
        .filter(|(re, _)| re.is_match(text))
        .map(|(_, g)| *g)
        .collect()
}

fn paren_genres(text: &str) -> GenreSet {
    PAREN_RE
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .filter(|inner| !inner.trim().chars().all(|c| c.is_ascii_digit()))
        .flat_map(|inner| {
            inner
                .split([',', '/', '|'])
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .collect()
}

fn slug(title: &str) -> String {
    let s: String = normalize_label(title)
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '-' })
        .collect();
    let s = s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-");
    format!("title:{s}")
}

fn sentiment_rating(text: &str) -> Option<f64> {
    let lower = text.to_lowercase();
    [("loved", 5.0), ("hated", 1.0), ("disliked", 2.0), ("enjoyed", 4.0), ("liked", 4.0)]
        .iter()
        .find(|(w, _)| Regex::new(&format!(r"\b{w}\b")).unwrap().is_match(&lower))
        .map(|(_, r)| *r)
}

/// Fields pulled out of a preference statement.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedPreference {
    pub item_id: String,
    pub title: String,
    pub genres: GenreSet,
    pub domain: Domain,
    pub rating: f64,
}

fn resolve(title: Option<String>, genres: GenreSet, text: &str, catalog: Option<&ItemCatalog>) -> Option<(String, String, GenreSet, Domain)> {
    let mut domain = if BOOK_HINT_RE.is_match(text) {
        Domain::Book
    } else {
        Domain::Movie
    };
    let title = title?;
    if let Some(entry) = catalog.and_then(|c| c.find_by_title(&title)) {
        domain = entry.domain.clone();
        let genres = if genres.is_empty() { entry.genres.clone() } else { genres };
        return Some((entry.item_id.clone(), entry.title.clone(), genres, domain));
    }
    Some((slug(&title), title, genres, domain))
}

/// Pattern-based extraction of a rated item from a type-B message, e.g.
/// `I rate Inception 5/5`, `I watched "Up" (animation) and I'd give it 4/5`.
pub fn extract_preference(text: &str, catalog: Option<&ItemCatalog>) -> Option<ExtractedPreference> {
    let rating = RATING_EXPR_RE
        .captures_iter(text)
        .filter_map(|c| c[1].parse::<f64>().ok())
        .find(|r| (1.0..=5.0).contains(r))
        .or_else(|| {
            RATE_TITLE_RE
                .captures(text)
                .and_then(|c| {
                    let m = c.get(0)?.as_str();
                    m.rsplit(|ch: char| ch.is_whitespace()).next()?.parse::<f64>().ok()
                })
                .filter(|r| (1.0..=5.0).contains(r))
        })
        .or_else(|| sentiment_rating(text))?;

    let title = QUOTED_RE
        .captures(text)
        .and_then(|c| clean_title(&c[1]))
        .or_else(|| RATE_TITLE_RE.captures(text).and_then(|c| clean_title(&c[1])))
        .or_else(|| VERB_TITLE_RE.captures(text).and_then(|c| clean_title(&c[1])));
    let (item_id, title, genres, domain) = resolve(title, paren_genres(text), text, catalog)?;
    Some(ExtractedPreference {
        item_id,
        title,
        genres,
        domain,
        rating,
    })
}

/// Extraction of the target item from a type-A message. Succeeds when a
/// title or at least one genre can be identified.
pub fn extract_target(text: &str, catalog: Option<&ItemCatalog>) -> Option<TargetItem> {
    let title = QUOTED_RE
        .captures(text)
        .and_then(|c| clean_title(&c[1]))
        .or_else(|| ASK_TITLE_RE.captures(text).and_then(|c| clean_title(&c[1])));
    let mut genres = paren_genres(text);
    if genres.is_empty() {
        genres = genres_in_text(text);
    }
    match resolve(title, genres.clone(), text, catalog) {
        Some((item_id, title, genres, domain)) => Some(TargetItem {
            item_id,
            title,
            domain,
            genres,
            description: String::new(),
        }),
        None if !genres.is_empty() => {
            let domain = if BOOK_HINT_RE.is_match(text) { Domain::Book } else { Domain::Movie };
            Some(TargetItem {
                item_id: format!("genres:{}", genres.joined()),
                title: format!("any {} {}", genres.joined(), domain.as_str()),
                domain,
                genres,
                description: String::new(),
            })
        }
        None => None,
    }
}

// ---- engine ----------------------------------------------------------------

pub trait Clock: Send + Sync + std::fmt::Debug {
    /// Seconds since the epoch.
    fn now(&self) -> i64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs() as i64)
            .unwrap_or(0)
    }
}

/// Returns `start`, `start + 1`, ... on successive calls.
#[derive(Debug)]
pub struct SteppingClock(AtomicI64);

impl SteppingClock {
    pub fn new(start: i64) -> Self {
        Self(AtomicI64::new(start))
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> i64 {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventOutcome {
    Recommended,
    Stored,
    Answered,
    ExtractionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub event_id: String,
    pub user_id: String,
    pub query_text: String,
    pub classified_type: QueryType,
    pub classification_fallback: bool,
    pub outcome: EventOutcome,
    pub response_text: String,
    /// Retrieved memory; empty unless the query was type A.
    pub memory_used: Vec<ScoredMemory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_rating: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stored_record: Option<InteractionRecord>,
    pub profile_revision_before: u64,
    pub profile_revision_after: u64,
    pub received_at: i64,
    pub completed_at: i64,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub retrieval: RetrievalConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
        }
    }
}

const PASSTHROUGH_SYSTEM: &str = "You are a helpful assistant.";

/// Routes messages for many users. Messages for one user are handled one at
/// a time; different users run in parallel.
#[derive(Debug)]
pub struct SessionEngine {
    store: Arc<ProfileStore>,
    gateway: Arc<Gateway>,
    prompts: PromptBuilder,
    config: SessionConfig,
    catalog: Option<Arc<ItemCatalog>>,
    clock: Arc<dyn Clock>,
    user_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    next_event: AtomicU64,
}

impl SessionEngine {
    pub fn new(store: Arc<ProfileStore>, gateway: Arc<Gateway>, prompts: PromptBuilder, config: SessionConfig) -> Self {
        Self {
            store,
            gateway,
            prompts,
            config,
            catalog: None,
            clock: Arc::new(SystemClock),
            user_locks: Mutex::new(HashMap::new()),
            next_event: AtomicU64::new(1),
        }
    }

    pub fn with_catalog(mut self, catalog: Arc<ItemCatalog>) -> Self {
        self.catalog = Some(catalog);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn store(&self) -> &Arc<ProfileStore> {
        &self.store
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    fn user_lock(&self, user_id: &str) -> Arc<Mutex<()>> {
        Arc::clone(
            self.user_locks
                .lock()
                .entry(user_id.to_string())
                .or_default(),
        )
    }

    pub fn handle_query(&self, user_id: &str, text: &str) -> Result<SessionEvent, SessionError> {
        crate::types::validate_user_id(user_id).map_err(StoreError::from)?;
        if text.trim().is_empty() {
            return Err(PromptError::EmptyQuery.into());
        }
        let lock = self.user_lock(user_id);
        let _guard = lock.lock();

        let seq = self.next_event.fetch_add(1, Ordering::SeqCst);
        let event_id = format!("evt-{seq:06}");
        let received_at = self.clock.now();
        let revision_before = self.store.revision(user_id)?;
        let catalog = self.catalog.as_deref();
        let class = classify_query(text, &self.gateway, &self.prompts, &format!("{event_id}/detect"))?;

        let mut event = SessionEvent {
            event_id: event_id.clone(),
            user_id: user_id.to_string(),
            query_text: text.to_string(),
            classified_type: class.query_type,
            classification_fallback: class.via_fallback,
            outcome: EventOutcome::Answered,
            response_text: String::new(),
            memory_used: Vec::new(),
            predicted_rating: None,
            stored_record: None,
            profile_revision_before: revision_before,
            profile_revision_after: revision_before,
            received_at,
            completed_at: received_at,
        };

        match class.query_type {
            QueryType::A => match extract_target(text, catalog) {
                None => {
                    event.outcome = EventOutcome::ExtractionFailed;
                    event.response_text =
                        "I could not tell which item or genre you want a recommendation for.".into();
                }
                Some(target) => {
                    let records = self.store.read_profile(user_id, None)?;
                    let memory = retrieve_memory(&records, &target, &self.config.retrieval)?;
                    let bundle = self.prompts.recommendation(&target, &memory);
                    let hints = StubHints {
                        memory_ratings: memory.iter().map(|m| m.record.rating).collect(),
                        target_genres: target.genres.clone(),
                    };
                    let request = CompletionRequest::new(bundle, format!("{event_id}/recommend")).with_hints(hints);
                    let reply = self.gateway.complete(&request)?;
                    event.predicted_rating = parse_rating_reply(&reply.text).ok();
                    event.response_text = reply.text;
                    event.memory_used = memory;
                    event.outcome = EventOutcome::Recommended;
                }
            },
            QueryType::B => match extract_preference(text, catalog) {
                None => {
                    event.outcome = EventOutcome::ExtractionFailed;
                    event.response_text = "I could not find an item and a rating in that message.".into();
                }
                Some(pref) => {
                    let record = InteractionRecord {
                        record_id: format!("{user_id}:s{:06}", revision_before + 1),
                        item_id: pref.item_id,
                        title: pref.title,
                        domain: pref.domain,
                        genres: pref.genres,
                        description: String::new(),
                        rating: pref.rating,
                        timestamp: received_at,
                    };
                    let revision = self.store.append_record(user_id, record.clone())?;
                    event.profile_revision_after = revision;
                    // the write above is final; the acknowledgment never retries it
                    let ack = CompletionRequest::new(self.prompts.update_ack(&record), format!("{event_id}/update_ack"));
                    event.response_text = match self.gateway.complete(&ack) {
                        Ok(r) => r.text,
                        Err(e) => {
                            tracing::warn!(error = %e, "ack call failed");
                            format!("Saved: {} rated {}/5.", record.title, format_rating(record.rating))
                        }
                    };
                    event.stored_record = Some(record);
                    event.outcome = EventOutcome::Stored;
                }
            },
            QueryType::C => {
                let bundle = PromptBundle::new(
                    PromptPurpose::Detect,
                    vec![
                        ChatMessage::new(Role::System, PASSTHROUGH_SYSTEM),
                        ChatMessage::new(Role::User, text),
                    ],
                );
                let reply = self
                    .gateway
                    .complete(&CompletionRequest::new(bundle, format!("{event_id}/passthrough")))?;
                event.response_text = reply.text;
            }
        }
        event.completed_at = self.clock.now();
        Ok(event)
    }
}
