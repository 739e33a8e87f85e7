//! Chat-completion gateway over a remote provider or deterministic stubs,
//! with a usage ledger for cost accounting.

mod remote;
mod stub;

use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use remote::{RemoteChatBackend, RemoteChatConfig};
pub use stub::{ReplayTable, StubBackend, StubPolicy};

use crate::prompting::{estimate_tokens, PromptBundle};
use crate::types::GenreSet;

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("scripted replay has no reply for request {0}")]
    ReplayExhausted(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// Structured facts handed to stub policies alongside the prompt, so stubs
/// never need to parse prompt prose.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubHints {
    /// Ratings of every record the prompt exposes.
    pub memory_ratings: Vec<f64>,
    pub target_genres: GenreSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub bundle: PromptBundle,
    pub temperature: f64,
    pub max_reply_tokens: u32,
    pub tag: String,
    pub hints: StubHints,
}

impl CompletionRequest {
    pub fn new(bundle: PromptBundle, tag: impl Into<String>) -> Self {
        Self {
            bundle,
            temperature: 0.0,
            max_reply_tokens: 32,
            tag: tag.into(),
            hints: StubHints::default(),
        }
    }

    pub fn with_hints(mut self, hints: StubHints) -> Self {
        self.hints = hints;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.bundle.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_reply_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_reply_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// SHA-256 over the serialized message list; keys scripted replays.
pub fn request_hash(request: &CompletionRequest) -> String {
    let json = serde_json::to_vec(&request.bundle.messages).expect("messages serialize");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
    pub provider: String,
    pub latency_ms: u64,
}

/// What a backend returns; usage is `None` when the provider reports none.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub usage: Option<(u64, u64)>,
}

pub trait ChatBackend: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;
    fn send(&self, request: &CompletionRequest) -> Result<BackendReply, GatewayError>;
}

/// Dollars per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub prompt_per_million: f64,
    pub reply_per_million: f64,
}

impl Default for PriceTable {
    /// gpt-3.5-turbo list price at the time of writing; override in config.
    fn default() -> Self {
        Self {
            prompt_per_million: 0.50,
            reply_per_million: 1.50,
        }
    }
}

impl PriceTable {
    pub fn dollars(&self, prompt_tokens: u64, reply_tokens: u64) -> f64 {
        prompt_tokens as f64 * self.prompt_per_million / 1e6
            + reply_tokens as f64 * self.reply_per_million / 1e6
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub tag: String,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
    pub dollars: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub calls: u64,
    pub prompt_tokens: u64,
    pub reply_tokens: u64,
    pub dollars: f64,
}

/// Append-only usage log. Appends are atomic under concurrent calls.
#[derive(Debug, Default)]
pub struct UsageLedger {
    price_table: PriceTable,
    entries: Mutex<Vec<LedgerEntry>>,
}

impl UsageLedger {
    pub fn new(price_table: PriceTable) -> Self {
        Self {
            price_table,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn price_table(&self) -> PriceTable {
        self.price_table
    }

    pub fn record(&self, tag: &str, prompt_tokens: u64, reply_tokens: u64) -> LedgerEntry {
        let entry = LedgerEntry {
            tag: tag.to_string(),
            prompt_tokens,
            reply_tokens,
            dollars: self.price_table.dollars(prompt_tokens, reply_tokens),
        };
        self.entries.lock().push(entry.clone());
        entry
    }

    pub fn extend(&self, entries: impl IntoIterator<Item = LedgerEntry>) {
        self.entries.lock().extend(entries);
    }

    pub fn entries(&self) -> Vec<LedgerEntry> {
        self.entries.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Totals summed in tag order so the result does not depend on the
    /// interleaving of concurrent appends.
    pub fn summary(&self) -> LedgerSummary {
        summarize(&self.entries())
    }
}

pub fn summarize(entries: &[LedgerEntry]) -> LedgerSummary {
    let mut sorted: Vec<&LedgerEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| a.tag.cmp(&b.tag));
    let mut s = LedgerSummary::default();
    for e in sorted {
        s.calls += 1;
        s.prompt_tokens += e.prompt_tokens;
        s.reply_tokens += e.reply_tokens;
        s.dollars += e.dollars;
    }
    s
}

/// Total dollars per user per ten history entries.
pub fn ledger_cost_per_10_history(total_dollars: f64, users: usize, history_increment: usize) -> f64 {
    if users == 0 || history_increment == 0 {
        return 0.0;
    }
    total_dollars / users as f64 / (history_increment as f64 / 10.0)
}

#[derive(Debug)]
struct Limiter {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock();
        while *n == 0 {
            self.freed.wait(&mut n);
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock() += 1;
        self.0.freed.notify_one();
    }
}

/// Uniform completion entry point. Safe to share across threads; at most
/// `max_in_flight` backend calls run at once.
#[derive(Debug)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    ledger: UsageLedger,
    limiter: Limiter,
    max_in_flight: usize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, price_table: PriceTable, max_in_flight: usize) -> Self {
        Self {
            backend,
            ledger: UsageLedger::new(price_table),
            limiter: Limiter::new(max_in_flight),
            max_in_flight: max_in_flight.max(1),
        }
    }

    pub fn stub(policy: StubPolicy) -> Self {
        Self::new(
            Arc::new(StubBackend::new(policy)),
            PriceTable::default(),
            DEFAULT_MAX_IN_FLIGHT,
        )
    }

    pub fn provider(&self) -> &str {
        self.backend.name()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let started = Instant::now();
        let reply = {
            let _permit = self.limiter.acquire();
            self.backend.send(request)?
        };
        let (prompt_tokens, reply_tokens) = reply.usage.unwrap_or((
            request.bundle.token_estimate as u64,
            estimate_tokens(&reply.text) as u64,
        ));
        self.ledger.record(&request.tag, prompt_tokens, reply_tokens);
        Ok(CompletionResult {
            text: reply.text,
            prompt_tokens,
            reply_tokens,
            provider: self.backend.name().to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
