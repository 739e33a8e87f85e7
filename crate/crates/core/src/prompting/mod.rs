//! Prompt construction for detection, memory-assisted recommendation,
//! update acknowledgment and the flat-history baseline, plus reply parsing.

mod reply;
mod template;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use reply::{estimate_tokens, parse_rating_reply, UnparsableReply};
pub use template::{PromptPurpose, Template, TemplateError, TemplateSet};

use crate::retrieval::ScoredMemory;
use crate::types::{GenreSet, InteractionRecord, TargetItem};

/// Framing tokens charged per chat message on top of its content.
pub const MESSAGE_OVERHEAD_TOKENS: usize = 3;

/// Appended to the last user message when a rating reply could not be parsed.
pub const RETRY_INSTRUCTION: &str = "Answer with a single number 1-5.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("query is empty")]
    EmptyQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub messages: Vec<ChatMessage>,
    pub purpose: PromptPurpose,
    pub token_estimate: usize,
}

impl PromptBundle {
    pub fn new(purpose: PromptPurpose, messages: Vec<ChatMessage>) -> Self {
        debug_assert!(messages.first().is_some_and(|m| m.role == Role::System));
        let token_estimate = bundle_tokens(&messages);
        Self {
            messages,
            purpose,
            token_estimate,
        }
    }

    /// Copy with `suffix` appended to the final message.
    pub fn with_suffix(&self, suffix: &str) -> Self {
        let mut messages = self.messages.clone();
        if let Some(last) = messages.last_mut() {
            last.content.push('\n');
            last.content.push_str(suffix);
        }
        Self::new(self.purpose, messages)
    }

    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn bundle_tokens(messages: &[ChatMessage]) -> usize {
    messages
        .iter()
        .map(|m| estimate_tokens(&m.content) + MESSAGE_OVERHEAD_TOKENS)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    SingleDomain,
    CrossDomain,
}

/// `4.0` renders as `4`, `3.5` as `3.5`.
pub fn format_rating(rating: f64) -> String {
    if (rating - rating.round()).abs() < 1e-9 {
        format!("{:.0}", rating)
    } else {
        let s = format!("{:.2}", rating);
        s.trim_end_matches('0').to_string()
    }
}

fn genre_text(genres: &GenreSet) -> String {
    if genres.is_empty() {
        "n/a".to_string()
    } else {
        genres.joined()
    }
}

/// Renders prompts from a [`TemplateSet`].
///
/// With `audit_ids` on, every history line carries its record id so tests can
/// verify which records a prompt exposed.
#[derive(Debug, Clone)]
pub struct PromptBuilder {
    templates: Arc<TemplateSet>,
    audit_ids: bool,
}

impl Default for PromptBuilder {
    fn default() -> Self {
        Self::new(Arc::new(TemplateSet::builtin()))
    }
}

impl PromptBuilder {
    pub fn new(templates: Arc<TemplateSet>) -> Self {
        Self {
            templates,
            audit_ids: false,
        }
    }

    pub fn with_audit_ids(mut self, on: bool) -> Self {
        self.audit_ids = on;
        self
    }

    pub fn audit_ids(&self) -> bool {
        self.audit_ids
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    fn tag(&self, line: String, record: &InteractionRecord) -> String {
        if self.audit_ids {
            format!("{line} [id:{}]", record.record_id)
        } else {
            line
        }
    }

    pub fn detection(&self, query: &str) -> Result<PromptBundle, PromptError> {
        if query.trim().is_empty() {
            return Err(PromptError::EmptyQuery);
        }
        let t = self.templates.get(PromptPurpose::Detect);
        Ok(PromptBundle::new(
            PromptPurpose::Detect,
            vec![
                ChatMessage::new(Role::System, t.render("system", &[])),
                ChatMessage::new(Role::User, t.render("user", &[("query", query)])),
            ],
        ))
    }

    /// Memory lines appear in the order given.
    pub fn recommendation(&self, target: &TargetItem, memory: &[ScoredMemory]) -> PromptBundle {
        let t = self.templates.get(PromptPurpose::Recommend);
        let domain = target.domain.as_str();
        let history = if memory.is_empty() {
            String::new()
        } else {
            let lines = memory
                .iter()
                .map(|m| {
                    let r = &m.record;
                    let line = t.render(
                        "memory_line",
                        &[
                            ("title", &r.title),
                            ("genres", &genre_text(&r.genres)),
                            ("rating", &format_rating(r.rating)),
                            ("domain", r.domain.as_str()),
                        ],
                    );
                    self.tag(line, r)
                })
                .collect::<Vec<_>>()
                .join("\n");
            let mut block = t.render("history", &[("lines", &lines)]);
            block.push('\n');
            block
        };
        let genres = genre_text(&target.genres);
        PromptBundle::new(
            PromptPurpose::Recommend,
            vec![
                ChatMessage::new(Role::System, t.render("system", &[("domain", domain)])),
                ChatMessage::new(
                    Role::User,
                    t.render(
                        "user",
                        &[
                            ("history", &history),
                            ("title", &target.title),
                            ("genres", &genres),
                            ("domain", domain),
                        ],
                    ),
                ),
            ],
        )
    }

    pub fn update_ack(&self, record: &InteractionRecord) -> PromptBundle {
        let t = self.templates.get(PromptPurpose::UpdateAck);
        PromptBundle::new(
            PromptPurpose::UpdateAck,
            vec![
                ChatMessage::new(Role::System, t.render("system", &[])),
                ChatMessage::new(
                    Role::User,
                    t.render(
                        "user",
                        &[
                            ("title", &record.title),
                            ("genres", &genre_text(&record.genres)),
                            ("rating", &format_rating(record.rating)),
                        ],
                    ),
                ),
            ],
        )
    }

    /// Flat, unfiltered history messages.
    ///
    /// Single-domain: history prompt, then for each past item its rating query
    /// followed by an updating prompt revealing the true rating, then the
    /// current query. Cross-domain: instruction, one message per past rating,
    /// then the query.
    pub fn baseline(
        &self,
        history: &[InteractionRecord],
        target: &TargetItem,
        mode: BaselineMode,
    ) -> PromptBundle {
        let t = self.templates.get(PromptPurpose::BaselineRecommend);
        let mut messages = Vec::with_capacity(2 * history.len() + 2);
        match mode {
            BaselineMode::SingleDomain => {
                let update = self.templates.get(PromptPurpose::BaselineUpdate);
                messages.push(ChatMessage::new(Role::System, t.render("single_system", &[])));
                for r in history {
                    let genres = genre_text(&r.genres);
                    let query = t.render("single_query", &[("title", &r.title), ("genres", &genres)]);
                    messages.push(ChatMessage::new(Role::User, self.tag(query, r)));
                    let upd = update.render(
                        "update",
                        &[
                            ("title", &r.title),
                            ("genres", &genres),
                            ("rating", &format_rating(r.rating)),
                        ],
                    );
                    messages.push(ChatMessage::new(Role::User, upd));
                }
                let genres = genre_text(&target.genres);
                messages.push(ChatMessage::new(
                    Role::User,
                    t.render("single_query", &[("title", &target.title), ("genres", &genres)]),
                ));
            }
            BaselineMode::CrossDomain => {
                let history_domain = history
                    .first()
                    .map(|r| r.domain.as_str().to_string())
                    .unwrap_or_else(|| "movie".to_string());
                let domain = target.domain.as_str();
                messages.push(ChatMessage::new(
                    Role::System,
                    t.render(
                        "cross_system",
                        &[("domain", domain), ("history_domain", &history_domain)],
                    ),
                ));
                for r in history {
                    let line = t.render(
                        "cross_history",
                        &[
                            ("title", &r.title),
                            ("genres", &genre_text(&r.genres)),
                            ("rating", &format_rating(r.rating)),
                            ("history_domain", r.domain.as_str()),
                        ],
                    );
                    messages.push(ChatMessage::new(Role::User, self.tag(line, r)));
                }
                messages.push(ChatMessage::new(
                    Role::User,
                    t.render(
                        "cross_query",
                        &[
                            ("title", &target.title),
                            ("genres", &genre_text(&target.genres)),
                            ("domain", domain),
                        ],
                    ),
                ));
            }
        }
        PromptBundle::new(PromptPurpose::BaselineRecommend, messages)
    }
}
