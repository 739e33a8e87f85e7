//! Memory-assisted personalized recommendation.
//!
//! Each user's interaction history is kept as an append-only profile
//! ([`profile`]). For a rating request the most similar stored records are
//! scored ([`similarity`]), ranked and truncated ([`retrieval`]), and injected
//! into an LLM prompt ([`prompting`]) sent through a [`gateway`]. The
//! [`session`] engine routes live queries; [`datasets`] and [`eval`] run the
//! offline growing-history protocols against a flat-history baseline.

pub mod datasets;
pub mod embedding;
pub mod eval;
pub mod gateway;
pub mod profile;
pub mod prompting;
pub mod retrieval;
pub mod retry;
pub mod session;
pub mod similarity;
pub mod types;

pub use embedding::{EmbeddingProvider, EmbeddingVector, TrigramProvider};
pub use gateway::{CompletionRequest, CompletionResult, Gateway, PriceTable, StubPolicy};
pub use profile::{ProfileStore, StoreError, UserProfile};
pub use prompting::{PromptBuilder, PromptBundle};
pub use retrieval::{rank_all, retrieve_memory, RetrievalConfig, ScoredMemory};
pub use similarity::SimilarityStrategy;
pub use types::{Domain, GenreSet, InteractionRecord, TargetItem};
