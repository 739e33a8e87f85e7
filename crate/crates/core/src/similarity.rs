//! Item-to-target similarity scoring: genre-set overlap and embedding cosine.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed_text, EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::types::{GenreSet, InteractionRecord, TargetItem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("vector dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("cosine undefined for a zero vector")]
    ZeroVector,
    #[error("nothing to embed for item `{0}`")]
    NothingToEmbed(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Number of labels the two sets share.
pub fn genre_overlap_score(a: &GenreSet, b: &GenreSet) -> usize {
    a.intersection_count(b)
}

/// `dot(u, v) / (|u| |v|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if u.dimension() != v.dimension() {
        return Err(SimilarityError::DimensionMismatch(u.dimension(), v.dimension()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.values().iter().zip(v.values()) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

/// Which item fields feed the text encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedFields {
    pub title: bool,
    pub genres: bool,
    pub description: bool,
}

impl Default for EmbedFields {
    /// Genres only; description is used as a fallback when genres are empty.
    fn default() -> Self {
        Self {
            title: false,
            genres: true,
            description: false,
        }
    }
}

impl EmbedFields {
    pub fn text(&self, title: &str, genres: &GenreSet, description: &str) -> String {
        let mut parts = Vec::new();
        if self.title && !title.trim().is_empty() {
            parts.push(title.trim().to_string());
        }
        if self.genres && !genres.is_empty() {
            parts.push(genres.joined());
        }
        let use_description =
            self.description || (self.genres && genres.is_empty() && parts.is_empty());
        if use_description && !description.trim().is_empty() {
            parts.push(description.trim().to_string());
        }
        parts.join(". ")
    }
}

/// Serializable name of a strategy, used in configs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    GenreOverlap,
    EmbeddingCosine,
}

#[derive(Clone)]
pub enum SimilarityStrategy {
    GenreOverlap,
    EmbeddingCosine {
        provider: Arc<dyn EmbeddingProvider>,
        fields: EmbedFields,
    },
}

impl fmt::Debug for SimilarityStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GenreOverlap => f.write_str("GenreOverlap"),
            Self::EmbeddingCosine { provider, fields } => f
                .debug_struct("EmbeddingCosine")
                .field("provider", &provider.name())
                .field("fields", fields)
                .finish(),
        }
    }
}

impl SimilarityStrategy {
    pub fn embedding(provider: Arc<dyn EmbeddingProvider>) -> Self {
        Self::EmbeddingCosine {
            provider,
            fields: EmbedFields::default(),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            Self::GenreOverlap => StrategyKind::GenreOverlap,
            Self::EmbeddingCosine { .. } => StrategyKind::EmbeddingCosine,
        }
    }

    /// Prepares a scorer bound to one target so its embedding is computed once.
    pub fn scorer<'a>(&'a self, target: &'a TargetItem) -> Result<Scorer<'a>, SimilarityError> {
        let target_vec = match self {
            Self::GenreOverlap => None,
            Self::EmbeddingCosine { provider, fields } => {
                let text = fields.text(&target.title, &target.genres, &target.description);
                if text.trim().is_empty() {
                    return Err(SimilarityError::NothingToEmbed(target.item_id.clone()));
                }
                Some(embed_text(provider.as_ref(), &text)?)
            }
        };
        Ok(Scorer {
            strategy: self,
            target,
            target_vec,
        })
    }
}

pub struct Scorer<'a> {
    strategy: &'a SimilarityStrategy,
    target: &'a TargetItem,
    target_vec: Option<EmbeddingVector>,
}

impl Scorer<'_> {
    pub fn score(&self, item: &InteractionRecord) -> Result<f64, SimilarityError> {
        match (self.strategy, &self.target_vec) {
            (SimilarityStrategy::EmbeddingCosine { provider, fields }, Some(tv)) => {
                let text = fields.text(&item.title, &item.genres, &item.description);
                if text.trim().is_empty() {
                    return Err(SimilarityError::NothingToEmbed(item.item_id.clone()));
                }
                let iv = embed_text(provider.as_ref(), &text)?;
                cosine_similarity(&iv, tv)
            }
            _ => Ok(genre_overlap_score(&item.genres, &self.target.genres) as f64),
        }
    }
}

/// Similarity of one stored item to the target under `strategy`.
pub fn score(
    strategy: &SimilarityStrategy,
    item: &InteractionRecord,
    target: &TargetItem,
) -> Result<f64, SimilarityError> {
    strategy.scorer(target)?.score(item)
}
