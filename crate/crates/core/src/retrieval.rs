//! Memory retrieval: score every stored record against the target and keep
//! the top `k`.
//!
//! Ordering is score descending, then timestamp descending (most recent
//! first), then `record_id` ascending. The key depends only on record
//! contents, so the output is independent of input order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::similarity::{SimilarityError, SimilarityStrategy};
use crate::types::{Domain, InteractionRecord, TargetItem};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredMemory {
    pub record: InteractionRecord,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct RetrievalConfig {
    pub k: usize,
    pub strategy: SimilarityStrategy,
    pub domain_filter: Option<Domain>,
    /// Records scoring below this are dropped. Off by default.
    pub min_score: Option<f64>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            strategy: SimilarityStrategy::GenreOverlap,
            domain_filter: None,
            min_score: None,
        }
    }
}

impl RetrievalConfig {
    pub fn with_k(k: usize, strategy: SimilarityStrategy) -> Self {
        Self {
            k,
            strategy,
            ..Self::default()
        }
    }
}

/// Total order used for ranked memory.
pub fn memory_order(a: &ScoredMemory, b: &ScoredMemory) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.record.timestamp.cmp(&a.record.timestamp))
        .then_with(|| a.record.record_id.cmp(&b.record.record_id))
}

pub fn retrieve_memory(
    records: &[InteractionRecord],
    target: &TargetItem,
    config: &RetrievalConfig,
) -> Result<Vec<ScoredMemory>, SimilarityError> {
    if records.is_empty() || config.k == 0 {
        return Ok(Vec::new());
    }
    let scorer = config.strategy.scorer(target)?;
    let mut scored = Vec::with_capacity(records.len());
    for record in records {
        if config
            .domain_filter
            .as_ref()
            .is_some_and(|d| &record.domain != d)
        {
            continue;
        }
        // +0.0 folds -0.0 into 0.0 so equal scores tie under total_cmp
        let score = scorer.score(record)? + 0.0;
        if config.min_score.is_some_and(|m| score < m) {
            continue;
        }
        scored.push(ScoredMemory {
            record: record.clone(),
            score,
        });
    }
    scored.sort_by(memory_order);
    scored.truncate(config.k);
    Ok(scored)
}

/// Every record, ranked.
pub fn rank_all(
    records: &[InteractionRecord],
    target: &TargetItem,
    strategy: &SimilarityStrategy,
) -> Result<Vec<ScoredMemory>, SimilarityError> {
    let config = RetrievalConfig {
        k: records.len(),
        strategy: strategy.clone(),
        domain_filter: None,
        min_score: None,
    };
    retrieve_memory(records, target, &config)
}
