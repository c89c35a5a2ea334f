//! Candidate scoring and ranking.
//!
//! Rankers produce raw scores per candidate; [`RankerScores`] turns them into a
//! ranking (descending score, ties broken by ascending candidate id). The
//! built-in [`DotRanker`] scores with a dot product of projected embeddings;
//! [`BridgeRanker`] delegates to an external process.

mod bridge;
mod dot;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{Candidate, CandidateId};

pub use bridge::{BridgePool, BridgeRanker, DEFAULT_BRIDGE_TIMEOUT};
pub use dot::{
    in_batch_loss, train_dot_ranker, DotRanker, DotRankerParams, RankerTrainConfig,
    DEFAULT_PROJECTION_DIM,
};

/// Reciprocal ranks beyond this rank count as zero.
pub const RR_CUTOFF: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum RankerError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no candidates to score")]
    NoCandidates,
    #[error("candidate {0} is not in the scored list")]
    UnknownCandidateId(CandidateId),
    #[error("no positive candidate ids given")]
    NoPositives,
    #[error("non-finite score for candidate {0}")]
    NonFiniteScore(CandidateId),
    #[error("need at least {needed} training pairs, got {got}")]
    TooFewPairs { needed: usize, got: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("ranker bridge is down: {0}")]
    BridgeDown(String),
    #[error("ranker bridge protocol error: {0}")]
    Protocol(String),
    #[error("ranker bridge timed out after {0:?}")]
    Timeout(std::time::Duration),
}

/// Anything that can score candidates for a context.
pub trait Ranker: Send + Sync {
    fn score(&self, context: &str, candidates: &[Candidate]) -> Result<RankerScores, RankerError>;
}

impl<R: Ranker + ?Sized> Ranker for std::sync::Arc<R> {
    fn score(&self, context: &str, candidates: &[Candidate]) -> Result<RankerScores, RankerError> {
        (**self).score(context, candidates)
    }
}

impl<R: Ranker + ?Sized> Ranker for Box<R> {
    fn score(&self, context: &str, candidates: &[Candidate]) -> Result<RankerScores, RankerError> {
        (**self).score(context, candidates)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerScores {
    /// `(candidate_id, raw_score)` in input order.
    pub scores: Vec<(CandidateId, f64)>,
    /// Indices into `scores`, best first.
    pub ranking: Vec<usize>,
}

impl RankerScores {
    pub fn new(scores: Vec<(CandidateId, f64)>) -> Result<Self, RankerError> {
        if scores.is_empty() {
            return Err(RankerError::NoCandidates);
        }
        if let Some((id, _)) = scores.iter().find(|(_, s)| !s.is_finite()) {
            return Err(RankerError::NonFiniteScore(*id));
        }
        let mut ranking: Vec<usize> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| {
            let (ia, sa) = scores[a];
            let (ib, sb) = scores[b];
            sb.partial_cmp(&sa)
                .unwrap_or(Ordering::Equal)
                .then_with(|| ia.cmp(&ib))
        });
        Ok(RankerScores { scores, ranking })
    }

    pub fn from_parts(ids: &[CandidateId], raw: &[f64]) -> Result<Self, RankerError> {
        if ids.len() != raw.len() {
            return Err(RankerError::DimensionMismatch {
                expected: ids.len(),
                got: raw.len(),
            });
        }
        RankerScores::new(ids.iter().copied().zip(raw.iter().copied()).collect())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// 1-based rank of `id`.
    pub fn rank_of(&self, id: CandidateId) -> Option<usize> {
        self.ranking
            .iter()
            .position(|&i| self.scores[i].0 == id)
            .map(|p| p + 1)
    }

    /// `(candidate_id, score)` pairs, best first.
    pub fn ranked(&self) -> impl Iterator<Item = (CandidateId, f64)> + '_ {
        self.ranking.iter().map(move |&i| self.scores[i])
    }

    pub fn top(&self) -> (CandidateId, f64) {
        self.scores[self.ranking[0]]
    }
}

/// `1/r` for the best-ranked positive when `r <= cutoff`, otherwise 0.
pub fn reciprocal_rank(
    scores: &RankerScores,
    positive_ids: &[CandidateId],
    cutoff: usize,
) -> Result<f64, RankerError> {
    if positive_ids.is_empty() {
        return Err(RankerError::NoPositives);
    }
    let mut best = usize::MAX;
    for &id in positive_ids {
        let r = scores.rank_of(id).ok_or(RankerError::UnknownCandidateId(id))?;
        best = best.min(r);
    }
    Ok(if best <= cutoff { 1.0 / best as f64 } else { 0.0 })
}
