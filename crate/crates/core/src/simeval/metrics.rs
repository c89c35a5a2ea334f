use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EpisodeResult;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no episode results to summarize")]
    EmptyResults,
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub recall_at_1: f64,
    pub mrr: f64,
    pub decision_error_rate: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub recall_at_1: f64,
    pub mrr: f64,
    /// Worse decisions over all decisions, pooled across episodes.
    pub decision_error_rate: f64,
    pub episodes: usize,
    pub decisions: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldMetrics>,
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Result<RunSummary, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let n = results.len() as f64;
    let correct = results.iter().filter(|r| r.answered_correctly()).count();
    let rr_sum: f64 = results.iter().map(|r| r.rr).sum();
    let decisions: usize = results.iter().map(|r| r.decisions.len()).sum();
    let worse: usize = results.iter().map(EpisodeResult::worse_decisions).sum();
    Ok(RunSummary {
        recall_at_1: correct as f64 / n,
        mrr: rr_sum / n,
        decision_error_rate: if decisions == 0 {
            0.0
        } else {
            worse as f64 / decisions as f64
        },
        episodes: results.len(),
        decisions,
        folds: Vec::new(),
    })
}

/// Overall metrics over every fold plus one entry per fold.
pub fn summarize_folds(by_fold: &[(usize, Vec<EpisodeResult>)]) -> Result<RunSummary, MetricsError> {
    let all: Vec<EpisodeResult> = by_fold.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let mut summary = compute_metrics(&all)?;
    for (fold, results) in by_fold {
        if results.is_empty() {
            continue;
        }
        let m = compute_metrics(results)?;
        summary.folds.push(FoldMetrics {
            fold: *fold,
            recall_at_1: m.recall_at_1,
            mrr: m.mrr,
            decision_error_rate: m.decision_error_rate,
            episodes: m.episodes,
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub mean_difference: f64,
    /// Fewer than two pairs: no resampling power, p is reported as 1.
    pub degenerate: bool,
}

/// Two-sided paired bootstrap on the mean of `a - b`.
///
/// The differences are centred on zero (the null) and resampled with
/// replacement; the p-value is `(1 + #{|mean*| >= |observed|}) / (1 + n_resamples)`.
pub fn significance_test(
    a: &[f64],
    b: &[f64],
    n_resamples: usize,
    seed: u64,
) -> Result<SignificanceResult, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let observed = diffs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Ok(SignificanceResult {
            p_value: 1.0,
            mean_difference: observed,
            degenerate: true,
        });
    }
    let centred: Vec<f64> = diffs.iter().map(|d| d - observed).collect();
    let threshold = observed.abs() - 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..n_resamples {
        let mut s = 0.0;
        for _ in 0..n {
            s += centred[rng.random_range(0..n)];
        }
        if (s / n as f64).abs() >= threshold {
            extreme += 1;
        }
    }
    Ok(SignificanceResult {
        p_value: (1 + extreme) as f64 / (1 + n_resamples) as f64,
        mean_difference: observed,
        degenerate: false,
    })
}
