use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Ranker, RankerError, RankerScores};
use crate::corpus::Candidate;
use crate::encoding::Embedder;

pub const DEFAULT_PROJECTION_DIM: usize = 64;

/// Linear projection shared by both sides of the dot product:
/// `score = (W·e(context)) · (W·e(candidate))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DotRankerParams {
    pub dim_in: usize,
    pub dim_out: usize,
    /// Row-major `dim_out × dim_in`.
    pub w: Vec<f64>,
}

impl DotRankerParams {
    pub fn zeros(dim_in: usize, dim_out: usize) -> Self {
        DotRankerParams {
            dim_in,
            dim_out,
            w: vec![0.0; dim_in * dim_out],
        }
    }

    /// Gaussian entries with variance `1/dim_out`, so the untrained projection
    /// roughly preserves inner products.
    pub fn random(dim_in: usize, dim_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim_out as f64).sqrt()).expect("valid normal");
        DotRankerParams {
            dim_in,
            dim_out,
            w: (0..dim_in * dim_out).map(|_| normal.sample(&mut rng)).collect(),
        }
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, RankerError> {
        if x.len() != self.dim_in {
            return Err(RankerError::DimensionMismatch {
                expected: self.dim_in,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim_out];
        for (col, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (row, o) in out.iter_mut().enumerate() {
                *o += self.w[row * self.dim_in + col] * xv;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub dim_out: usize,
    pub seed: u64,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        RankerTrainConfig {
            batch_size: 16,
            epochs: 5,
            learning_rate: 0.5,
            dim_out: DEFAULT_PROJECTION_DIM,
            seed: 0,
        }
    }
}

/// Mean in-batch cross-entropy and its gradient with respect to `W`.
///
/// Row `j` scores context `j` against every response in the batch; the target
/// is the response at the same index.
pub fn in_batch_loss(
    params: &DotRankerParams,
    contexts: &[Vec<f64>],
    responses: &[Vec<f64>],
) -> Result<(f64, Vec<f64>), RankerError> {
    let k = contexts.len();
    if k == 0 || responses.len() != k {
        return Err(RankerError::DimensionMismatch {
            expected: k,
            got: responses.len(),
        });
    }
    let u: Vec<Vec<f64>> = contexts
        .iter()
        .map(|x| params.project(x))
        .collect::<Result<_, _>>()?;
    let v: Vec<Vec<f64>> = responses
        .iter()
        .map(|y| params.project(y))
        .collect::<Result<_, _>>()?;

    let d = params.dim_out;
    let mut loss = 0.0;
    let mut a = vec![vec![0.0; d]; k]; // sum_k g_jk v_k
    let mut b = vec![vec![0.0; d]; k]; // sum_j g_jk u_j
    for j in 0..k {
        let s: Vec<f64> = v.iter().map(|vk| dot(&u[j], vk)).collect();
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| (x - max).exp()).sum();
        let lse = max + z.ln();
        loss += lse - s[j];
        for (i, &si) in s.iter().enumerate() {
            let p = (si - lse).exp();
            let g = (p - if i == j { 1.0 } else { 0.0 }) / k as f64;
            for t in 0..d {
                a[j][t] += g * v[i][t];
                b[i][t] += g * u[j][t];
            }
        }
    }
    loss /= k as f64;

    let mut grad = vec![0.0; params.w.len()];
    let dim_in = params.dim_in;
    for (vecs, coeffs) in [(contexts, &a), (responses, &b)] {
        for (x, c) in vecs.iter().zip(coeffs.iter()) {
            for (col, &xv) in x.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (row, &cv) in c.iter().enumerate() {
                    grad[row * dim_in + col] += cv * xv;
                }
            }
        }
    }
    Ok((loss, grad))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains the projection on `(context, positive_response)` pairs with plain
/// gradient descent on the in-batch cross-entropy. The last partial batch of
/// each epoch is dropped.
pub fn train_dot_ranker(
    pairs: &[(String, String)],
    embedder: &Embedder,
    cfg: &RankerTrainConfig,
) -> Result<DotRankerParams, RankerError> {
    if cfg.batch_size < 2 {
        return Err(RankerError::InvalidConfig(format!(
            "batch_size must be at least 2, got {}",
            cfg.batch_size
        )));
    }
    if pairs.len() < cfg.batch_size {
        return Err(RankerError::TooFewPairs {
            needed: cfg.batch_size,
            got: pairs.len(),
        });
    }
    let xs: Vec<Vec<f64>> = pairs.iter().map(|(c, _)| embedder.embed(c)).collect();
    let ys: Vec<Vec<f64>> = pairs.iter().map(|(_, r)| embedder.embed(r)).collect();
    let mut params = DotRankerParams::random(embedder.dim(), cfg.dim_out, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<Vec<f64>> = chunk.iter().map(|&i| ys[i].clone()).collect();
            let (_, grad) = in_batch_loss(&params, &bx, &by)?;
            for (w, g) in params.w.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
        }
    }
    Ok(params)
}

/// Built-in ranker: hashed TF-IDF embeddings through a trained projection.
/// Projected candidate vectors are cached by text.
#[derive(Debug)]
pub struct DotRanker {
    embedder: Arc<Embedder>,
    params: DotRankerParams,
    cache: RwLock<HashMap<String, Arc<Vec<f64>>>>,
}

#[derive(Serialize, Deserialize)]
struct DotRankerFile {
    embedder: Embedder,
    params: DotRankerParams,
}

impl DotRanker {
    pub fn new(embedder: Arc<Embedder>, params: DotRankerParams) -> Result<Self, RankerError> {
        if params.dim_in != embedder.dim() || params.w.len() != params.dim_in * params.dim_out {
            return Err(RankerError::DimensionMismatch {
                expected: embedder.dim(),
                got: params.dim_in,
            });
        }
        Ok(DotRanker {
            embedder,
            params,
            cache: RwLock::new(HashMap::new()),
        })
    }

    pub fn params(&self) -> &DotRankerParams {
        &self.params
    }

    pub fn embedder(&self) -> &Arc<Embedder> {
        &self.embedder
    }

    pub fn encode(&self, text: &str) -> Result<Arc<Vec<f64>>, RankerError> {
        if let Some(v) = self.cache.read().expect("cache lock").get(text) {
            return Ok(Arc::clone(v));
        }
        let v = Arc::new(self.params.project(&self.embedder.embed(text))?);
        self.cache
            .write()
            .expect("cache lock")
            .insert(text.to_owned(), Arc::clone(&v));
        Ok(v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&DotRankerFile {
            embedder: (*self.embedder).clone(),
            params: self.params.clone(),
        })
        .expect("ranker serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, RankerError> {
        let f: DotRankerFile =
            serde_json::from_str(s).map_err(|e| RankerError::InvalidConfig(e.to_string()))?;
        DotRanker::new(Arc::new(f.embedder), f.params)
    }
}

impl Ranker for DotRanker {
    fn score(&self, context: &str, candidates: &[Candidate]) -> Result<RankerScores, RankerError> {
        if candidates.is_empty() {
            return Err(RankerError::NoCandidates);
        }
        let q = self.params.project(&self.embedder.embed(context))?;
        let scores = candidates
            .iter()
            .map(|c| Ok((c.id, dot(&q, &self.encode(&c.text)?))))
            .collect::<Result<Vec<_>, RankerError>>()?;
        RankerScores::new(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CandidateId;
    use crate::encoding::IdfTable;

    fn embedder(docs: &[&str], dim: usize) -> Arc<Embedder> {
        Arc::new(Embedder::new(IdfTable::from_documents(docs.iter().copied()).unwrap(), dim).unwrap())
    }

    fn cand(id: u64, text: &str) -> Candidate {
        Candidate {
            id: CandidateId(id),
            text: text.into(),
            is_positive: false,
            turn_index: None,
        }
    }

    fn identity(dim: usize) -> DotRankerParams {
        let mut p = DotRankerParams::zeros(dim, dim);
        for i in 0..dim {
            p.w[i * dim + i] = 1.0;
        }
        p
    }

    #[test]
    fn identical_candidate_ranks_first() {
        let docs = ["printer driver crash", "wifi signal drops", "excel formula error", "misc"];
        let e = embedder(&docs, 512);
        let r = DotRanker::new(Arc::clone(&e), identity(512)).unwrap();
        let cands = [cand(3, "wifi signal drops"), cand(1, "printer driver crash"), cand(2, "excel formula error")];
        let s = r.score("printer driver crash", &cands).unwrap();
        // brute force: plain cosine of the embeddings
        let ctx = e.embed("printer driver crash");
        let cos: Vec<f64> = cands.iter().map(|c| dot(&ctx, &e.embed(&c.text))).collect();
        let best = (0..3).max_by(|&a, &b| cos[a].partial_cmp(&cos[b]).unwrap()).unwrap();
        assert_eq!(best, 1);
        assert_eq!(s.ranking[0], 1);
        assert!((s.scores[1].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_and_ties() {
        let e = embedder(&["a b", "c"], 16);
        let r = DotRanker::new(Arc::clone(&e), DotRankerParams::zeros(16, 4)).unwrap();
        let s = r.score("a", &[cand(7, "b")]).unwrap();
        assert_eq!(s.ranking, vec![0]);
        let s = r.score("a", &[cand(7, "b"), cand(2, "c")]).unwrap();
        assert_eq!(s.ranking, vec![1, 0]);
        assert!(matches!(r.score("a", &[]), Err(RankerError::NoCandidates)));
    }

    #[test]
    fn dimension_mismatch() {
        let e = embedder(&["a"], 16);
        assert!(matches!(
            DotRanker::new(e, DotRankerParams::zeros(32, 4)),
            Err(RankerError::DimensionMismatch { .. })
        ));
        let p = DotRankerParams::zeros(8, 2);
        assert!(p.project(&[0.0; 9]).is_err());
    }

    #[test]
    fn equal_logits_give_ln_k() {
        let k = 16;
        let p = DotRankerParams::zeros(8, 4);
        let xs: Vec<Vec<f64>> = (0..k).map(|i| vec![i as f64; 8]).collect();
        let (loss, grad) = in_batch_loss(&p, &xs, &xs).unwrap();
        assert!((loss - (k as f64).ln()).abs() < 1e-12);
        assert!((loss - 2.7726).abs() < 1e-4);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn permutation_equivariant() {
        let e = embedder(&["alpha beta", "gamma", "delta alpha"], 64);
        let r = DotRanker::new(Arc::clone(&e), DotRankerParams::random(64, 8, 3)).unwrap();
        let a = [cand(1, "alpha"), cand(2, "gamma delta"), cand(3, "beta")];
        let b = [a[2].clone(), a[0].clone(), a[1].clone()];
        let sa = r.score("alpha beta", &a).unwrap();
        let sb = r.score("alpha beta", &b).unwrap();
        for (id, s) in &sa.scores {
            let other = sb.scores.iter().find(|(j, _)| j == id).unwrap().1;
            assert_eq!(*s, other);
            assert_eq!(sa.rank_of(*id), sb.rank_of(*id));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let e = embedder(&["alpha beta", "gamma"], 16);
        let r = DotRanker::new(e, DotRankerParams::random(16, 4, 1)).unwrap();
        let back = DotRanker::from_json(&r.to_json()).unwrap();
        assert_eq!(back.params(), r.params());
        let c = [cand(1, "alpha"), cand(2, "gamma")];
        assert_eq!(r.score("beta", &c).unwrap(), back.score("beta", &c).unwrap());
    }

    #[test]
    fn training_needs_a_full_batch() {
        let e = embedder(&["a"], 16);
        let pairs = vec![("a".to_string(), "b".to_string()); 3];
        let cfg = RankerTrainConfig { batch_size: 4, ..Default::default() };
        assert!(matches!(
            train_dot_ranker(&pairs, &e, &cfg),
            Err(RankerError::TooFewPairs { needed: 4, got: 3 })
        ));
        let cfg = RankerTrainConfig { batch_size: 1, ..Default::default() };
        assert!(train_dot_ranker(&pairs, &e, &cfg).is_err());
    }
}
