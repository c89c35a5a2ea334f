//! Hashed TF-IDF text embeddings.
//!
//! Tokens are lowercased alphanumeric runs. Each token is hashed with 64-bit
//! FNV-1a (offset basis `0xcbf29ce484222325`, prime `0x100000001b3`) over its
//! UTF-8 bytes and lands in bucket `hash % dim`. The bucket weight is
//! `tf * ln((1 + doc_count) / (1 + doc_freq))` and the vector is L2-normalized
//! unless it is all zero.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

pub const DEFAULT_DIM: usize = 256;
pub const MIN_DIM: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncodingError {
    #[error("cannot fit idf on an empty corpus")]
    EmptyCorpus,
    #[error("embedding dimension {0} is below the minimum of {MIN_DIM}")]
    DimTooSmall(usize),
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub doc_count: u32,
    pub doc_freq: BTreeMap<String, u32>,
}

impl IdfTable {
    /// Fits document frequencies over arbitrary documents.
    pub fn from_documents<'a, I>(docs: I) -> Result<Self, EncodingError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut doc_count = 0u32;
        let mut doc_freq: BTreeMap<String, u32> = BTreeMap::new();
        for doc in docs {
            doc_count += 1;
            let terms: BTreeSet<String> = tokenize(doc).into_iter().collect();
            for t in terms {
                *doc_freq.entry(t).or_default() += 1;
            }
        }
        if doc_count == 0 {
            return Err(EncodingError::EmptyCorpus);
        }
        Ok(IdfTable {
            doc_count,
            doc_freq,
        })
    }

    pub fn doc_freq(&self, term: &str) -> u32 {
        self.doc_freq.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let d = f64::from(self.doc_count);
        let df = f64::from(self.doc_freq(term));
        ((1.0 + d) / (1.0 + df)).ln()
    }
}

/// Fits IDF statistics where each conversation counts as one document.
pub fn fit_idf(corpus: &Corpus) -> Result<IdfTable, EncodingError> {
    let docs: Vec<String> = corpus
        .conversations
        .iter()
        .map(|c| {
            c.turns
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    IdfTable::from_documents(docs.iter().map(String::as_str))
}

pub fn bucket(token: &str, dim: usize) -> usize {
    (fnv1a64(token.as_bytes()) % dim as u64) as usize
}

/// Embeds `text`; panics if `dim < MIN_DIM`. See [`Embedder`] for a checked
/// constructor.
pub fn embed_text(text: &str, idf: &IdfTable, dim: usize) -> Vec<f64> {
    assert!(dim >= MIN_DIM, "embedding dim {dim} < {MIN_DIM}");
    let mut tf: BTreeMap<String, u32> = BTreeMap::new();
    for t in tokenize(text) {
        *tf.entry(t).or_default() += 1;
    }
    let mut v = vec![0.0; dim];
    for (term, count) in &tf {
        v[bucket(term, dim)] += f64::from(*count) * idf.idf(term);
    }
    let norm = l2_norm(&v);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An IDF table bound to an embedding dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedder {
    idf: IdfTable,
    dim: usize,
}

impl Embedder {
    pub fn new(idf: IdfTable, dim: usize) -> Result<Self, EncodingError> {
        if dim < MIN_DIM {
            return Err(EncodingError::DimTooSmall(dim));
        }
        Ok(Embedder { idf, dim })
    }

    pub fn fit(corpus: &Corpus, dim: usize) -> Result<Self, EncodingError> {
        Embedder::new(fit_idf(corpus)?, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn idf(&self) -> &IdfTable {
        &self.idf
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        embed_text(text, &self.idf, self.dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(docs: &[&str]) -> IdfTable {
        IdfTable::from_documents(docs.iter().copied()).unwrap()
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Div/0 Error"), vec!["div", "0", "error"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A  a"), vec!["a", "a"]);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn idf_values() {
        let t = table(&["x y", "x z", "w", "v"]);
        assert_eq!(t.doc_count, 4);
        assert!((t.idf("x") - (5.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((t.idf("x") - 0.5108).abs() < 1e-4);
        // unseen term behaves like doc_freq 0
        assert_eq!(t.doc_freq("nope"), 0);
        assert!((t.idf("nope") - 5.0f64.ln()).abs() < 1e-12);
        let all = table(&["k a", "k b"]);
        assert_eq!(all.idf("k"), 0.0);
        assert!(IdfTable::from_documents(Vec::<&str>::new()).is_err());
    }

    #[test]
    fn idf_counts_conversations_not_turns() {
        use crate::corpus::Conversation;
        let c = Corpus::new(vec![
            Conversation::from_alternating("a", &["disk", "disk", "disk", "ok"]),
            Conversation::from_alternating("b", &["net", "ok"]),
        ]);
        let t = fit_idf(&c).unwrap();
        assert_eq!(t.doc_freq("disk"), 1);
        assert_eq!(t.doc_freq("ok"), 2);
        assert!(matches!(fit_idf(&Corpus::default()), Err(EncodingError::EmptyCorpus)));
    }

    #[test]
    fn embedding_norms() {
        let t = table(&["alpha beta", "gamma", "delta"]);
        let e = embed_text("", &t, 64);
        assert_eq!(e.len(), 64);
        assert!(e.iter().all(|&x| x == 0.0));
        let v = embed_text("alpha beta beta", &t, 64);
        assert!((l2_norm(&v) - 1.0).abs() < 1e-9);
        assert_eq!(v, embed_text("alpha beta beta", &t, 64));
    }

    #[test]
    fn disjoint_texts_are_orthogonal() {
        let t = table(&["alpha beta", "gamma delta", "other"]);
        let dim = 1024;
        let left = ["alpha", "beta"];
        let right = ["gamma", "delta"];
        let lb: BTreeSet<usize> = left.iter().map(|w| bucket(w, dim)).collect();
        let rb: BTreeSet<usize> = right.iter().map(|w| bucket(w, dim)).collect();
        assert!(lb.is_disjoint(&rb), "fixture must not collide");
        let a = embed_text("alpha beta", &t, dim);
        let b = embed_text("gamma delta", &t, dim);
        assert!(dot(&a, &b).abs() < 1e-12);
        assert!((dot(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedder_checks_dim() {
        let t = table(&["a"]);
        assert_eq!(Embedder::new(t, 4).unwrap_err(), EncodingError::DimTooSmall(4));
    }
}
