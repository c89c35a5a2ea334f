//! Trains the built-in dot-product rankers on four folds of a topic corpus and
//! compares held-out answer MRR against an untrained projection.
//!
//! cargo run --release --example train_ranker

use std::sync::Arc;

use convrisk::corpus::{build_pools, split_folds, Corpus, PoolConfig};
use convrisk::encoding::{fit_idf, Embedder};
use convrisk::experiment::ranker_pairs;
use convrisk::ranker::{reciprocal_rank, train_dot_ranker, DotRanker, DotRankerParams, Ranker, RankerTrainConfig, RR_CUTOFF};
use convrisk::policy::context_text;
use convrisk::synthetic::{topic_corpus, TopicCorpusConfig};

fn held_out_mrr(ranker: &DotRanker, corpus: &Corpus, idx: &[usize]) -> Result<f64, Box<dyn std::error::Error>> {
    let mut total = 0.0;
    for &i in idx {
        let c = &corpus.conversations[i];
        let pool = build_pools(corpus, c, &PoolConfig { pool_size: 20, seed: 1 })?;
        let scores = ranker.score(&context_text(c.query(), ""), &pool.answer_candidates)?;
        total += reciprocal_rank(&scores, &[pool.positive_answer()], RR_CUTOFF)?;
    }
    Ok(total / idx.len() as f64)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = split_folds(
        topic_corpus(&TopicCorpusConfig {
            conversations: 2000,
            ..Default::default()
        }),
        5,
        3,
    )?;
    let folds = corpus.folds.clone().expect("folds assigned");
    let test = &folds[0];
    let train: Vec<_> = (0..corpus.len()).filter(|i| !test.contains(i)).collect();
    let train_corpus = Corpus::new(train.iter().map(|&i| corpus.conversations[i].clone()).collect());

    let embedder = Arc::new(Embedder::new(fit_idf(&train_corpus)?, 256)?);
    let (answer_pairs, question_pairs) = ranker_pairs(&train_corpus.conversations);
    println!("{} answer pairs, {} question pairs", answer_pairs.len(), question_pairs.len());

    let cfg = RankerTrainConfig {
        epochs: 20,
        ..Default::default()
    };
    let trained = DotRanker::new(embedder.clone(), train_dot_ranker(&answer_pairs, &embedder, &cfg)?)?;
    let untrained = DotRanker::new(embedder.clone(), DotRankerParams::random(256, cfg.dim_out, cfg.seed))?;

    println!("held-out answer MRR, untrained: {:.4}", held_out_mrr(&untrained, &corpus, test)?);
    println!("held-out answer MRR, trained:   {:.4}", held_out_mrr(&trained, &corpus, test)?);

    let path = std::env::temp_dir().join("convrisk_answer_ranker.json");
    std::fs::write(&path, trained.to_json())?;
    let reloaded = DotRanker::from_json(&std::fs::read_to_string(&path)?)?;
    assert_eq!(reloaded.params(), trained.params());
    println!("saved to {}", path.display());
    Ok(())
}
