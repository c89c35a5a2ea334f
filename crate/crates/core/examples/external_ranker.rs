//! Scores candidates through an external ranker process speaking the JSONL
//! bridge protocol. Pass the command to launch after `--`.
//!
//! cargo run --example external_ranker -- python3 -m my_ranker_adapter

use std::time::Duration;

use convrisk::corpus::{build_pools, PoolConfig};
use convrisk::policy::context_text;
use convrisk::ranker::{reciprocal_rank, BridgeRanker, Ranker, RR_CUTOFF};
use convrisk::synthetic::{topic_corpus, TopicCorpusConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let command: Vec<String> = std::env::args().skip(1).collect();
    if command.is_empty() {
        eprintln!("usage: external_ranker -- <program> [args...]");
        std::process::exit(2);
    }
    let bridge = BridgeRanker::spawn(&command, Duration::from_secs(30))?;
    println!("connected to {:?} (embed_dim {:?})", bridge.name(), bridge.embed_dim());

    let corpus = topic_corpus(&TopicCorpusConfig {
        conversations: 40,
        ..Default::default()
    });
    let mut total = 0.0;
    for conv in corpus.conversations.iter().take(10) {
        let pool = build_pools(&corpus, conv, &PoolConfig { pool_size: 10, seed: 0 })?;
        let scores = bridge.score(&context_text(conv.query(), ""), &pool.answer_candidates)?;
        let rr = reciprocal_rank(&scores, &[pool.positive_answer()], RR_CUTOFF)?;
        println!("{:<10} top {:>6.3}  rr {rr:.3}", conv.id, scores.top().1);
        total += rr;
    }
    println!("MRR over 10 conversations: {:.4}", total / 10.0);
    Ok(())
}
