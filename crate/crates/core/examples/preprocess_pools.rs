//! Loads a JSONL conversation file (or a generated one), normalizes and
//! filters it, assigns folds and builds candidate pools for one conversation.
//!
//! cargo run --example preprocess_pools -- [corpus.jsonl]

use convrisk::corpus::{build_pools, parse_corpus, preprocess, split_folds, PoolConfig};
use convrisk::synthetic::{topic_corpus, TopicCorpusConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = match std::env::args().nth(1) {
        Some(path) => parse_corpus(path)?,
        None => topic_corpus(&TopicCorpusConfig::default()),
    };
    let (corpus, stats) = preprocess(raw, 4, 20);
    println!(
        "kept {} conversations, dropped {} (short {}, long {}, malformed {})",
        stats.kept,
        stats.dropped(),
        stats.too_short,
        stats.too_long,
        stats.malformed
    );

    let corpus = split_folds(corpus, 5, 7)?;
    for (f, idx) in corpus.folds.as_ref().expect("folds assigned").iter().enumerate() {
        println!("fold {f}: {} conversations", idx.len());
    }

    let target = &corpus.conversations[0];
    let pool = build_pools(&corpus, target, &PoolConfig { pool_size: 10, seed: 7 })?;
    println!("\nconversation {}: {:?}", target.id, target.query());
    println!("answer candidates:");
    for c in &pool.answer_candidates {
        println!("  {} {:<60} {}", if c.is_positive { "*" } else { " " }, c.text, c.id.0);
    }
    println!("question candidates:");
    for c in &pool.question_candidates {
        println!("  {} {}", if c.is_positive { "*" } else { " " }, c.text);
    }
    Ok(())
}
