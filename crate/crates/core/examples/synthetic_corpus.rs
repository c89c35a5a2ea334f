//! Writes a seeded synthetic support-desk corpus as JSONL.
//!
//! cargo run --example synthetic_corpus -- out.jsonl [conversations] [seed]

use convrisk::synthetic::{topic_corpus, TopicCorpusConfig};

fn main() -> std::io::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).cloned().unwrap_or_else(|| "corpus.jsonl".into());
    let conversations = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
    let seed = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let corpus = topic_corpus(&TopicCorpusConfig {
        conversations,
        seed,
        ..TopicCorpusConfig::default()
    });
    std::fs::write(&path, corpus.to_jsonl())?;
    println!("wrote {} conversations to {path}", corpus.len());
    Ok(())
}
