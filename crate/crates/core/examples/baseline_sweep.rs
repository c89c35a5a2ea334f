//! Sweeps user tolerance on a corpus where the top clarifying question is
//! relevant half the time, showing when asking one question starts to pay
//! off over answering immediately.
//!
//! cargo run --release --example baseline_sweep

use convrisk::corpus::{build_all_pools, PoolConfig};
use convrisk::encoding::Embedder;
use convrisk::policy::{FeatureMask, StateLayout};
use convrisk::simeval::{compute_metrics, run_episodes, EpisodeEnv, FixedBudget, OraclePolicy, Policy};
use convrisk::synthetic::crossover;
use convrisk::usersim::{Patience, UserProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = crossover(600, 4);
    let items_corpus = &scenario.corpus;
    let pools = build_all_pools(items_corpus, &PoolConfig { pool_size: 20, seed: 2 })?;
    let items: Vec<_> = items_corpus.conversations.iter().zip(&pools).collect();
    let embedder = Embedder::fit(items_corpus, 64)?;
    let (answer, question) = (scenario.answer_ranker(), scenario.question_ranker(20, 2));

    println!("{:<6}{:>10}{:>10}{:>10}{:>10}", "tau", "Q0A", "Q1A", "Q2A", "Oracle");
    for tau in 0..=3 {
        let env = EpisodeEnv {
            answer_ranker: &answer,
            question_ranker: &question,
            embedder: &embedder,
            layout: StateLayout::new(64, FeatureMask::Full),
            profile: UserProfile::new(tau, Patience::Unbounded),
        };
        let mut row = format!("{tau:<6}");
        let makers: [&(dyn Fn() -> Box<dyn Policy + Send> + Sync); 4] = [
            &|| Box::new(FixedBudget(0)),
            &|| Box::new(FixedBudget(1)),
            &|| Box::new(FixedBudget(2)),
            &|| Box::new(OraclePolicy),
        ];
        for make in makers {
            let m = compute_metrics(&run_episodes(&items, &env, make, 4)?)?;
            row.push_str(&format!("{:>10.4}", m.mrr));
        }
        println!("{row}");
    }
    Ok(())
}
