//! Trains the risk-control Q-network on a synthetic corpus where asking
//! always helps, then evaluates it greedily on held-out conversations next to
//! the oracle and the fixed-budget baselines.
//!
//! cargo run --release --example train_rcsq -- [episodes] [scenario] [adam|sgd]

use std::sync::Arc;

use convrisk::corpus::{build_pools, split_folds, PoolConfig};
use convrisk::encoding::Embedder;
use convrisk::policy::{FeatureMask, StateLayout};
use convrisk::rl::{train_policy, Optimizer, RLConfig};
use convrisk::simeval::{
    compute_metrics, run_episodes, DqnPolicy, EpisodeEnv, FixedBudget, OraclePolicy, Policy,
};
use convrisk::synthetic;
use convrisk::usersim::{Patience, UserProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let episodes: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let scenario = match args.get(2).map(String::as_str).unwrap_or("always-helpful") {
        "poisoned" => synthetic::poisoned(500, 7),
        "crossover" => synthetic::crossover(500, 7),
        _ => synthetic::always_helpful(500, 7),
    };
    let pool_size = 20;
    let corpus = split_folds(scenario.corpus.clone(), 5, 1)?;
    let folds = corpus.folds.clone().expect("folds assigned");
    let embedder = Embedder::fit(&corpus, 256)?;
    let pools: Vec<_> = corpus
        .conversations
        .iter()
        .map(|c| build_pools(&corpus, c, &PoolConfig { pool_size, seed: 3 }))
        .collect::<Result<_, _>>()?;
    let answer_ranker = scenario.answer_ranker();
    let question_ranker = scenario.question_ranker(pool_size, 11);
    let env = EpisodeEnv {
        answer_ranker: &answer_ranker,
        question_ranker: &question_ranker,
        embedder: &embedder,
        layout: StateLayout::new(256, FeatureMask::Full),
        profile: UserProfile::new(0, Patience::Unbounded),
    };
    let held_out = &folds[0];
    let train: Vec<_> = (0..corpus.len())
        .filter(|i| !held_out.contains(i))
        .map(|i| (&corpus.conversations[i], &pools[i]))
        .collect();
    let test: Vec<_> = held_out
        .iter()
        .map(|&i| (&corpus.conversations[i], &pools[i]))
        .collect();

    let cfg = RLConfig {
        episodes,
        optimizer: match args.get(3).map(String::as_str) {
            Some("sgd") => Optimizer::Sgd,
            _ => Optimizer::Adam,
        },
        ..RLConfig::default()
    };
    let start = std::time::Instant::now();
    let trained = train_policy(&train, &env, &cfg, FeatureMask::Full, 42)?;
    println!(
        "{}: trained {} episodes, {} updates in {:.1?}",
        scenario.name,
        episodes,
        trained.updates,
        start.elapsed()
    );
    let params = Arc::new(trained.params);

    let contenders: Vec<(&str, Box<dyn Fn() -> Box<dyn Policy + Send> + Sync>)> = vec![
        ("oracle", Box::new(|| Box::new(OraclePolicy))),
        ("q0a", Box::new(|| Box::new(FixedBudget(0)))),
        ("q1a", Box::new(|| Box::new(FixedBudget(1)))),
        ("q2a", Box::new(|| Box::new(FixedBudget(2)))),
        (
            "rcsq",
            Box::new({
                let params = params.clone();
                move || {
                    Box::new(DqnPolicy {
                        params: params.clone(),
                        mask: FeatureMask::Full,
                    })
                }
            }),
        ),
    ];
    for (name, make) in &contenders {
        let results = run_episodes(&test, &env, make, 4)?;
        let m = compute_metrics(&results)?;
        let first_answer = results
            .iter()
            .filter(|r| r.decisions[0].action == convrisk::policy::ActionKind::Answer)
            .count() as f64
            / results.len() as f64;
        println!(
            "{name:<7} R@1 {:.4}  MRR {:.4}  Dec.err {:.4}  answers at round 1: {:.2}",
            m.recall_at_1, m.mrr, m.decision_error_rate, first_answer
        );
    }
    Ok(())
}
