//! Replays three hand-scripted conversations under every fixed-budget
//! baseline and the oracle, printing reciprocal rank and decision error per
//! case.
//!
//! cargo run --example case_study_replay

use convrisk::corpus::{build_all_pools, split_folds, PoolConfig};
use convrisk::encoding::Embedder;
use convrisk::policy::{FeatureMask, StateLayout};
use convrisk::simeval::{compute_metrics, run_episode, EpisodeEnv, FixedBudget, OraclePolicy, Policy};
use convrisk::synthetic::case_studies;
use convrisk::usersim::{Patience, UserProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (scenario, ids) = case_studies(30);
    let corpus = split_folds(scenario.corpus.clone(), 5, 0)?;
    let pools = build_all_pools(&corpus, &PoolConfig { pool_size: 10, seed: 0 })?;
    let embedder = Embedder::fit(&corpus, 64)?;
    let (answer, question) = (scenario.answer_ranker(), scenario.question_ranker(10, 0));
    let env = EpisodeEnv {
        answer_ranker: &answer,
        question_ranker: &question,
        embedder: &embedder,
        layout: StateLayout::new(64, FeatureMask::Full),
        profile: UserProfile::new(0, Patience::Unbounded),
    };

    println!("{:<8}{:<8}{:>8}{:>10}  decisions", "case", "policy", "RR", "Dec. err");
    for id in &ids {
        let i = corpus.conversations.iter().position(|c| &c.id == id).expect("case present");
        let policies: [(&str, Box<dyn Policy>); 5] = [
            ("Q0A", Box::new(FixedBudget(0))),
            ("Q1A", Box::new(FixedBudget(1))),
            ("Q2A", Box::new(FixedBudget(2))),
            ("Q3A", Box::new(FixedBudget(3))),
            ("Oracle", Box::new(OraclePolicy)),
        ];
        for (name, mut policy) in policies {
            let r = run_episode(&corpus.conversations[i], &pools[i], &env, policy.as_mut())?;
            let m = compute_metrics(std::slice::from_ref(&r))?;
            let trace: Vec<String> = r
                .decisions
                .iter()
                .map(|d| format!("{:?}{}", d.action, if d.was_worse { "!" } else { "" }))
                .collect();
            println!("{id:<8}{name:<8}{:>8.4}{:>10.4}  {}", r.rr, m.decision_error_rate, trace.join(" "));
        }
    }
    println!("\n! marks a decision worse than its alternative");
    Ok(())
}
