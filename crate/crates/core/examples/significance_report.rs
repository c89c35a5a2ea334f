//! Builds a comparison report from two baselines and a noisy variant of the
//! oracle, with paired bootstrap p-values, and writes summary.json and
//! report.txt to a temporary directory.
//!
//! cargo run --release --example significance_report

use convrisk::corpus::{build_all_pools, split_folds, PoolConfig};
use convrisk::encoding::Embedder;
use convrisk::policy::{FeatureMask, StateLayout};
use convrisk::simeval::{
    build_report, format_report, run_episodes, significance_test, write_report, EpisodeEnv, FixedBudget,
    OraclePolicy, Policy, PolicyKind, PolicyRun,
};
use convrisk::synthetic::mixed;
use convrisk::usersim::{Patience, UserProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = mixed(300, 5);
    let corpus = split_folds(scenario.corpus.clone(), 5, 5)?;
    let folds = corpus.folds.clone().expect("folds assigned");
    let pools = build_all_pools(&corpus, &PoolConfig { pool_size: 15, seed: 5 })?;
    let embedder = Embedder::fit(&corpus, 64)?;
    let (answer, question) = (scenario.answer_ranker(), scenario.question_ranker(15, 5));
    let profile = UserProfile::new(1, Patience::Limited(2));
    let env = EpisodeEnv {
        answer_ranker: &answer,
        question_ranker: &question,
        embedder: &embedder,
        layout: StateLayout::new(64, FeatureMask::Full),
        profile,
    };

    // the oracle stands in for a learned policy here, so its row gets a p-value
    let contenders: [(PolicyKind, &(dyn Fn() -> Box<dyn Policy + Send> + Sync)); 3] = [
        (PolicyKind::Q0a, &|| Box::new(FixedBudget(0))),
        (PolicyKind::Q1a, &|| Box::new(FixedBudget(1))),
        (PolicyKind::Rcsq, &|| Box::new(OraclePolicy)),
    ];
    let mut runs = Vec::new();
    for (kind, make) in contenders {
        let mut results = Vec::new();
        for (f, idx) in folds.iter().enumerate() {
            let items: Vec<_> = idx.iter().map(|&i| (&corpus.conversations[i], &pools[i])).collect();
            results.extend(run_episodes(&items, &env, make, 4)?.into_iter().map(|r| (f, r)));
        }
        runs.push(PolicyRun {
            policy: kind,
            profile,
            results,
        });
    }

    let rr = |k: usize| -> Vec<f64> {
        let mut v: Vec<_> = runs[k].results.iter().map(|(_, r)| (r.conversation_id.clone(), r.rr)).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v.into_iter().map(|(_, x)| x).collect()
    };
    let q0_vs_q1 = significance_test(&rr(1), &rr(0), 10_000, 1)?;
    println!(
        "Q1A - Q0A: mean RR difference {:+.4}, p = {:.4}\n",
        q0_vs_q1.mean_difference, q0_vs_q1.p_value
    );

    let report = build_report(&runs, 10_000, 1)?;
    print!("{}", format_report(&report));
    let dir = std::env::temp_dir().join("convrisk_report_example");
    write_report(&report, &dir)?;
    println!("\nwrote {}", dir.display());
    Ok(())
}
