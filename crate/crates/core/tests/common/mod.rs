#![allow(dead_code)]

use convrisk::corpus::{build_pools, split_folds, CandidatePool, Conversation, Corpus, PoolConfig};
use convrisk::encoding::Embedder;
use convrisk::policy::{FeatureMask, StateLayout};
use convrisk::simeval::{run_episodes, EpisodeEnv, EpisodeResult, Policy};
use convrisk::synthetic::{Scenario, ScriptedAnswerRanker, ScriptedQuestionRanker};
use convrisk::usersim::{Patience, UserProfile};

pub const DIM: usize = 256;

/// A scenario with folds, pools, an embedder and its scripted rankers.
pub struct Setup {
    pub corpus: Corpus,
    pub pools: Vec<CandidatePool>,
    pub embedder: Embedder,
    pub answer: ScriptedAnswerRanker,
    pub question: ScriptedQuestionRanker,
    pub pool_size: usize,
}

impl Setup {
    pub fn new(s: &Scenario, pool_size: usize, seed: u64) -> Self {
        let corpus = split_folds(s.corpus.clone(), 5, seed).unwrap();
        let pools = corpus
            .conversations
            .iter()
            .map(|c| build_pools(&corpus, c, &PoolConfig { pool_size, seed }).unwrap())
            .collect();
        Setup {
            embedder: Embedder::fit(&corpus, DIM).unwrap(),
            answer: s.answer_ranker(),
            question: s.question_ranker(pool_size, seed),
            corpus,
            pools,
            pool_size,
        }
    }

    pub fn env(&self, tau: u32, rho: Patience) -> EpisodeEnv<'_> {
        EpisodeEnv {
            answer_ranker: &self.answer,
            question_ranker: &self.question,
            embedder: &self.embedder,
            layout: StateLayout::new(DIM, FeatureMask::Full),
            profile: UserProfile::new(tau, rho),
        }
    }

    pub fn fold(&self, f: usize) -> Vec<usize> {
        self.corpus.folds.as_ref().unwrap()[f].clone()
    }

    pub fn all_but(&self, f: usize) -> Vec<usize> {
        let held = self.fold(f);
        (0..self.corpus.len()).filter(|i| !held.contains(i)).collect()
    }

    pub fn items(&self, idx: &[usize]) -> Vec<(&Conversation, &CandidatePool)> {
        idx.iter().map(|&i| (&self.corpus.conversations[i], &self.pools[i])).collect()
    }

    pub fn all(&self) -> Vec<(&Conversation, &CandidatePool)> {
        self.items(&(0..self.corpus.len()).collect::<Vec<_>>())
    }

    pub fn index_of(&self, id: &str) -> usize {
        self.corpus.conversations.iter().position(|c| c.id == id).unwrap()
    }
}

pub fn run<F>(items: &[(&Conversation, &CandidatePool)], env: &EpisodeEnv<'_>, make: F) -> Vec<EpisodeResult>
where
    F: Fn() -> Box<dyn Policy + Send> + Sync,
{
    run_episodes(items, env, make, 4).unwrap()
}
