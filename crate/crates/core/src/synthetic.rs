//! Seeded synthetic corpora and scripted rankers for controlled experiments.
//!
//! A [`Scenario`] pairs a corpus with an [`EpisodePlan`] per conversation.
//! The scripted answer ranker places the true answer at a rank that depends
//! only on how many questions the user has answered so far; the scripted
//! question ranker decides per attempt whether its top question is relevant.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Candidate, Conversation, Corpus};
use crate::encoding::fnv1a64;
use crate::policy::SEP;
use crate::ranker::{Ranker, RankerError, RankerScores};

/// Whether the question ranker's top question is relevant, per attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionPlan {
    /// Entry `i` governs the `i`-th ask; later asks are irrelevant.
    Fixed(Vec<bool>),
    /// Relevant with this probability, drawn from a seeded hash.
    Bernoulli(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodePlan {
    /// Rank of the true answer after `i` answered questions; the last entry
    /// repeats.
    pub answer_ranks: Vec<usize>,
    pub questions: QuestionPlan,
}

pub type Plans = Arc<BTreeMap<String, EpisodePlan>>;

fn query_of(context: &str) -> &str {
    context.split(SEP).next().unwrap_or(context)
}

fn answered_in(context: &str) -> usize {
    context.matches(SEP).count() / 2
}

fn missing(query: &str) -> RankerError {
    RankerError::InvalidConfig(format!("no script for query {query:?}"))
}

/// Places the positive candidate at the scripted rank. Negatives keep
/// ascending id order. A correct top answer gets a visibly larger score.
#[derive(Debug, Clone)]
pub struct ScriptedAnswerRanker {
    plans: Plans,
}

impl ScriptedAnswerRanker {
    pub fn new(plans: Plans) -> Self {
        ScriptedAnswerRanker { plans }
    }
}

impl Ranker for ScriptedAnswerRanker {
    fn score(&self, context: &str, candidates: &[Candidate]) -> Result<RankerScores, RankerError> {
        if candidates.is_empty() {
            return Err(RankerError::NoCandidates);
        }
        let query = query_of(context);
        let plan = self.plans.get(query).ok_or_else(|| missing(query))?;
        let step = answered_in(context).min(plan.answer_ranks.len().saturating_sub(1));
        let rank = plan.answer_ranks.get(step).copied().unwrap_or(1).clamp(1, candidates.len());

        let mut order: Vec<usize> = (0..candidates.len()).filter(|&i| !candidates[i].is_positive).collect();
        order.sort_by_key(|&i| candidates[i].id);
        if let Some(p) = candidates.iter().position(|c| c.is_positive) {
            order.insert((rank - 1).min(order.len()), p);
        }
        let mut raw = vec![0.0; candidates.len()];
        for (pos, &i) in order.iter().enumerate() {
            raw[i] = 1.0 - 0.005 * pos as f64;
        }
        if let Some(&first) = order.first() {
            if candidates[first].is_positive {
                raw[first] += 0.5;
            }
        }
        let ids: Vec<_> = candidates.iter().map(|c| c.id).collect();
        RankerScores::from_parts(&ids, &raw)
    }
}

/// Puts a relevant or an irrelevant question on top according to the plan.
/// The attempt number is inferred from how far the pool has shrunk.
#[derive(Debug, Clone)]
pub struct ScriptedQuestionRanker {
    plans: Plans,
    pool_size: usize,
    seed: u64,
}

impl ScriptedQuestionRanker {
    pub fn new(plans: Plans, pool_size: usize, seed: u64) -> Self {
        ScriptedQuestionRanker {
            plans,
            pool_size,
            seed,
        }
    }

    fn relevant(&self, query: &str, plan: &EpisodePlan, attempt: usize) -> bool {
        match &plan.questions {
            QuestionPlan::Fixed(v) => v.get(attempt).copied().unwrap_or(false),
            QuestionPlan::Bernoulli(p) => {
                // raw FNV barely moves the high bits when only the attempt digit changes
                let h = fnv1a64(format!("{}\x1f{query}\x1f{attempt}", self.seed).as_bytes());
                ChaCha8Rng::seed_from_u64(h).random::<f64>() < *p
            }
        }
    }
}

impl Ranker for ScriptedQuestionRanker {
    fn score(&self, context: &str, candidates: &[Candidate]) -> Result<RankerScores, RankerError> {
        if candidates.is_empty() {
            return Err(RankerError::NoCandidates);
        }
        let query = query_of(context);
        let plan = self.plans.get(query).ok_or_else(|| missing(query))?;
        let attempt = self.pool_size.saturating_sub(candidates.len());
        let want = self.relevant(query, plan, attempt);
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by_key(|&i| (candidates[i].is_positive != want, candidates[i].id));
        let mut raw = vec![0.0; candidates.len()];
        for (pos, &i) in order.iter().enumerate() {
            raw[i] = if pos == 0 { 1.0 } else { 0.5 - 0.001 * pos as f64 };
        }
        let ids: Vec<_> = candidates.iter().map(|c| c.id).collect();
        RankerScores::from_parts(&ids, &raw)
    }
}

/// A corpus with a plan for every conversation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub corpus: Corpus,
    pub plans: Plans,
}

impl Scenario {
    pub fn answer_ranker(&self) -> ScriptedAnswerRanker {
        ScriptedAnswerRanker::new(self.plans.clone())
    }

    pub fn question_ranker(&self, pool_size: usize, seed: u64) -> ScriptedQuestionRanker {
        ScriptedQuestionRanker::new(self.plans.clone(), pool_size, seed)
    }
}

const ASPECTS: [&str; 6] = ["version", "model", "setting", "error code", "operating system", "driver"];
const VERBS: [&str; 6] = ["reinstall", "reset", "update", "disable", "reconfigure", "restart"];

fn word(rng: &mut ChaCha8Rng) -> String {
    const C: &[u8] = b"bcdfghklmnprstvz";
    const V: &[u8] = b"aeiou";
    let syl = rng.random_range(2..=3);
    let mut s = String::new();
    for _ in 0..syl {
        s.push(C[rng.random_range(0..C.len())] as char);
        s.push(V[rng.random_range(0..V.len())] as char);
    }
    s
}

/// Seeded technical-support style conversations. Answers share topic words
/// with their query and the detail words given as feedback, so a trained
/// text ranker can exploit both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCorpusConfig {
    pub conversations: usize,
    pub topics: usize,
    pub min_questions: usize,
    pub max_questions: usize,
    pub seed: u64,
}

impl Default for TopicCorpusConfig {
    fn default() -> Self {
        TopicCorpusConfig {
            conversations: 200,
            topics: 40,
            min_questions: 1,
            max_questions: 3,
            seed: 0,
        }
    }
}

pub fn topic_corpus(cfg: &TopicCorpusConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let topics: Vec<[String; 3]> = (0..cfg.topics.max(1))
        .map(|_| [word(&mut rng), word(&mut rng), word(&mut rng)])
        .collect();
    let details: Vec<String> = (0..200).map(|_| word(&mut rng)).collect();
    let mut convs = Vec::with_capacity(cfg.conversations);
    for i in 0..cfg.conversations {
        let t = topics.choose(&mut rng).expect("nonempty topics");
        let k = rng.random_range(cfg.min_questions..=cfg.max_questions.max(cfg.min_questions));
        let mut texts = vec![format!(
            "ticket{i:05} problem with {} {} when using {}",
            t[0], t[1], t[2]
        )];
        let mut first_detail = None;
        let mut aspects: Vec<&str> = ASPECTS.to_vec();
        for _ in 0..k {
            let a = aspects.remove(rng.random_range(0..aspects.len()));
            let d = details.choose(&mut rng).expect("nonempty details").clone();
            texts.push(format!("which {a} of {} do you have", t[rng.random_range(0..3)]));
            texts.push(format!("my {a} is {d}"));
            first_detail.get_or_insert(d);
        }
        let verb = VERBS.choose(&mut rng).expect("nonempty verbs");
        texts.push(format!(
            "for {} {} with {} you should {verb} the {} {}",
            t[0],
            t[1],
            first_detail.as_deref().unwrap_or("defaults"),
            t[2],
            word(&mut rng)
        ));
        convs.push(Conversation::from_alternating(format!("c{i:05}"), &texts));
    }
    Corpus::new(convs)
}

fn with_plans(name: &str, corpus: Corpus, mut plan_for: impl FnMut(usize, &Conversation) -> EpisodePlan) -> Scenario {
    let plans = corpus
        .conversations
        .iter()
        .enumerate()
        .map(|(i, c)| (c.query().to_owned(), plan_for(i, c)))
        .collect();
    Scenario {
        name: name.to_owned(),
        corpus,
        plans: Arc::new(plans),
    }
}

fn base_corpus(n: usize, seed: u64) -> Corpus {
    topic_corpus(&TopicCorpusConfig {
        conversations: n,
        seed,
        ..TopicCorpusConfig::default()
    })
}

/// Every top question is relevant; one answered question lifts the true
/// answer from rank 2 to rank 1.
pub fn always_helpful(n: usize, seed: u64) -> Scenario {
    with_plans("always-helpful", base_corpus(n, seed), |_, _| EpisodePlan {
        answer_ranks: vec![2, 1],
        questions: QuestionPlan::Bernoulli(1.0),
    })
}

/// Every top question is irrelevant; the true answer starts at rank 2.
pub fn poisoned(n: usize, seed: u64) -> Scenario {
    with_plans("poisoned", base_corpus(n, seed), |_, _| EpisodePlan {
        answer_ranks: vec![2, 1],
        questions: QuestionPlan::Bernoulli(0.0),
    })
}

/// Initial rank uniform in {1, 2, 3}; any answered question lifts the true
/// answer to rank 1; the top question is relevant with probability 0.5.
pub fn crossover(n: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc055);
    with_plans("crossover", base_corpus(n, seed), move |_, _| EpisodePlan {
        answer_ranks: vec![rng.random_range(1..=3), 1],
        questions: QuestionPlan::Bernoulli(0.5),
    })
}

/// Random plans: initial rank in 1..=12, lifted ranks random, relevance
/// probability random. Used for stress and invariant tests.
pub fn mixed(n: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    with_plans("mixed", base_corpus(n, seed), move |_, _| EpisodePlan {
        answer_ranks: (0..4).map(|_| rng.random_range(1..=12)).collect(),
        questions: QuestionPlan::Bernoulli(rng.random_range(0.0..=1.0)),
    })
}

/// Three worked examples with hand-set rankings, plus filler conversations
/// so that candidate pools can be built. Returns the scenario and the ids of
/// the three case conversations.
pub fn case_studies(fillers: usize) -> (Scenario, [String; 3]) {
    let cases = [
        (vec![8, 1], vec![true, false]),
        (vec![4, 2], vec![true, false]),
        (vec![6, 4, 3], vec![true, true, false]),
    ];
    let mut corpus = base_corpus(fillers + 3, 0xca5e);
    let texts = [
        ["case1 wifi drops after update", "which router model", "it is a tplink", "which firmware", "the latest", "roll back the router firmware"],
        ["case2 printer shows offline", "is it wired or wireless", "wireless", "which driver", "the default", "re add the printer over wifi"],
        ["case3 laptop will not boot", "what happens on power", "fans spin", "any beeps", "three beeps", "reseat the memory modules"],
    ];
    for (k, t) in texts.iter().enumerate() {
        corpus.conversations[k] = Conversation::from_alternating(format!("case{}", k + 1), t);
    }
    let ids = ["case1".to_owned(), "case2".to_owned(), "case3".to_owned()];
    let scenario = with_plans("case-studies", corpus, |i, _| match cases.get(i) {
        Some((ranks, qs)) => EpisodePlan {
            answer_ranks: ranks.clone(),
            questions: QuestionPlan::Fixed(qs.clone()),
        },
        None => EpisodePlan {
            answer_ranks: vec![1],
            questions: QuestionPlan::Fixed(vec![]),
        },
    });
    (scenario, ids)
}
