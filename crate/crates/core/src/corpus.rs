//! Conversation logs: loading, normalization, filtering, fold splitting and
//! candidate-pool construction.
//!
//! A conversation is `u1, a1, u2, a2, ..., un, an`. The final agent turn is the
//! answer; every earlier agent turn is a ground-truth clarifying question, and
//! the user turn following `a_j` is the feedback the simulated user gives when
//! `a_j` is asked.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::fnv1a64;

/// Maximum whitespace tokens kept per merged turn.
pub const MAX_TURN_TOKENS: usize = 512;
pub const DEFAULT_MIN_TURNS: usize = 4;
pub const DEFAULT_MAX_TURNS: usize = 10;
pub const DEFAULT_POOL_SIZE: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("conversation has no non-empty turns")]
    EmptyConversation,
    #[error("need at least {needed} conversations to split into folds, have {have}")]
    TooFewConversations { needed: usize, have: usize },
    #[error("not enough foreign {kind} candidates for conversation {conversation}: need {needed}, have {have}")]
    InsufficientNegatives {
        conversation: String,
        kind: &'static str,
        needed: usize,
        have: usize,
    },
    #[error("pool size {pool_size} cannot hold {positives} positive questions of conversation {conversation}")]
    PoolTooSmall {
        conversation: String,
        pool_size: usize,
        positives: usize,
    },
    #[error("invalid pool config: {0}")]
    InvalidPoolConfig(String),
    #[error("candidate id collision between {0} and {1}")]
    CandidateIdCollision(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing)]
    pub token_count: usize,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        let text = text.into();
        let token_count = whitespace_tokens(&text).count();
        Turn {
            speaker,
            text,
            token_count,
        }
    }
}

fn whitespace_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Self {
        Conversation {
            id: id.into(),
            turns,
        }
    }

    /// Builds a conversation from alternating texts, starting with the user.
    pub fn from_alternating<S: AsRef<str>>(id: impl Into<String>, texts: &[S]) -> Self {
        let turns = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let speaker = if i % 2 == 0 {
                    Speaker::User
                } else {
                    Speaker::Agent
                };
                Turn::new(speaker, t.as_ref())
            })
            .collect();
        Conversation::new(id, turns)
    }

    pub fn answer_index(&self) -> usize {
        self.turns.len().saturating_sub(1)
    }

    pub fn query(&self) -> &str {
        self.turns.first().map(|t| t.text.as_str()).unwrap_or("")
    }

    pub fn answer(&self) -> &Turn {
        &self.turns[self.answer_index()]
    }

    /// Turn indices of the ground-truth clarifying questions.
    pub fn clarifying_question_indices(&self) -> Vec<usize> {
        let last = self.answer_index();
        (0..last)
            .filter(|&i| self.turns[i].speaker == Speaker::Agent)
            .collect()
    }

    /// Text of the user turn that answers the agent turn at `turn_index`.
    pub fn feedback_for(&self, turn_index: usize) -> Option<&str> {
        self.turns
            .get(turn_index + 1)
            .filter(|t| t.speaker == Speaker::User)
            .map(|t| t.text.as_str())
    }

    pub fn is_alternating(&self) -> bool {
        self.turns.first().map(|t| t.speaker) == Some(Speaker::User)
            && self
                .turns
                .windows(2)
                .all(|w| w[0].speaker != w[1].speaker)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<Vec<Vec<usize>>>,
}

impl Corpus {
    pub fn new(conversations: Vec<Conversation>) -> Self {
        Corpus {
            conversations,
            folds: None,
        }
    }

    pub fn len(&self) -> usize {
        self.conversations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conversations.is_empty()
    }

    /// Writes the corpus in the same JSONL layout `parse_corpus` reads.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.conversations {
            let rec = RawRecord {
                id: c.id.clone(),
                turns: c
                    .turns
                    .iter()
                    .map(|t| RawTurn {
                        speaker: t.speaker,
                        text: t.text.clone(),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("corpus record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct RawTurn {
    speaker: Speaker,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    turns: Vec<RawTurn>,
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let file = fs::File::open(path)?;
    read_corpus(file)
}

/// Reads JSONL conversation records. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_corpus(reader: impl Read) -> Result<Corpus, CorpusError> {
    let mut conversations = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Format {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::Format {
                line: line_no,
                reason: format!("duplicate conversation id {:?}", rec.id),
            });
        }
        let turns = rec
            .turns
            .into_iter()
            .map(|t| Turn::new(t.speaker, t.text))
            .collect();
        conversations.push(Conversation::new(rec.id, turns));
    }
    Ok(Corpus::new(conversations))
}

/// Merges consecutive same-speaker turns and truncates each merged turn to
/// [`MAX_TURN_TOKENS`] whitespace tokens. Whitespace inside a turn is collapsed
/// to single spaces, so the operation is idempotent. Turns that are empty after
/// collapsing are dropped.
pub fn normalize_conversation(raw: &Conversation) -> Result<Conversation, CorpusError> {
    let mut turns: Vec<(Speaker, Vec<&str>)> = Vec::new();
    for turn in &raw.turns {
        let toks: Vec<&str> = whitespace_tokens(&turn.text).collect();
        if toks.is_empty() {
            continue;
        }
        match turns.last_mut() {
            Some((speaker, acc)) if *speaker == turn.speaker => acc.extend(toks),
            _ => turns.push((turn.speaker, toks)),
        }
    }
    if turns.is_empty() {
        return Err(CorpusError::EmptyConversation);
    }
    let turns = turns
        .into_iter()
        .map(|(speaker, mut toks)| {
            toks.truncate(MAX_TURN_TOKENS);
            Turn {
                speaker,
                token_count: toks.len(),
                text: toks.join(" "),
            }
        })
        .collect();
    Ok(Conversation::new(raw.id.clone(), turns))
}

/// Counts of conversations removed by [`filter_corpus`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FilterStats {
    pub kept: usize,
    pub too_short: usize,
    pub too_long: usize,
    pub malformed: usize,
}

impl FilterStats {
    pub fn dropped(&self) -> usize {
        self.too_short + self.too_long + self.malformed
    }
}

/// Keeps conversations with `min_turns <= |turns| <= max_turns` that alternate
/// starting with the user and end on an agent turn.
pub fn filter_corpus(c: Corpus, min_turns: usize, max_turns: usize) -> (Corpus, FilterStats) {
    let mut stats = FilterStats::default();
    let conversations: Vec<Conversation> = c
        .conversations
        .into_iter()
        .filter(|conv| {
            let n = conv.turns.len();
            if !conv.is_alternating()
                || conv.turns.last().map(|t| t.speaker) != Some(Speaker::Agent)
            {
                stats.malformed += 1;
                false
            } else if n < min_turns {
                stats.too_short += 1;
                false
            } else if n > max_turns {
                stats.too_long += 1;
                false
            } else {
                true
            }
        })
        .collect();
    stats.kept = conversations.len();
    (Corpus::new(conversations), stats)
}

/// Normalizes every conversation, dropping those that are empty, then filters.
pub fn preprocess(c: Corpus, min_turns: usize, max_turns: usize) -> (Corpus, FilterStats) {
    let mut empty = 0;
    let normalized = c
        .conversations
        .iter()
        .filter_map(|conv| match normalize_conversation(conv) {
            Ok(n) => Some(n),
            Err(_) => {
                empty += 1;
                None
            }
        })
        .collect();
    let (corpus, mut stats) = filter_corpus(Corpus::new(normalized), min_turns, max_turns);
    stats.malformed += empty;
    (corpus, stats)
}

/// Seeded shuffle followed by round-robin assignment to `n_folds` folds.
pub fn split_folds(mut c: Corpus, n_folds: usize, seed: u64) -> Result<Corpus, CorpusError> {
    if n_folds == 0 || c.len() < n_folds {
        return Err(CorpusError::TooFewConversations {
            needed: n_folds.max(1),
            have: c.len(),
        });
    }
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); n_folds];
    for (slot, idx) in order.into_iter().enumerate() {
        folds[slot % n_folds].push(idx);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    c.folds = Some(folds);
    Ok(c)
}

/// Stable identifier of an agent turn, derived from its conversation id and
/// turn index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(pub u64);

impl CandidateId {
    pub fn for_turn(conversation_id: &str, turn_index: usize) -> Self {
        let mut key = Vec::with_capacity(conversation_id.len() + 9);
        key.extend_from_slice(conversation_id.as_bytes());
        key.push(0x1f);
        key.extend_from_slice(&(turn_index as u64).to_le_bytes());
        CandidateId(fnv1a64(&key))
    }
}

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CandidateId,
    pub text: String,
    pub is_positive: bool,
    /// Turn index in the source conversation of the target when positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            pool_size: DEFAULT_POOL_SIZE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub source_conversation: String,
    pub answer_candidates: Vec<Candidate>,
    pub question_candidates: Vec<Candidate>,
}

impl CandidatePool {
    pub fn positive_answer(&self) -> CandidateId {
        self.answer_candidates
            .iter()
            .find(|c| c.is_positive)
            .map(|c| c.id)
            .expect("pool has a positive answer")
    }

    pub fn positive_questions(&self) -> impl Iterator<Item = &Candidate> {
        self.question_candidates.iter().filter(|c| c.is_positive)
    }
}

/// Builds the answer and question pools for `target`. Negatives are taken
/// without replacement from a seeded shuffle of every agent turn in the other
/// conversations; the seed is mixed with the target id so each conversation
/// gets its own deterministic sample.
pub fn build_pools(
    c: &Corpus,
    target: &Conversation,
    cfg: &PoolConfig,
) -> Result<CandidatePool, CorpusError> {
    if cfg.pool_size < 2 {
        return Err(CorpusError::InvalidPoolConfig(format!(
            "pool_size must be at least 2, got {}",
            cfg.pool_size
        )));
    }
    let n = cfg.pool_size;
    let cq_indices = target.clarifying_question_indices();
    if cq_indices.len() > n {
        return Err(CorpusError::PoolTooSmall {
            conversation: target.id.clone(),
            pool_size: n,
            positives: cq_indices.len(),
        });
    }

    let mut foreign_answers = Vec::new();
    let mut foreign_questions = Vec::new();
    for conv in c.conversations.iter().filter(|x| x.id != target.id) {
        if conv.turns.is_empty() {
            continue;
        }
        let last = conv.answer_index();
        if conv.turns[last].speaker == Speaker::Agent {
            foreign_answers.push(negative(conv, last));
        }
        for i in conv.clarifying_question_indices() {
            foreign_questions.push(negative(conv, i));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv1a64(target.id.as_bytes()));
    let answers_needed = n - 1;
    if foreign_answers.len() < answers_needed {
        return Err(CorpusError::InsufficientNegatives {
            conversation: target.id.clone(),
            kind: "answer",
            needed: answers_needed,
            have: foreign_answers.len(),
        });
    }
    let questions_needed = n - cq_indices.len();
    if foreign_questions.len() < questions_needed {
        return Err(CorpusError::InsufficientNegatives {
            conversation: target.id.clone(),
            kind: "question",
            needed: questions_needed,
            have: foreign_questions.len(),
        });
    }

    foreign_answers.shuffle(&mut rng);
    foreign_answers.truncate(answers_needed);
    foreign_answers.push(positive(target, target.answer_index()));
    foreign_answers.shuffle(&mut rng);

    foreign_questions.shuffle(&mut rng);
    foreign_questions.truncate(questions_needed);
    foreign_questions.extend(cq_indices.iter().map(|&i| positive(target, i)));
    foreign_questions.shuffle(&mut rng);

    check_unique(&foreign_answers)?;
    check_unique(&foreign_questions)?;
    Ok(CandidatePool {
        source_conversation: target.id.clone(),
        answer_candidates: foreign_answers,
        question_candidates: foreign_questions,
    })
}

fn negative(conv: &Conversation, i: usize) -> Candidate {
    Candidate {
        id: CandidateId::for_turn(&conv.id, i),
        text: conv.turns[i].text.clone(),
        is_positive: false,
        turn_index: None,
    }
}

fn positive(conv: &Conversation, i: usize) -> Candidate {
    Candidate {
        id: CandidateId::for_turn(&conv.id, i),
        text: conv.turns[i].text.clone(),
        is_positive: true,
        turn_index: Some(i),
    }
}

fn check_unique(cands: &[Candidate]) -> Result<(), CorpusError> {
    let mut seen = BTreeSet::new();
    for c in cands {
        if !seen.insert(c.id) {
            return Err(CorpusError::CandidateIdCollision(
                c.id.to_string(),
                c.text.chars().take(40).collect(),
            ));
        }
    }
    Ok(())
}

/// Builds pools for every conversation of the corpus, in corpus order.
pub fn build_all_pools(c: &Corpus, cfg: &PoolConfig) -> Result<Vec<CandidatePool>, CorpusError> {
    c.conversations
        .iter()
        .map(|conv| build_pools(c, conv, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(id: &str, texts: &[&str]) -> Conversation {
        Conversation::from_alternating(id, texts)
    }

    #[test]
    fn parse_two_records() {
        let data = r#"{"id":"a","turns":[{"speaker":"user","text":"q"},{"speaker":"agent","text":"x"}]}
{"id":"b","turns":[{"speaker":"user","text":"r"},{"speaker":"agent","text":"y"}]}
"#;
        let c = read_corpus(data.as_bytes()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.conversations[1].turns[1].speaker, Speaker::Agent);
    }

    #[test]
    fn parse_empty() {
        assert!(read_corpus(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn parse_missing_turns_reports_line() {
        let err = read_corpus(&br#"{"id":"a"}"#[..]).unwrap_err();
        match err {
            CorpusError::Format { line, reason } => {
                assert_eq!(line, 1);
                assert!(reason.contains("turns"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_speaker_and_duplicates() {
        let bad = r#"{"id":"a","turns":[{"speaker":"bot","text":"q"}]}"#;
        assert!(matches!(
            read_corpus(bad.as_bytes()),
            Err(CorpusError::Format { line: 1, .. })
        ));
        let dup = "{\"id\":\"a\",\"turns\":[]}\n{\"id\":\"a\",\"turns\":[]}\n";
        assert!(matches!(
            read_corpus(dup.as_bytes()),
            Err(CorpusError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn normalize_merges_consecutive_turns() {
        let raw = Conversation::new(
            "c",
            vec![
                Turn::new(Speaker::User, "a"),
                Turn::new(Speaker::User, "b"),
                Turn::new(Speaker::Agent, "c"),
            ],
        );
        let n = normalize_conversation(&raw).unwrap();
        assert_eq!(n.turns.len(), 2);
        assert_eq!(n.turns[0].text, "a b");
        assert_eq!(n.turns[1].text, "c");
        assert!(n.is_alternating());
    }

    #[test]
    fn normalize_fixpoint_and_truncation() {
        let c = conv("c", &["hello there", "what version", "ten", "use the patch"]);
        assert_eq!(normalize_conversation(&c).unwrap(), c);

        let long: Vec<String> = (0..600).map(|i| format!("w{i}")).collect();
        let c = conv("c", &[long.join(" ").as_str(), "ok"]);
        let n = normalize_conversation(&c).unwrap();
        assert_eq!(n.turns[0].token_count, 512);
        assert_eq!(n.turns[0].text.split(' ').count(), 512);
        assert!(n.turns[0].text.ends_with("w511"));
    }

    #[test]
    fn normalize_empty_is_error() {
        let c = Conversation::new("e", vec![Turn::new(Speaker::User, "   ")]);
        assert!(matches!(
            normalize_conversation(&c),
            Err(CorpusError::EmptyConversation)
        ));
    }

    #[test]
    fn filter_bounds() {
        let c = Corpus::new(vec![
            conv("three", &["u", "a", "u"]),
            conv("four", &["u", "a", "u", "a"]),
            conv("ten", &["u", "a", "u", "a", "u", "a", "u", "a", "u", "a"]),
            conv(
                "eleven",
                &["u", "a", "u", "a", "u", "a", "u", "a", "u", "a", "u"],
            ),
            conv(
                "twelve",
                &["u", "a", "u", "a", "u", "a", "u", "a", "u", "a", "u", "a"],
            ),
            conv("ends-user", &["u", "a", "u", "a", "u"]),
        ]);
        let (kept, stats) = filter_corpus(c, 4, 10);
        let ids: Vec<&str> = kept.conversations.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, vec!["four", "ten"]);
        assert_eq!(stats.kept, 2);
        assert_eq!(stats.dropped(), 4);
        assert_eq!(stats.too_long, 1);
    }

    fn corpus_of(n: usize) -> Corpus {
        Corpus::new(
            (0..n)
                .map(|i| {
                    conv(
                        &format!("c{i}"),
                        &[
                            &format!("query {i}"),
                            &format!("question {i}"),
                            &format!("reply {i}"),
                            &format!("answer {i}"),
                        ],
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn folds_even_and_deterministic() {
        let a = split_folds(corpus_of(10), 5, 7).unwrap();
        let folds = a.folds.clone().unwrap();
        assert!(folds.iter().all(|f| f.len() == 2));
        let b = split_folds(corpus_of(10), 5, 7).unwrap();
        assert_eq!(a.folds, b.folds);
        let c = split_folds(corpus_of(10), 5, 8).unwrap();
        assert_ne!(a.folds, c.folds);
        assert!(matches!(
            split_folds(corpus_of(3), 5, 7),
            Err(CorpusError::TooFewConversations { .. })
        ));
    }

    #[test]
    fn pools_have_expected_shape() {
        let c = corpus_of(120);
        let target = &c.conversations[3];
        let pool = build_pools(&c, target, &PoolConfig { pool_size: 100, seed: 1 }).unwrap();
        assert_eq!(pool.answer_candidates.len(), 100);
        assert_eq!(pool.question_candidates.len(), 100);
        assert_eq!(pool.answer_candidates.iter().filter(|c| c.is_positive).count(), 1);
        assert_eq!(pool.positive_questions().count(), 1);
        assert_eq!(
            pool.answer_candidates
                .iter()
                .find(|c| c.is_positive)
                .unwrap()
                .text,
            "answer 3"
        );
        // negatives never come from the target
        for cand in pool.answer_candidates.iter().chain(&pool.question_candidates) {
            if !cand.is_positive {
                assert!(!cand.text.ends_with(" 3"), "{}", cand.text);
            }
        }

        let small = build_pools(&c, target, &PoolConfig { pool_size: 20, seed: 1 }).unwrap();
        assert_eq!(small.answer_candidates.len(), 20);
        assert_eq!(small.question_candidates.len(), 20);
    }

    #[test]
    fn pools_deterministic_per_seed() {
        let c = corpus_of(50);
        let t = &c.conversations[0];
        let cfg = PoolConfig { pool_size: 10, seed: 9 };
        let a = serde_json::to_string(&build_pools(&c, t, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&build_pools(&c, t, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pool_errors() {
        let c = corpus_of(1);
        let err = build_pools(&c, &c.conversations[0], &PoolConfig { pool_size: 10, seed: 0 });
        assert!(matches!(err, Err(CorpusError::InsufficientNegatives { .. })));
        let c = corpus_of(5);
        let err = build_pools(&c, &c.conversations[0], &PoolConfig { pool_size: 1, seed: 0 });
        assert!(matches!(err, Err(CorpusError::InvalidPoolConfig(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = corpus_of(3);
        let back = read_corpus(c.to_jsonl().as_bytes()).unwrap();
        assert_eq!(back, c);
    }
}
