//! Simulated user with a tolerance for irrelevant clarifying questions and a
//! patience for answering questions.
//!
//! Relevance is membership in the set of not-yet-asked ground-truth
//! clarifying questions, in any order. A relevant question is answered with
//! the user turn that followed it in the source conversation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CandidateId, CandidatePool, Conversation};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum UserSimError {
    #[error("candidate {0} is not in the question pool")]
    UnknownCandidateId(CandidateId),
    #[error("the episode has already ended")]
    TerminalState,
    #[error("invalid user profile: {0}")]
    InvalidProfile(String),
    #[error("pool {pool} does not belong to conversation {conversation}")]
    PoolMismatch { pool: String, conversation: String },
}

/// How many questions the user will answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Patience {
    Limited(u32),
    Unbounded,
}

impl Patience {
    pub fn allows(&self, answered: u32) -> bool {
        match self {
            Patience::Limited(rho) => answered < *rho,
            Patience::Unbounded => true,
        }
    }
}

impl fmt::Display for Patience {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Patience::Limited(n) => write!(f, "{n}"),
            Patience::Unbounded => f.write_str("inf"),
        }
    }
}

impl FromStr for Patience {
    type Err = UserSimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s == "∞" {
            return Ok(Patience::Unbounded);
        }
        match s.parse::<u32>() {
            Ok(n) if n > 0 => Ok(Patience::Limited(n)),
            _ => Err(UserSimError::InvalidProfile(format!(
                "patience must be a positive integer or \"inf\", got {s:?}"
            ))),
        }
    }
}

impl Serialize for Patience {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Patience::Limited(n) => s.serialize_u32(*n),
            Patience::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Patience {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) if n > 0 && n <= i64::from(u32::MAX) => Ok(Patience::Limited(n as u32)),
            Raw::Num(n) => Err(serde::de::Error::custom(format!(
                "patience must be positive, got {n}"
            ))),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Which asks consume patience.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatienceMode {
    /// Only questions the user answered count.
    #[default]
    AnsweredOnly,
    /// Every asked question counts, including tolerated irrelevant ones.
    AllAsked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UserProfile {
    pub tolerance: u32,
    pub patience: Patience,
    #[serde(default)]
    pub patience_mode: PatienceMode,
}

impl UserProfile {
    pub fn new(tolerance: u32, patience: Patience) -> Self {
        UserProfile {
            tolerance,
            patience,
            patience_mode: PatienceMode::AnsweredOnly,
        }
    }
}

impl fmt::Display for UserProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rho={} tau={}", self.patience, self.tolerance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaveReason {
    ToleranceExhausted,
    PatienceExhausted,
}

/// What the agent does this round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentMove {
    Answer,
    Ask(CandidateId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserResponse {
    /// The question was relevant; the user replies with this text.
    Feedback(String),
    /// The question was irrelevant but tolerated; no text is added.
    Rejected,
    Leave(LeaveReason),
    AnswerReceived,
}

#[derive(Debug, Clone)]
pub struct UserState {
    profile: UserProfile,
    pool_ids: BTreeSet<CandidateId>,
    /// remaining ground-truth question id -> feedback text
    remaining: BTreeMap<CandidateId, String>,
    irrelevant_seen: u32,
    answered_questions: u32,
    asked_total: u32,
    terminal: bool,
}

impl UserState {
    pub fn new(
        profile: UserProfile,
        conversation: &Conversation,
        pool: &CandidatePool,
    ) -> Result<Self, UserSimError> {
        if pool.source_conversation != conversation.id {
            return Err(UserSimError::PoolMismatch {
                pool: pool.source_conversation.clone(),
                conversation: conversation.id.clone(),
            });
        }
        let mut remaining = BTreeMap::new();
        for cand in pool.positive_questions() {
            let idx = cand.turn_index.ok_or_else(|| {
                UserSimError::InvalidProfile(format!("positive {} lacks a turn index", cand.id))
            })?;
            let feedback = conversation.feedback_for(idx).unwrap_or_default().to_owned();
            remaining.insert(cand.id, feedback);
        }
        Ok(UserState {
            profile,
            pool_ids: pool.question_candidates.iter().map(|c| c.id).collect(),
            remaining,
            irrelevant_seen: 0,
            answered_questions: 0,
            asked_total: 0,
            terminal: false,
        })
    }

    pub fn profile(&self) -> &UserProfile {
        &self.profile
    }

    pub fn irrelevant_seen(&self) -> u32 {
        self.irrelevant_seen
    }

    pub fn answered_questions(&self) -> u32 {
        self.answered_questions
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn remaining_relevant(&self) -> usize {
        self.remaining.len()
    }

    pub fn judge_question(&self, id: CandidateId) -> Result<bool, UserSimError> {
        if !self.pool_ids.contains(&id) {
            return Err(UserSimError::UnknownCandidateId(id));
        }
        Ok(self.remaining.contains_key(&id))
    }

    pub fn respond(&mut self, action: AgentMove) -> Result<UserResponse, UserSimError> {
        if self.terminal {
            return Err(UserSimError::TerminalState);
        }
        let id = match action {
            AgentMove::Answer => {
                self.terminal = true;
                return Ok(UserResponse::AnswerReceived);
            }
            AgentMove::Ask(id) => id,
        };
        let relevant = self.judge_question(id)?;
        let consumed = match self.profile.patience_mode {
            PatienceMode::AnsweredOnly => self.answered_questions,
            PatienceMode::AllAsked => self.asked_total,
        };
        if !self.profile.patience.allows(consumed) {
            self.terminal = true;
            return Ok(UserResponse::Leave(LeaveReason::PatienceExhausted));
        }
        self.asked_total += 1;
        if relevant {
            let text = self.remaining.remove(&id).expect("judged relevant");
            self.answered_questions += 1;
            Ok(UserResponse::Feedback(text))
        } else {
            self.irrelevant_seen += 1;
            if self.irrelevant_seen > self.profile.tolerance {
                self.terminal = true;
                Ok(UserResponse::Leave(LeaveReason::ToleranceExhausted))
            } else {
                Ok(UserResponse::Rejected)
            }
        }
    }
}

/// Free-function form of [`UserState::respond`].
pub fn user_respond(action: AgentMove, state: &mut UserState) -> Result<UserResponse, UserSimError> {
    state.respond(action)
}

pub fn judge_question(id: CandidateId, state: &UserState) -> Result<bool, UserSimError> {
    state.judge_question(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_pools, Corpus, PoolConfig};

    fn setup() -> (Corpus, CandidatePool) {
        let mut convs = vec![Conversation::from_alternating(
            "target",
            &["u1", "a1", "u2", "a2", "u3", "a3", "u4", "a4"],
        )];
        for i in 0..10 {
            convs.push(Conversation::from_alternating(
                format!("other{i}"),
                &["q", &format!("x{i}"), "r", &format!("y{i}")],
            ));
        }
        let c = Corpus::new(convs);
        let pool = build_pools(&c, &c.conversations[0], &PoolConfig { pool_size: 6, seed: 1 }).unwrap();
        (c, pool)
    }

    fn id_of(pool: &CandidatePool, text: &str) -> CandidateId {
        pool.question_candidates.iter().find(|c| c.text == text).unwrap().id
    }

    fn negative(pool: &CandidatePool) -> CandidateId {
        pool.question_candidates.iter().find(|c| !c.is_positive).unwrap().id
    }

    fn negatives(pool: &CandidatePool) -> Vec<CandidateId> {
        pool.question_candidates.iter().filter(|c| !c.is_positive).map(|c| c.id).collect()
    }

    #[test]
    fn later_question_is_relevant_first() {
        let (c, pool) = setup();
        let mut s = UserState::new(UserProfile::new(0, Patience::Unbounded), &c.conversations[0], &pool).unwrap();
        let a3 = id_of(&pool, "a3");
        assert!(s.judge_question(a3).unwrap());
        assert_eq!(s.respond(AgentMove::Ask(a3)).unwrap(), UserResponse::Feedback("u4".into()));
        // order independence: a1 after a3 is still fine
        let a1 = id_of(&pool, "a1");
        assert_eq!(s.respond(AgentMove::Ask(a1)).unwrap(), UserResponse::Feedback("u2".into()));
        // re-asking is no longer relevant
        assert!(!s.judge_question(a3).unwrap());
        assert!(!s.judge_question(negative(&pool)).unwrap());
        assert_eq!(
            s.judge_question(CandidateId(12345)),
            Err(UserSimError::UnknownCandidateId(CandidateId(12345)))
        );
    }

    #[test]
    fn zero_tolerance_leaves_on_first_bad_question() {
        let (c, pool) = setup();
        let mut s = UserState::new(UserProfile::new(0, Patience::Unbounded), &c.conversations[0], &pool).unwrap();
        assert_eq!(
            s.respond(AgentMove::Ask(negative(&pool))).unwrap(),
            UserResponse::Leave(LeaveReason::ToleranceExhausted)
        );
        assert!(s.is_terminal());
        assert_eq!(s.respond(AgentMove::Answer), Err(UserSimError::TerminalState));
    }

    #[test]
    fn tolerance_counts_bad_questions() {
        let (c, pool) = setup();
        let mut s = UserState::new(UserProfile::new(2, Patience::Unbounded), &c.conversations[0], &pool).unwrap();
        let neg = negatives(&pool);
        assert_eq!(s.respond(AgentMove::Ask(neg[0])).unwrap(), UserResponse::Rejected);
        assert_eq!(s.respond(AgentMove::Ask(neg[1])).unwrap(), UserResponse::Rejected);
        assert_eq!(
            s.respond(AgentMove::Ask(neg[2])).unwrap(),
            UserResponse::Leave(LeaveReason::ToleranceExhausted)
        );
        assert_eq!(s.irrelevant_seen(), 3);
    }

    #[test]
    fn patience_limits_answered_questions() {
        let (c, pool) = setup();
        let mut s = UserState::new(UserProfile::new(5, Patience::Limited(2)), &c.conversations[0], &pool).unwrap();
        assert!(matches!(s.respond(AgentMove::Ask(id_of(&pool, "a1"))).unwrap(), UserResponse::Feedback(_)));
        // a tolerated bad question does not use up patience by default
        assert_eq!(s.respond(AgentMove::Ask(negative(&pool))).unwrap(), UserResponse::Rejected);
        assert!(matches!(s.respond(AgentMove::Ask(id_of(&pool, "a2"))).unwrap(), UserResponse::Feedback(_)));
        assert_eq!(
            s.respond(AgentMove::Ask(id_of(&pool, "a3"))).unwrap(),
            UserResponse::Leave(LeaveReason::PatienceExhausted)
        );
        assert_eq!(s.answered_questions(), 2);
    }

    #[test]
    fn all_asked_mode_counts_rejections() {
        let (c, pool) = setup();
        let profile = UserProfile {
            tolerance: 5,
            patience: Patience::Limited(2),
            patience_mode: PatienceMode::AllAsked,
        };
        let mut s = UserState::new(profile, &c.conversations[0], &pool).unwrap();
        assert!(matches!(s.respond(AgentMove::Ask(id_of(&pool, "a1"))).unwrap(), UserResponse::Feedback(_)));
        assert_eq!(s.respond(AgentMove::Ask(negative(&pool))).unwrap(), UserResponse::Rejected);
        assert_eq!(
            s.respond(AgentMove::Ask(id_of(&pool, "a2"))).unwrap(),
            UserResponse::Leave(LeaveReason::PatienceExhausted)
        );
    }

    #[test]
    fn answer_ends_episode() {
        let (c, pool) = setup();
        let mut s = UserState::new(UserProfile::new(0, Patience::Limited(1)), &c.conversations[0], &pool).unwrap();
        assert_eq!(user_respond(AgentMove::Answer, &mut s).unwrap(), UserResponse::AnswerReceived);
        assert!(s.is_terminal());
    }

    #[test]
    fn patience_parsing() {
        assert_eq!("inf".parse::<Patience>().unwrap(), Patience::Unbounded);
        assert_eq!("2".parse::<Patience>().unwrap(), Patience::Limited(2));
        assert!("0".parse::<Patience>().is_err());
        assert!("-1".parse::<Patience>().is_err());
        let p: Patience = serde_json::from_str("\"inf\"").unwrap();
        assert_eq!(p, Patience::Unbounded);
        let p: Patience = serde_json::from_str("3").unwrap();
        assert_eq!(p, Patience::Limited(3));
        assert!(serde_json::from_str::<Patience>("-1").is_err());
        assert_eq!(serde_json::to_string(&Patience::Unbounded).unwrap(), "\"inf\"");
    }
}
