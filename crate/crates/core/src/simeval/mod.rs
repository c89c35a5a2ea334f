//! Whole-conversation episodes against the simulated user, plus metrics,
//! significance testing and report writing.
//!
//! Each round the answer pool (fixed for the episode) and the remaining
//! question pool are ranked against the current context, the policy picks
//! answer or ask, and the user responds. Asked questions leave the pool
//! whether they were relevant or not, so an episode takes at most
//! `|question pool| + 1` decisions.

mod metrics;
mod policies;
mod report;

use serde::{Deserialize, Serialize};

use crate::corpus::{Candidate, CandidateId, CandidatePool, Conversation};
use crate::encoding::Embedder;
use crate::policy::{
    context_text, featurize_state, history_text, is_worse_decision, ActionKind, DecisionState,
    PolicyError, StateLayout,
};
use crate::ranker::{reciprocal_rank, Ranker, RankerError, RR_CUTOFF};
use crate::usersim::{AgentMove, LeaveReason, UserProfile, UserResponse, UserSimError, UserState};

pub use metrics::{
    compute_metrics, significance_test, summarize_folds, FoldMetrics, MetricsError, RunSummary,
    SignificanceResult,
};
pub use policies::{
    CtxPredPolicy, DqnPolicy, FixedBudget, OraclePolicy, PolicyKind, RandomPolicy, Scripted,
};
pub use report::{
    build_report, format_report, read_episode_log, summary_from_log, write_episode_log, write_report,
    EpisodeLogRecord, PolicyRun, Report, ReportRow,
};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    User(#[from] UserSimError),
    #[error("policy error: {0}")]
    Decision(String),
}

/// What one round looks like to a policy. `answer_rr` and
/// `top_question_relevant` are ground truth; only the oracle may use them.
#[derive(Debug)]
pub struct RoundView<'a> {
    pub round: u32,
    /// Unmasked decision state.
    pub state: &'a DecisionState,
    pub answer_rr: f64,
    pub top_question: Option<CandidateId>,
    pub top_question_relevant: bool,
    pub answered_questions: u32,
    pub tolerance: u32,
}

/// Result of the action the engine actually applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Answered { rr: f64 },
    AskAccepted,
    AskRejected,
    UserLeft(LeaveReason),
}

pub trait Policy {
    fn decide(&mut self, view: &RoundView<'_>) -> Result<ActionKind, SimError>;

    /// Called after the user responded. `taken` can differ from the decision
    /// when an ask was requested with no question left.
    fn observe(&mut self, _taken: ActionKind, _outcome: &StepOutcome) -> Result<(), SimError> {
        Ok(())
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn decide(&mut self, view: &RoundView<'_>) -> Result<ActionKind, SimError> {
        (**self).decide(view)
    }
    fn observe(&mut self, taken: ActionKind, outcome: &StepOutcome) -> Result<(), SimError> {
        (**self).observe(taken, outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub round: u32,
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asked: Option<CandidateId>,
    pub was_worse: bool,
    pub answer_rr_at_decision: f64,
    pub top_question_relevant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terminal {
    AnsweredCorrectly,
    AnsweredIncorrectly { rr: f64 },
    UserLeft { reason: LeaveReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub conversation_id: String,
    pub terminal: Terminal,
    pub rr: f64,
    pub decisions: Vec<DecisionRecord>,
    pub questions_answered: u32,
    pub irrelevant_seen: u32,
}

impl EpisodeResult {
    pub fn worse_decisions(&self) -> usize {
        self.decisions.iter().filter(|d| d.was_worse).count()
    }

    pub fn answered_correctly(&self) -> bool {
        matches!(self.terminal, Terminal::AnsweredCorrectly)
    }
}

/// Everything an episode needs besides the policy.
#[derive(Clone, Copy)]
pub struct EpisodeEnv<'a> {
    pub answer_ranker: &'a dyn Ranker,
    pub question_ranker: &'a dyn Ranker,
    pub embedder: &'a Embedder,
    pub layout: StateLayout,
    pub profile: UserProfile,
}

fn top_entries<'c>(
    scores: &crate::ranker::RankerScores,
    candidates: &'c [Candidate],
    n: usize,
) -> Vec<(&'c str, f64)> {
    scores
        .ranking
        .iter()
        .take(n)
        .map(|&i| (candidates[i].text.as_str(), scores.scores[i].1))
        .collect()
}

/// Runs one conversation to completion.
pub fn run_episode(
    conversation: &Conversation,
    pool: &CandidatePool,
    env: &EpisodeEnv<'_>,
    policy: &mut dyn Policy,
) -> Result<EpisodeResult, SimError> {
    let mut user = UserState::new(env.profile, conversation, pool)?;
    let positive_answer = [pool.positive_answer()];
    let query = conversation.query();
    let tolerance = env.profile.tolerance;
    let slots = env.layout.score_slots.max(1);
    let full_layout = env.layout.with_mask(crate::policy::FeatureMask::Full);

    let mut remaining: Vec<Candidate> = pool.question_candidates.clone();
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut decisions = Vec::new();
    let mut round = 1u32;

    let (terminal, rr) = loop {
        let history = history_text(&pairs);
        let context = context_text(query, &history);
        let answer_scores = env.answer_ranker.score(&context, &pool.answer_candidates)?;
        let answer_rr = reciprocal_rank(&answer_scores, &positive_answer, RR_CUTOFF)?;
        let question_scores = if remaining.is_empty() {
            None
        } else {
            Some(env.question_ranker.score(&context, &remaining)?)
        };
        let top_question = question_scores.as_ref().map(|s| s.top().0);
        let top_question_relevant = match top_question {
            Some(id) => user.judge_question(id)?,
            None => false,
        };
        let answers = top_entries(&answer_scores, &pool.answer_candidates, slots.max(1));
        let questions = question_scores
            .as_ref()
            .map(|s| top_entries(s, &remaining, slots.max(env.layout.k_q)))
            .unwrap_or_default();
        let state = featurize_state(
            query,
            &history,
            &answers,
            &questions,
            env.embedder,
            &full_layout,
        )?;
        let view = RoundView {
            round,
            state: &state,
            answer_rr,
            top_question,
            top_question_relevant,
            answered_questions: user.answered_questions(),
            tolerance,
        };
        let mut action = policy.decide(&view)?;
        if action == ActionKind::Ask && top_question.is_none() {
            action = ActionKind::Answer;
        }
        decisions.push(DecisionRecord {
            round,
            action,
            asked: if action == ActionKind::Ask { top_question } else { None },
            was_worse: is_worse_decision(action, answer_rr, top_question_relevant, tolerance),
            answer_rr_at_decision: answer_rr,
            top_question_relevant,
        });

        match action {
            ActionKind::Answer => {
                user.respond(AgentMove::Answer)?;
                policy.observe(action, &StepOutcome::Answered { rr: answer_rr })?;
                let terminal = if answer_scores.top().0 == positive_answer[0] {
                    Terminal::AnsweredCorrectly
                } else {
                    Terminal::AnsweredIncorrectly { rr: answer_rr }
                };
                break (terminal, answer_rr);
            }
            ActionKind::Ask => {
                let id = top_question.expect("ask requires a question");
                let pos = remaining.iter().position(|c| c.id == id).expect("top is remaining");
                match user.respond(AgentMove::Ask(id))? {
                    UserResponse::Feedback(text) => {
                        let asked = remaining.remove(pos);
                        pairs.push((asked.text, text));
                        round += 1;
                        policy.observe(action, &StepOutcome::AskAccepted)?;
                    }
                    UserResponse::Rejected => {
                        remaining.remove(pos);
                        policy.observe(action, &StepOutcome::AskRejected)?;
                    }
                    UserResponse::Leave(reason) => {
                        policy.observe(action, &StepOutcome::UserLeft(reason))?;
                        break (Terminal::UserLeft { reason }, 0.0);
                    }
                    UserResponse::AnswerReceived => {
                        return Err(SimError::Decision("user acknowledged an answer to a question".into()))
                    }
                }
            }
        }
    };

    Ok(EpisodeResult {
        conversation_id: conversation.id.clone(),
        terminal,
        rr,
        decisions,
        questions_answered: user.answered_questions(),
        irrelevant_seen: user.irrelevant_seen(),
    })
}

/// Runs every `(conversation, pool)` pair with a fresh policy from `make_policy`,
/// using up to `workers` threads. Results come back in input order.
pub fn run_episodes<F>(
    items: &[(&Conversation, &CandidatePool)],
    env: &EpisodeEnv<'_>,
    make_policy: F,
    workers: usize,
) -> Result<Vec<EpisodeResult>, SimError>
where
    F: Fn() -> Box<dyn Policy + Send> + Sync,
{
    use rayon::prelude::*;
    let run = |(conv, pool): &(&Conversation, &CandidatePool)| {
        let mut policy = make_policy();
        run_episode(conv, pool, env, policy.as_mut())
    };
    if workers <= 1 {
        return items.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SimError::Decision(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(run).collect())
}
