//! Decision makers: the risk-control Q-network, its state featurizer, and the
//! baseline policies (fixed question budgets, context classifier, oracle).

mod ctxpred;
mod dqn;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::encoding::Embedder;

pub use ctxpred::{
    ctxpred_action, ctxpred_examples, train_ctxpred, CtxPredConfig, CtxPredParams,
};
pub use dqn::{dqn_forward, DqnCheckpoint, DqnGrad, DqnParams, ForwardCache, DEFAULT_HIDDEN};

/// Separator between context segments.
pub const SEP: &str = " [SEP] ";
pub const DEFAULT_K_Q: usize = 1;
pub const DEFAULT_SCORE_SLOTS: usize = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("ranked answer list is empty")]
    EmptyRanking,
    #[error("training labels are all {0}; need both ask and answer examples")]
    DegenerateLabels(&'static str),
    #[error("no safe action (answer rr {answer_rr}, top question relevant {relevant})")]
    NoSafeAction { answer_rr: f64, relevant: bool },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// The two decisions available each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Answer,
    Ask,
}

impl ActionKind {
    pub fn index(self) -> usize {
        match self {
            ActionKind::Answer => 0,
            ActionKind::Ask => 1,
        }
    }
}

/// Which parts of the state the network sees. Masked slots are zeroed, the
/// layout stays the same.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMask {
    #[default]
    Full,
    TextOnly,
    ScoreOnly,
}

impl FromStr for FeatureMask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(FeatureMask::Full),
            "text_only" => Ok(FeatureMask::TextOnly),
            "score_only" => Ok(FeatureMask::ScoreOnly),
            other => Err(format!("unknown feature mask {other:?}")),
        }
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMask::Full => "full",
            FeatureMask::TextOnly => "text_only",
            FeatureMask::ScoreOnly => "score_only",
        })
    }
}

/// `[q; h; a1; cq1..cq_kq; s_ans 1..slots; s_cq 1..slots]`
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateLayout {
    pub dim: usize,
    pub k_q: usize,
    pub score_slots: usize,
    pub mask: FeatureMask,
}

impl StateLayout {
    pub fn new(dim: usize, mask: FeatureMask) -> Self {
        StateLayout {
            dim,
            k_q: DEFAULT_K_Q,
            score_slots: DEFAULT_SCORE_SLOTS,
            mask,
        }
    }

    pub fn text_len(&self) -> usize {
        self.dim * (3 + self.k_q)
    }

    pub fn total_len(&self) -> usize {
        self.text_len() + 2 * self.score_slots
    }

    pub fn with_mask(mut self, mask: FeatureMask) -> Self {
        self.mask = mask;
        self
    }

    pub fn query_range(&self) -> std::ops::Range<usize> {
        0..self.dim
    }

    pub fn history_range(&self) -> std::ops::Range<usize> {
        self.dim..2 * self.dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionState {
    pub layout: StateLayout,
    pub values: Vec<f64>,
}

impl DecisionState {
    pub fn history(&self) -> &[f64] {
        &self.values[self.layout.history_range()]
    }

    /// Re-applies a mask, zeroing the slots it hides.
    pub fn masked(&self, mask: FeatureMask) -> DecisionState {
        let mut values = self.values.clone();
        let split = self.layout.text_len();
        match mask {
            FeatureMask::Full => {}
            FeatureMask::TextOnly => values[split..].iter_mut().for_each(|x| *x = 0.0),
            FeatureMask::ScoreOnly => values[..split].iter_mut().for_each(|x| *x = 0.0),
        }
        DecisionState {
            layout: self.layout.with_mask(mask),
            values,
        }
    }
}

/// Builds the decision state from the current context and ranked lists
/// (best first). Missing question slots and score slots are zero-padded; an
/// empty question list is allowed and leaves those slots at zero.
pub fn featurize_state(
    query: &str,
    history: &str,
    answers: &[(&str, f64)],
    questions: &[(&str, f64)],
    embedder: &Embedder,
    layout: &StateLayout,
) -> Result<DecisionState, PolicyError> {
    if embedder.dim() != layout.dim {
        return Err(PolicyError::DimensionMismatch {
            expected: layout.dim,
            got: embedder.dim(),
        });
    }
    if answers.is_empty() {
        return Err(PolicyError::EmptyRanking);
    }
    let d = layout.dim;
    let mut values = vec![0.0; layout.total_len()];
    values[..d].copy_from_slice(&embedder.embed(query));
    if !history.trim().is_empty() {
        values[d..2 * d].copy_from_slice(&embedder.embed(history));
    }
    values[2 * d..3 * d].copy_from_slice(&embedder.embed(answers[0].0));
    for (slot, (text, _)) in questions.iter().take(layout.k_q).enumerate() {
        let start = (3 + slot) * d;
        values[start..start + d].copy_from_slice(&embedder.embed(text));
    }
    let base = layout.text_len();
    for (i, (_, s)) in answers.iter().take(layout.score_slots).enumerate() {
        values[base + i] = *s;
    }
    for (i, (_, s)) in questions.iter().take(layout.score_slots).enumerate() {
        values[base + layout.score_slots + i] = *s;
    }
    let full = DecisionState {
        layout: layout.with_mask(FeatureMask::Full),
        values,
    };
    Ok(full.masked(layout.mask))
}

pub enum Selection<'a> {
    Greedy,
    EpsilonGreedy { epsilon: f64, rng: &'a mut dyn RngCore },
}

/// Argmax over `(q_answer, q_ask)`; ties go to answering.
pub fn greedy(q: [f64; 2]) -> ActionKind {
    if q[1] > q[0] {
        ActionKind::Ask
    } else {
        ActionKind::Answer
    }
}

pub fn select_action(q: [f64; 2], mode: Selection<'_>) -> ActionKind {
    match mode {
        Selection::Greedy => greedy(q),
        Selection::EpsilonGreedy { epsilon, rng } => {
            if rng.random::<f64>() < epsilon {
                if rng.random_bool(0.5) {
                    ActionKind::Ask
                } else {
                    ActionKind::Answer
                }
            } else {
                greedy(q)
            }
        }
    }
}

/// Fixed-budget baseline: ask until `budget` questions were answered.
pub fn baseline_action(budget: u32, answered_questions: u32) -> ActionKind {
    if answered_questions < budget {
        ActionKind::Ask
    } else {
        ActionKind::Answer
    }
}

/// Answers ranked below `1/max(tau, 1)` are suboptimal when a relevant
/// question was on offer; asking an irrelevant question is always worse.
pub fn is_worse_decision(
    action: ActionKind,
    answer_rr: f64,
    top_question_relevant: bool,
    tolerance: u32,
) -> bool {
    match action {
        ActionKind::Ask => !top_question_relevant,
        ActionKind::Answer => {
            top_question_relevant && answer_rr < 1.0 / f64::from(tolerance.max(1))
        }
    }
}

/// Never takes a worse decision; answers when both actions are safe.
pub fn oracle_action(
    answer_rr: f64,
    top_question_relevant: bool,
    tolerance: u32,
) -> Result<ActionKind, PolicyError> {
    for action in [ActionKind::Answer, ActionKind::Ask] {
        if !is_worse_decision(action, answer_rr, top_question_relevant, tolerance) {
            return Ok(action);
        }
    }
    Err(PolicyError::NoSafeAction {
        answer_rr,
        relevant: top_question_relevant,
    })
}

/// `cq [SEP] feedback [SEP] cq [SEP] feedback ...`
pub fn history_text<S: AsRef<str>>(pairs: &[(S, S)]) -> String {
    let mut out = String::new();
    for (q, f) in pairs {
        if !out.is_empty() {
            out.push_str(SEP);
        }
        out.push_str(q.as_ref());
        out.push_str(SEP);
        out.push_str(f.as_ref());
    }
    out
}

/// The query followed by the history, if any.
pub fn context_text(query: &str, history: &str) -> String {
    if history.is_empty() {
        query.to_owned()
    } else {
        format!("{query}{SEP}{history}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::IdfTable;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn embedder(dim: usize) -> Embedder {
        Embedder::new(
            IdfTable::from_documents(["disk full error", "printer offline", "wifi"]).unwrap(),
            dim,
        )
        .unwrap()
    }

    #[test]
    fn featurize_layout_and_padding() {
        let e = embedder(16);
        let layout = StateLayout::new(16, FeatureMask::Full);
        let s = featurize_state(
            "disk full",
            "",
            &[("printer offline", 0.9), ("wifi", 0.2)],
            &[("error", 0.7)],
            &e,
            &layout,
        )
        .unwrap();
        assert_eq!(s.values.len(), 16 * 4 + 6);
        assert!(s.history().iter().all(|&x| x == 0.0));
        let base = layout.text_len();
        assert_eq!(&s.values[base..base + 3], &[0.9, 0.2, 0.0]);
        assert_eq!(&s.values[base + 3..], &[0.7, 0.0, 0.0]);
        assert_eq!(&s.values[..16], e.embed("disk full").as_slice());
    }

    #[test]
    fn masks_zero_slots_but_keep_layout() {
        let e = embedder(16);
        let full_layout = StateLayout::new(16, FeatureMask::Full);
        let args = (
            "disk full",
            "which disk [SEP] the system disk",
            [("printer offline", 0.9)],
            [("error", 0.7)],
        );
        let full = featurize_state(args.0, args.1, &args.2, &args.3, &e, &full_layout).unwrap();
        for mask in [FeatureMask::TextOnly, FeatureMask::ScoreOnly] {
            let m = featurize_state(args.0, args.1, &args.2, &args.3, &e, &full_layout.with_mask(mask)).unwrap();
            assert_eq!(m.values.len(), full.values.len());
            for (i, (a, b)) in full.values.iter().zip(&m.values).enumerate() {
                let text_slot = i < full_layout.text_len();
                let hidden = match mask {
                    FeatureMask::TextOnly => !text_slot,
                    FeatureMask::ScoreOnly => text_slot,
                    FeatureMask::Full => false,
                };
                if hidden {
                    assert_eq!(*b, 0.0);
                } else {
                    assert_eq!(a, b);
                }
            }
        }
        let score_only = full.masked(FeatureMask::ScoreOnly);
        assert_eq!(score_only.values[full_layout.text_len()], 0.9);
    }

    #[test]
    fn featurize_errors() {
        let e = embedder(16);
        let layout = StateLayout::new(16, FeatureMask::Full);
        assert_eq!(
            featurize_state("q", "", &[], &[("x", 1.0)], &e, &layout),
            Err(PolicyError::EmptyRanking)
        );
        let wrong = StateLayout::new(32, FeatureMask::Full);
        assert!(matches!(
            featurize_state("q", "", &[("a", 1.0)], &[], &e, &wrong),
            Err(PolicyError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn greedy_selection() {
        assert_eq!(select_action([0.6, 0.2], Selection::Greedy), ActionKind::Answer);
        assert_eq!(select_action([0.2, 0.6], Selection::Greedy), ActionKind::Ask);
        assert_eq!(select_action([0.4, 0.4], Selection::Greedy), ActionKind::Answer);
        for c in [-3.0, 0.5, 10.0] {
            assert_eq!(greedy([0.2 + c, 0.6 + c]), ActionKind::Ask);
        }
    }

    #[test]
    fn epsilon_one_is_a_fair_coin() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 10_000;
        let asks = (0..n)
            .filter(|_| {
                select_action([1.0, 0.0], Selection::EpsilonGreedy { epsilon: 1.0, rng: &mut rng })
                    == ActionKind::Ask
            })
            .count();
        let rate = asks as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 0.02, "ask rate {rate}");
        // epsilon 0 is greedy
        for _ in 0..100 {
            assert_eq!(
                select_action([1.0, 0.0], Selection::EpsilonGreedy { epsilon: 0.0, rng: &mut rng }),
                ActionKind::Answer
            );
        }
    }

    #[test]
    fn fixed_budget_baselines() {
        assert_eq!(baseline_action(0, 0), ActionKind::Answer);
        assert_eq!(baseline_action(0, 3), ActionKind::Answer);
        assert_eq!(baseline_action(1, 0), ActionKind::Ask);
        assert_eq!(baseline_action(1, 1), ActionKind::Answer);
        assert_eq!(baseline_action(2, 1), ActionKind::Ask);
    }

    #[test]
    fn worse_decision_predicate() {
        assert!(is_worse_decision(ActionKind::Ask, 1.0, false, 0));
        assert!(!is_worse_decision(ActionKind::Ask, 0.0, true, 0));
        assert!(is_worse_decision(ActionKind::Answer, 1.0 / 3.0, true, 2));
        assert!(!is_worse_decision(ActionKind::Answer, 0.5, true, 2));
        assert!(!is_worse_decision(ActionKind::Answer, 1.0, true, 0));
        assert!(!is_worse_decision(ActionKind::Answer, 0.0, false, 0));
        // tau = 0 uses the same threshold as tau = 1
        assert!(is_worse_decision(ActionKind::Answer, 0.5, true, 0));
    }

    #[test]
    fn oracle_choices() {
        assert_eq!(oracle_action(0.1, false, 0).unwrap(), ActionKind::Answer);
        assert_eq!(oracle_action(1.0, true, 0).unwrap(), ActionKind::Answer);
        assert_eq!(oracle_action(0.25, true, 1).unwrap(), ActionKind::Ask);
        assert_eq!(oracle_action(0.5, true, 2).unwrap(), ActionKind::Answer);
    }

    #[test]
    fn context_formatting() {
        assert_eq!(history_text::<&str>(&[]), "");
        assert_eq!(history_text(&[("cq1", "fb1"), ("cq2", "fb2")]), "cq1 [SEP] fb1 [SEP] cq2 [SEP] fb2");
        assert_eq!(context_text("q", ""), "q");
        assert_eq!(context_text("q", "cq [SEP] fb"), "q [SEP] cq [SEP] fb");
    }
}
