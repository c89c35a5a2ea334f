use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Policy, RoundView, SimError};
use crate::policy::{
    baseline_action, ctxpred_action, greedy, oracle_action, ActionKind, CtxPredParams, DqnParams,
    FeatureMask,
};

/// Every decision maker the harness can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "rcsq")]
    Rcsq,
    /// Text features only.
    #[serde(rename = "rcsq-s")]
    RcsqS,
    /// Score features only.
    #[serde(rename = "rcsq-t")]
    RcsqT,
    #[serde(rename = "q0a")]
    Q0a,
    #[serde(rename = "q1a")]
    Q1a,
    #[serde(rename = "q2a")]
    Q2a,
    #[serde(rename = "ctxpred")]
    CtxPred,
    #[serde(rename = "oracle")]
    Oracle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Rcsq,
        PolicyKind::RcsqS,
        PolicyKind::RcsqT,
        PolicyKind::Q0a,
        PolicyKind::Q1a,
        PolicyKind::Q2a,
        PolicyKind::CtxPred,
        PolicyKind::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Rcsq => "rcsq",
            PolicyKind::RcsqS => "rcsq-s",
            PolicyKind::RcsqT => "rcsq-t",
            PolicyKind::Q0a => "q0a",
            PolicyKind::Q1a => "q1a",
            PolicyKind::Q2a => "q2a",
            PolicyKind::CtxPred => "ctxpred",
            PolicyKind::Oracle => "oracle",
        }
    }

    /// Feature mask for the Q-network variants.
    pub fn mask(self) -> Option<FeatureMask> {
        match self {
            PolicyKind::Rcsq => Some(FeatureMask::Full),
            PolicyKind::RcsqS => Some(FeatureMask::TextOnly),
            PolicyKind::RcsqT => Some(FeatureMask::ScoreOnly),
            _ => None,
        }
    }

    /// Learned-from-data baselines, excluding the oracle.
    pub fn is_baseline(self) -> bool {
        matches!(
            self,
            PolicyKind::Q0a | PolicyKind::Q1a | PolicyKind::Q2a | PolicyKind::CtxPred
        )
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

/// Asks until `budget` questions were answered, then answers.
#[derive(Debug, Clone, Copy)]
pub struct FixedBudget(pub u32);

impl Policy for FixedBudget {
    fn decide(&mut self, view: &RoundView<'_>) -> Result<ActionKind, SimError> {
        Ok(baseline_action(self.0, view.answered_questions))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn decide(&mut self, view: &RoundView<'_>) -> Result<ActionKind, SimError> {
        Ok(oracle_action(
            view.answer_rr,
            view.top_question_relevant,
            view.tolerance,
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct CtxPredPolicy(pub CtxPredParams);

impl Policy for CtxPredPolicy {
    fn decide(&mut self, view: &RoundView<'_>) -> Result<ActionKind, SimError> {
        Ok(ctxpred_action(view.state.history(), &self.0))
    }
}

/// Greedy Q-network policy.
#[derive(Debug, Clone)]
pub struct DqnPolicy {
    pub params: std::sync::Arc<DqnParams>,
    pub mask: FeatureMask,
}

impl Policy for DqnPolicy {
    fn decide(&mut self, view: &RoundView<'_>) -> Result<ActionKind, SimError> {
        let s = view.state.masked(self.mask);
        Ok(greedy(self.params.forward(&s.values)?))
    }
}

/// Asks with a fixed probability. Used for stress tests.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    p_ask: f64,
}

impl RandomPolicy {
    pub fn new(p_ask: f64, seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
            p_ask,
        }
    }
}

impl Policy for RandomPolicy {
    fn decide(&mut self, _view: &RoundView<'_>) -> Result<ActionKind, SimError> {
        Ok(if self.rng.random_bool(self.p_ask) {
            ActionKind::Ask
        } else {
            ActionKind::Answer
        })
    }
}

/// Plays a fixed sequence of decisions, answering once it runs out.
#[derive(Debug, Clone)]
pub struct Scripted {
    actions: Vec<ActionKind>,
    next: usize,
}

impl Scripted {
    pub fn new(actions: Vec<ActionKind>) -> Self {
        Scripted { actions, next: 0 }
    }
}

impl Policy for Scripted {
    fn decide(&mut self, _view: &RoundView<'_>) -> Result<ActionKind, SimError> {
        let a = self.actions.get(self.next).copied().unwrap_or(ActionKind::Answer);
        self.next += 1;
        Ok(a)
    }
}
