//! Q-learning for the answer/ask network: targets, replay, updates and the
//! episode-driven training loop.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidatePool, Conversation};
use crate::policy::{
    greedy, select_action, ActionKind, DecisionState, DqnGrad, DqnParams, FeatureMask, PolicyError,
    Selection, DEFAULT_HIDDEN,
};
use crate::simeval::{run_episode, EpisodeEnv, Policy, RoundView, SimError, StepOutcome, Terminal};

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("loss became non-finite ({loss}) at update {update}")]
    NonFiniteLoss { loss: f64, update: u64 },
    #[error("replay buffer holds {have} transitions, {need} required")]
    BufferTooSmall { have: usize, need: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training conversations")]
    NoEpisodes,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient step with L2 decay.
    Sgd,
    /// Adam (β1 0.9, β2 0.999, ε 1e-8) on the L2-regularized gradient.
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RLConfig {
    pub r_cq: f64,
    pub p_cq: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    pub l2: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub ask_oversample: usize,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub episodes: usize,
    pub hidden_width: usize,
    pub optimizer: Optimizer,
}

impl Default for RLConfig {
    fn default() -> Self {
        RLConfig {
            r_cq: 0.11,
            p_cq: -0.89,
            sigma: 0.89,
            learning_rate: 1e-4,
            l2: 1e-2,
            replay_capacity: 10_000,
            batch_size: 32,
            warmup: 100,
            ask_oversample: 2,
            epsilon_start: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.05,
            episodes: 2000,
            hidden_width: DEFAULT_HIDDEN,
            optimizer: Optimizer::Adam,
        }
    }
}

impl RLConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_owned()));
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad("sigma must lie in (0, 1)");
        }
        if !(self.r_cq > 0.0 && self.p_cq < 0.0) {
            return bad("r_cq must be positive and p_cq negative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || self.l2 < 0.0 {
            return bad("learning_rate and l2 must be non-negative");
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.hidden_width == 0 {
            return bad("batch_size, replay_capacity and hidden_width must be positive");
        }
        if self.warmup > self.replay_capacity {
            return bad("warmup cannot exceed replay_capacity");
        }
        if self.ask_oversample == 0 {
            return bad("ask_oversample must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_min)
            || !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0)
        {
            return bad("epsilon values must lie in [0, 1] and decay in (0, 1]");
        }
        Ok(())
    }

    /// Exploration rate used during episode `episode` (0-based).
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let e = self.epsilon_start * self.epsilon_decay.powi(episode.min(i32::MAX as usize) as i32);
        e.max(self.epsilon_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    AnswerReturned { rr: f64 },
    AskedRelevant { next_state: Arc<DecisionState> },
    AskedIrrelevant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Arc<DecisionState>,
    pub action: ActionKind,
    pub outcome: Outcome,
}

impl Transition {
    pub fn is_terminal(&self) -> bool {
        !matches!(self.outcome, Outcome::AskedRelevant { .. })
    }
}

/// Regression target for the taken action. The bootstrap uses the live
/// network with its maximum clamped to `[0, 1]`.
pub fn compute_target(t: &Transition, params: &DqnParams, cfg: &RLConfig) -> Result<f64, PolicyError> {
    Ok(match &t.outcome {
        Outcome::AnswerReturned { rr } => *rr,
        Outcome::AskedIrrelevant => cfg.p_cq,
        Outcome::AskedRelevant { next_state } => {
            let q = params.forward(&next_state.values)?;
            cfg.r_cq + cfg.sigma * q[0].max(q[1]).clamp(0.0, 1.0)
        }
    })
}

/// FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity: capacity.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    /// Drops answers with zero reward, inserts asks `ask_oversample` times.
    /// Returns how many copies were inserted.
    pub fn store(&mut self, t: Transition, cfg: &RLConfig) -> usize {
        match (&t.action, &t.outcome) {
            (_, Outcome::AnswerReturned { rr }) if *rr == 0.0 => 0,
            (ActionKind::Ask, _) => {
                for _ in 1..cfg.ask_oversample {
                    self.push(t.clone());
                }
                self.push(t);
                cfg.ask_oversample
            }
            _ => {
                self.push(t);
                1
            }
        }
    }

    /// Uniform sample with replacement. Needs at least `warmup` items.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        batch: usize,
        warmup: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>, RlError> {
        let need = warmup.max(1);
        if self.items.len() < need {
            return Err(RlError::BufferTooSmall {
                have: self.items.len(),
                need,
            });
        }
        Ok((0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

/// Mean squared error over the batch on the taken action's output, and its
/// gradient. Targets are computed with the current parameters and then held
/// constant. No regularization term.
pub fn batch_loss_and_grad(
    params: &DqnParams,
    batch: &[&Transition],
    cfg: &RLConfig,
) -> Result<(f64, DqnGrad), PolicyError> {
    let targets = batch
        .iter()
        .map(|t| compute_target(t, params, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    loss_and_grad_with_targets(params, batch, &targets)
}

/// The same loss with explicit targets, one per transition.
pub fn loss_and_grad_with_targets(
    params: &DqnParams,
    batch: &[&Transition],
    targets: &[f64],
) -> Result<(f64, DqnGrad), PolicyError> {
    assert_eq!(batch.len(), targets.len(), "one target per transition");
    let mut grad = DqnGrad::zeros_like(params);
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (t, &y) in batch.iter().zip(targets) {
        let cache = params.forward_cached(&t.state.values)?;
        let a = t.action.index();
        let resid = cache.out[a] - y;
        loss += resid * resid;
        let mut d_out = [0.0; 2];
        d_out[a] = 2.0 * resid / n;
        params.backward(&t.state.values, &cache, d_out, &mut grad);
    }
    Ok((loss / n, grad))
}

#[derive(Debug, Clone)]
struct AdamState {
    m: DqnGrad,
    v: DqnGrad,
    t: i32,
}

/// Owns the optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Learner {
    cfg: RLConfig,
    adam: Option<AdamState>,
    updates: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn slices_mut(p: &mut DqnParams) -> [&mut [f64]; 4] {
    [&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2]
}

fn grad_slices(g: &DqnGrad) -> [&[f64]; 4] {
    [&g.w1, &g.b1, &g.w2, &g.b2]
}

fn grad_slices_mut(g: &mut DqnGrad) -> [&mut [f64]; 4] {
    [&mut g.w1, &mut g.b1, &mut g.w2, &mut g.b2]
}

impl Learner {
    pub fn new(cfg: RLConfig, params: &DqnParams) -> Self {
        let adam = (cfg.optimizer == Optimizer::Adam).then(|| AdamState {
            m: DqnGrad::zeros_like(params),
            v: DqnGrad::zeros_like(params),
            t: 0,
        });
        Learner {
            cfg,
            adam,
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One optimizer step on the batch. Returns the loss before the step.
    pub fn dqn_update(&mut self, params: &mut DqnParams, batch: &[&Transition]) -> Result<f64, RlError> {
        if batch.is_empty() {
            return Err(RlError::InvalidConfig("empty batch".into()));
        }
        let (loss, mut grad) = batch_loss_and_grad(params, batch, &self.cfg)?;
        self.updates += 1;
        if !loss.is_finite() {
            return Err(RlError::NonFiniteLoss {
                loss,
                update: self.updates,
            });
        }
        let (lr, l2) = (self.cfg.learning_rate, self.cfg.l2);
        {
            let ps = slices_mut(params);
            let gs = grad_slices_mut(&mut grad);
            for (p, g) in ps.into_iter().zip(gs) {
                for (gi, pi) in g.iter_mut().zip(p.iter()) {
                    *gi += l2 * pi;
                }
            }
        }
        match &mut self.adam {
            None => {
                for (p, g) in slices_mut(params).into_iter().zip(grad_slices(&grad)) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            Some(st) => {
                st.t += 1;
                let c1 = 1.0 - BETA1.powi(st.t);
                let c2 = 1.0 - BETA2.powi(st.t);
                let ps = slices_mut(params);
                let gs = grad_slices(&grad);
                let ms = grad_slices_mut(&mut st.m);
                let vs = grad_slices_mut(&mut st.v);
                for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * gi;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * gi * gi;
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        if !params.is_finite() {
            return Err(RlError::NonFiniteLoss {
                loss: f64::NAN,
                update: self.updates,
            });
        }
        Ok(loss)
    }
}

/// Xavier-uniform weights and zero biases.
pub fn init_params(input_dim: usize, hidden: usize, seed: u64) -> DqnParams {
    DqnParams::init(input_dim, hidden, seed)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub episode: usize,
    pub conversation_id: String,
    pub epsilon: f64,
    pub decisions: usize,
    pub outcome: Terminal,
    pub rr: f64,
    /// `None` before the first update.
    pub loss_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub params: DqnParams,
    pub mask: FeatureMask,
    pub log: Vec<TrainLogRecord>,
    pub updates: u64,
}

struct Pending {
    state: Arc<DecisionState>,
    action: ActionKind,
}

/// The ε-greedy agent used while training. It owns the network, the replay
/// buffer and the optimizer, and learns after every decision.
struct TrainingAgent {
    params: DqnParams,
    learner: Learner,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    cfg: RLConfig,
    mask: FeatureMask,
    epsilon: f64,
    /// A relevant ask waiting for the state it led to.
    awaiting_next: Option<Pending>,
    current: Option<Pending>,
    losses: Vec<f64>,
    failure: Option<RlError>,
}

impl TrainingAgent {
    fn fail(&mut self, e: RlError) -> SimError {
        let msg = e.to_string();
        self.failure = Some(e);
        SimError::Decision(msg)
    }

    fn learn(&mut self) -> Result<(), RlError> {
        if self.buffer.len() < self.cfg.warmup.max(1) {
            return Ok(());
        }
        let batch = self
            .buffer
            .sample(self.cfg.batch_size, self.cfg.warmup, &mut self.rng)?;
        let loss = self.learner.dqn_update(&mut self.params, &batch)?;
        self.losses.push(loss);
        Ok(())
    }

    fn record(&mut self, t: Transition) -> Result<(), RlError> {
        self.buffer.store(t, &self.cfg);
        self.learn()
    }
}

impl Policy for TrainingAgent {
    fn decide(&mut self, view: &RoundView<'_>) -> Result<ActionKind, SimError> {
        let state = Arc::new(view.state.masked(self.mask));
        if let Some(prev) = self.awaiting_next.take() {
            let t = Transition {
                state: prev.state,
                action: prev.action,
                outcome: Outcome::AskedRelevant {
                    next_state: state.clone(),
                },
            };
            if let Err(e) = self.record(t) {
                return Err(self.fail(e));
            }
        }
        let q = self.params.forward(&state.values)?;
        let action = select_action(
            q,
            Selection::EpsilonGreedy {
                epsilon: self.epsilon,
                rng: &mut self.rng,
            },
        );
        self.current = Some(Pending { state, action });
        Ok(action)
    }

    fn observe(&mut self, taken: ActionKind, outcome: &StepOutcome) -> Result<(), SimError> {
        let Some(mut p) = self.current.take() else {
            return Ok(());
        };
        p.action = taken;
        let result = match *outcome {
            StepOutcome::Answered { rr } => self.record(Transition {
                state: p.state,
                action: taken,
                outcome: Outcome::AnswerReturned { rr },
            }),
            StepOutcome::AskAccepted => {
                self.awaiting_next = Some(p);
                Ok(())
            }
            // A user who leaves after an ask is treated like an irrelevant ask.
            StepOutcome::AskRejected | StepOutcome::UserLeft(_) => self.record(Transition {
                state: p.state,
                action: taken,
                outcome: Outcome::AskedIrrelevant,
            }),
        };
        result.map_err(|e| self.fail(e))
    }
}

/// Trains a network with ε-greedy episodes over `items`, cycling through a
/// seeded shuffle of the training conversations.
pub fn train_policy(
    items: &[(&Conversation, &CandidatePool)],
    env: &EpisodeEnv<'_>,
    cfg: &RLConfig,
    mask: FeatureMask,
    seed: u64,
) -> Result<TrainedPolicy, RlError> {
    cfg.validate()?;
    let input_dim = env.layout.total_len();
    let params = init_params(input_dim, cfg.hidden_width, seed);
    train_from(params, items, env, cfg, mask, seed)
}

/// Like [`train_policy`] but starting from given parameters.
pub fn train_from(
    params: DqnParams,
    items: &[(&Conversation, &CandidatePool)],
    env: &EpisodeEnv<'_>,
    cfg: &RLConfig,
    mask: FeatureMask,
    seed: u64,
) -> Result<TrainedPolicy, RlError> {
    cfg.validate()?;
    if params.input_dim != env.layout.total_len() {
        return Err(PolicyError::DimensionMismatch {
            expected: env.layout.total_len(),
            got: params.input_dim,
        }
        .into());
    }
    if cfg.episodes > 0 && items.is_empty() {
        return Err(RlError::NoEpisodes);
    }
    let mut agent = TrainingAgent {
        learner: Learner::new(*cfg, &params),
        params,
        buffer: ReplayBuffer::new(cfg.replay_capacity),
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_a9e7),
        cfg: *cfg,
        mask,
        epsilon: cfg.epsilon_start,
        awaiting_next: None,
        current: None,
        losses: Vec::new(),
        failure: None,
    };
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let k = episode % items.len();
        if k == 0 {
            order.shuffle(&mut agent.rng);
        }
        let (conv, pool) = items[order[k]];
        agent.epsilon = cfg.epsilon_at(episode);
        agent.losses.clear();
        let result = run_episode(conv, pool, env, &mut agent);
        if let Some(e) = agent.failure.take() {
            return Err(e);
        }
        let result = result?;
        agent.awaiting_next = None;
        log.push(TrainLogRecord {
            episode,
            conversation_id: conv.id.clone(),
            epsilon: agent.epsilon,
            decisions: result.decisions.len(),
            outcome: result.terminal,
            rr: result.rr,
            loss_mean: (!agent.losses.is_empty())
                .then(|| agent.losses.iter().sum::<f64>() / agent.losses.len() as f64),
        });
    }
    Ok(TrainedPolicy {
        updates: agent.learner.updates(),
        params: agent.params,
        mask,
        log,
    })
}

/// Greedy action of a trained network on an unmasked state.
pub fn act_greedy(params: &DqnParams, mask: FeatureMask, state: &DecisionState) -> Result<ActionKind, PolicyError> {
    Ok(greedy(params.forward(&state.masked(mask).values)?))
}
