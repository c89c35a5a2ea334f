//! Run configuration, seed handling and the cross-validated experiment
//! pipeline behind the `train-ranker`, `train-policy` and `simulate` commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::{
    build_pools, parse_corpus, split_folds, CandidatePool, Conversation, Corpus, CorpusError, PoolConfig,
    DEFAULT_POOL_SIZE,
};
use crate::encoding::{fit_idf, Embedder, EncodingError, DEFAULT_DIM};
use crate::policy::{
    ctxpred_examples, history_text, context_text, train_ctxpred, CtxPredConfig, CtxPredParams, DqnCheckpoint,
    DqnParams, FeatureMask, PolicyError, StateLayout, DEFAULT_K_Q, DEFAULT_SCORE_SLOTS,
};
use crate::ranker::{
    train_dot_ranker, BridgePool, DotRanker, Ranker, RankerError, RankerTrainConfig, DEFAULT_BRIDGE_TIMEOUT,
};
use crate::rl::{train_policy, RLConfig, RlError, TrainLogRecord};
use crate::simeval::{
    build_report, run_episodes, CtxPredPolicy, DqnPolicy, EpisodeEnv, FixedBudget, MetricsError, OraclePolicy,
    Policy, PolicyKind, PolicyRun, Report, SimError,
};
use crate::usersim::{Patience, PatienceMode, UserProfile};

pub const SEED_ENV: &str = "CONVRISK_SEED";
pub const MANIFEST_FORMAT: &str = "convrisk-manifest";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("config error at `{0}`: {1}")]
    Config(String, String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Ranker(#[from] RankerError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One simulated user type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub rho: Patience,
    pub tau: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RankerChoice {
    /// Hashed TF-IDF dot-product ranker trained on the training folds.
    Builtin {
        #[serde(default)]
        train: RankerTrainConfig,
    },
    /// A subprocess speaking the JSONL ranker protocol.
    External {
        command: Vec<String>,
        #[serde(default = "default_bridge_timeout")]
        timeout_secs: u64,
        #[serde(default = "one")]
        processes: usize,
    },
}

fn default_bridge_timeout() -> u64 {
    DEFAULT_BRIDGE_TIMEOUT.as_secs()
}

fn one() -> usize {
    1
}

impl Default for RankerChoice {
    fn default() -> Self {
        RankerChoice::Builtin {
            train: RankerTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub pool_size: usize,
    pub dim: usize,
    pub k_q: usize,
    pub score_slots: usize,
    /// Mask for the `rcsq` policy; `rcsq-s` and `rcsq-t` fix their own.
    pub feature_mask: FeatureMask,
    pub profiles: Vec<ProfileSpec>,
    pub patience_mode: PatienceMode,
    pub policies: Vec<PolicyKind>,
    pub rl: RLConfig,
    pub ctxpred: CtxPredConfig,
    pub ranker: RankerChoice,
    pub seed: u64,
    pub folds: usize,
    pub workers: usize,
    pub bootstrap_resamples: usize,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            pool_size: DEFAULT_POOL_SIZE,
            dim: DEFAULT_DIM,
            k_q: DEFAULT_K_Q,
            score_slots: DEFAULT_SCORE_SLOTS,
            feature_mask: FeatureMask::Full,
            profiles: vec![ProfileSpec {
                rho: Patience::Unbounded,
                tau: 0,
            }],
            patience_mode: PatienceMode::AnsweredOnly,
            policies: PolicyKind::ALL.to_vec(),
            rl: RLConfig::default(),
            ctxpred: CtxPredConfig::default(),
            ranker: RankerChoice::default(),
            seed: 0,
            folds: 5,
            workers: 1,
            bootstrap_resamples: 10_000,
            output_dir: PathBuf::from("runs/latest"),
        }
    }

    pub fn layout(&self, mask: FeatureMask) -> StateLayout {
        StateLayout {
            dim: self.dim,
            k_q: self.k_q,
            score_slots: self.score_slots,
            mask,
        }
    }

    pub fn user_profiles(&self) -> Vec<UserProfile> {
        self.profiles
            .iter()
            .map(|p| UserProfile {
                tolerance: p.tau,
                patience: p.rho,
                patience_mode: self.patience_mode,
            })
            .collect()
    }

    pub fn mask_for(&self, kind: PolicyKind) -> Option<FeatureMask> {
        match kind {
            PolicyKind::Rcsq => Some(self.feature_mask),
            other => other.mask(),
        }
    }

    /// Range and consistency checks. Paths are checked by [`RunConfig::check_paths`].
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |k: &str, r: &str| Err(ExperimentError::Config(k.into(), r.into()));
        if self.pool_size < 2 {
            return bad("pool_size", "must be at least 2");
        }
        if self.dim < crate::encoding::MIN_DIM {
            return bad("dim", "must be at least 8");
        }
        if self.score_slots == 0 {
            return bad("score_slots", "must be positive");
        }
        if self.profiles.is_empty() {
            return bad("profiles", "at least one user profile is required");
        }
        if self.policies.is_empty() {
            return bad("policies", "at least one policy is required");
        }
        if self.folds < 2 {
            return bad("folds", "cross-validation needs at least 2 folds");
        }
        if self.workers == 0 {
            return bad("workers", "must be at least 1");
        }
        if let RankerChoice::External { command, processes, .. } = &self.ranker {
            if command.is_empty() {
                return bad("ranker.command", "must name a program");
            }
            if *processes == 0 {
                return bad("ranker.processes", "must be at least 1");
            }
        }
        self.rl
            .validate()
            .map_err(|e| ExperimentError::Config("rl".into(), e.to_string()))
    }

    pub fn check_paths(&self) -> Result<(), ExperimentError> {
        if !self.corpus.is_file() {
            return Err(ExperimentError::Config(
                "corpus".into(),
                format!("{} is not a readable file", self.corpus.display()),
            ));
        }
        Ok(())
    }
}

const KEYS: &[&str] = &[
    "corpus",
    "pool_size",
    "dim",
    "k_q",
    "score_slots",
    "feature_mask",
    "profiles",
    "patience_mode",
    "policies",
    "rl",
    "ctxpred",
    "ranker",
    "seed",
    "folds",
    "workers",
    "bootstrap_resamples",
    "output_dir",
];

fn field<T: serde::de::DeserializeOwned>(key: &str, v: &Value) -> Result<T, ExperimentError> {
    serde_json::from_value(v.clone()).map_err(|e| ExperimentError::Config(key.into(), e.to_string()))
}

/// Builds a config from a JSON object, starting from defaults. Unknown keys
/// and ill-typed values are reported with the offending key.
pub fn config_from_json(obj: &Map<String, Value>, base_dir: &Path) -> Result<RunConfig, ExperimentError> {
    if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
        return Err(ExperimentError::Config(k.clone(), "unknown key".into()));
    }
    let corpus: PathBuf = match obj.get("corpus") {
        Some(v) => field("corpus", v)?,
        None => return Err(ExperimentError::Config("corpus".into(), "required".into())),
    };
    let mut c = RunConfig::new(if corpus.is_relative() { base_dir.join(corpus) } else { corpus });
    for (k, v) in obj {
        match k.as_str() {
            "corpus" => {}
            "pool_size" => c.pool_size = field(k, v)?,
            "dim" => c.dim = field(k, v)?,
            "k_q" => c.k_q = field(k, v)?,
            "score_slots" => c.score_slots = field(k, v)?,
            "feature_mask" => c.feature_mask = field(k, v)?,
            "profiles" => c.profiles = field(k, v)?,
            "patience_mode" => c.patience_mode = field(k, v)?,
            "policies" => c.policies = field(k, v)?,
            "rl" => c.rl = field(k, v)?,
            "ctxpred" => c.ctxpred = field(k, v)?,
            "ranker" => c.ranker = field(k, v)?,
            "seed" => c.seed = field(k, v)?,
            "folds" => c.folds = field(k, v)?,
            "workers" => c.workers = field(k, v)?,
            "bootstrap_resamples" => c.bootstrap_resamples = field(k, v)?,
            "output_dir" => {
                let p: PathBuf = field(k, v)?;
                c.output_dir = if p.is_relative() { base_dir.join(p) } else { p };
            }
            _ => unreachable!("checked against KEYS"),
        }
    }
    c.validate()?;
    Ok(c)
}

/// Reads a config file, or the `config` section of a run manifest. Relative
/// paths inside are resolved against the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config("<document>".into(), e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let obj = match &value {
        Value::Object(m) if m.get("format").and_then(Value::as_str) == Some(MANIFEST_FORMAT) => {
            match m.get("config") {
                Some(Value::Object(c)) => c,
                _ => return Err(ExperimentError::Config("config".into(), "manifest lacks a config".into())),
            }
        }
        Value::Object(m) => m,
        _ => return Err(ExperimentError::Config("<document>".into(), "expected a JSON object".into())),
    };
    let cfg = config_from_json(obj, base)?;
    cfg.check_paths()?;
    Ok(cfg)
}

/// flag > environment > file > default.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: Option<u64>) -> Result<u64, ExperimentError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(e) = env.map(str::trim).filter(|e| !e.is_empty()) {
        return e
            .parse()
            .map_err(|_| ExperimentError::Config(SEED_ENV.into(), format!("{e:?} is not an unsigned integer")));
    }
    Ok(file.unwrap_or(0))
}

/// Independent stream seed for a named stage.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut bytes = master.to_le_bytes().to_vec();
    bytes.extend_from_slice(label.as_bytes());
    crate::encoding::fnv1a64(&bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<String>,
}

/// Conversations, their pools and fold assignment.
pub struct Dataset {
    pub corpus: Corpus,
    pub pools: Vec<CandidatePool>,
    pub folds: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig, seeds: &mut BTreeMap<String, u64>) -> Result<Self, ExperimentError> {
        let corpus = parse_corpus(&cfg.corpus)?;
        Self::from_corpus(corpus, cfg, seeds)
    }

    pub fn from_corpus(
        corpus: Corpus,
        cfg: &RunConfig,
        seeds: &mut BTreeMap<String, u64>,
    ) -> Result<Self, ExperimentError> {
        let fold_seed = derive_seed(cfg.seed, "folds");
        let pool_seed = derive_seed(cfg.seed, "pools");
        seeds.insert("folds".into(), fold_seed);
        seeds.insert("pools".into(), pool_seed);
        let corpus = split_folds(corpus, cfg.folds, fold_seed)?;
        let folds = corpus.folds.clone().expect("folds assigned");
        let pc = PoolConfig {
            pool_size: cfg.pool_size,
            seed: pool_seed,
        };
        let pools = corpus
            .conversations
            .iter()
            .map(|c| build_pools(&corpus, c, &pc))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset { corpus, pools, folds })
    }

    /// Indices outside `held_out`, or every index when `held_out` is `None`.
    pub fn train_indices(&self, held_out: Option<usize>) -> Vec<usize> {
        match held_out {
            None => (0..self.corpus.len()).collect(),
            Some(f) => (0..self.corpus.len()).filter(|i| !self.folds[f].contains(i)).collect(),
        }
    }

    pub fn items(&self, idx: &[usize]) -> Vec<(&Conversation, &CandidatePool)> {
        idx.iter().map(|&i| (&self.corpus.conversations[i], &self.pools[i])).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Corpus {
        Corpus::new(idx.iter().map(|&i| self.corpus.conversations[i].clone()).collect())
    }
}

/// `(context, answer)` pairs and `(context, next clarifying question)` pairs.
pub fn ranker_pairs<'a, I>(convs: I) -> (Vec<(String, String)>, Vec<(String, String)>)
where
    I: IntoIterator<Item = &'a Conversation>,
{
    let mut answers = Vec::new();
    let mut questions = Vec::new();
    for c in convs {
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for i in c.clarifying_question_indices() {
            questions.push((context_text(c.query(), &history_text(&pairs)), c.turns[i].text.clone()));
            pairs.push((c.turns[i].text.as_str(), c.feedback_for(i).unwrap_or_default()));
        }
        answers.push((context_text(c.query(), &history_text(&pairs)), c.answer().text.clone()));
    }
    (answers, questions)
}

pub struct RankerPair {
    pub answer: Arc<dyn Ranker>,
    pub question: Arc<dyn Ranker>,
}

/// Builds the answer and question rankers for one training split.
pub fn build_rankers(
    cfg: &RunConfig,
    train: &[&Conversation],
    embedder: Arc<Embedder>,
    seed: u64,
) -> Result<RankerPair, ExperimentError> {
    match &cfg.ranker {
        RankerChoice::Builtin { train: tc } => {
            let (ans, qs) = ranker_pairs(train.iter().copied());
            let fit = |pairs: &[(String, String)], s: u64| -> Result<DotRanker, ExperimentError> {
                let tcfg = RankerTrainConfig {
                    seed: s,
                    batch_size: tc.batch_size.min(pairs.len().max(2)),
                    ..*tc
                };
                let params = train_dot_ranker(pairs, &embedder, &tcfg)?;
                Ok(DotRanker::new(embedder.clone(), params)?)
            };
            Ok(RankerPair {
                answer: Arc::new(fit(&ans, derive_seed(seed, "answer-ranker"))?),
                question: Arc::new(fit(&qs, derive_seed(seed, "question-ranker"))?),
            })
        }
        RankerChoice::External {
            command,
            timeout_secs,
            processes,
        } => {
            let timeout = Duration::from_secs(*timeout_secs);
            let pool: Arc<dyn Ranker> = Arc::new(BridgePool::spawn(command, *processes, timeout)?);
            Ok(RankerPair {
                answer: pool.clone(),
                question: pool,
            })
        }
    }
}

/// Everything trained on one split, ready to evaluate.
pub struct FoldModels {
    pub embedder: Arc<Embedder>,
    pub rankers: RankerPair,
    pub ctxpred: Option<CtxPredParams>,
    /// Keyed by (policy, profile index).
    pub networks: BTreeMap<(PolicyKind, usize), Arc<DqnParams>>,
    pub train_logs: Vec<(PolicyKind, usize, Vec<TrainLogRecord>)>,
}

pub fn fit_embedder(cfg: &RunConfig, train: &Corpus) -> Result<Arc<Embedder>, ExperimentError> {
    Ok(Arc::new(Embedder::new(fit_idf(train)?, cfg.dim)?))
}

/// Trains every model `cfg.policies` needs on the conversations in `train_idx`.
pub fn train_fold(
    cfg: &RunConfig,
    data: &Dataset,
    train_idx: &[usize],
    fold_label: &str,
    seeds: &mut BTreeMap<String, u64>,
) -> Result<FoldModels, ExperimentError> {
    let train_corpus = data.subset(train_idx);
    let embedder = fit_embedder(cfg, &train_corpus)?;
    let train_convs: Vec<&Conversation> = train_idx.iter().map(|&i| &data.corpus.conversations[i]).collect();
    let ranker_seed = derive_seed(cfg.seed, &format!("rankers/{fold_label}"));
    seeds.insert(format!("rankers/{fold_label}"), ranker_seed);
    let rankers = build_rankers(cfg, &train_convs, embedder.clone(), ranker_seed)?;

    let ctxpred = if cfg.policies.contains(&PolicyKind::CtxPred) {
        let ex = ctxpred_examples(train_convs.iter().copied(), &embedder);
        Some(train_ctxpred(&ex, &cfg.ctxpred)?)
    } else {
        None
    };

    let items = data.items(train_idx);
    let mut networks = BTreeMap::new();
    let mut train_logs = Vec::new();
    for &kind in &cfg.policies {
        let Some(mask) = cfg.mask_for(kind) else { continue };
        for (pi, profile) in cfg.user_profiles().into_iter().enumerate() {
            let env = EpisodeEnv {
                answer_ranker: rankers.answer.as_ref(),
                question_ranker: rankers.question.as_ref(),
                embedder: &embedder,
                layout: cfg.layout(FeatureMask::Full),
                profile,
            };
            let label = format!("policy/{fold_label}/{kind}/rho={}/tau={}", profile.patience, profile.tolerance);
            let s = derive_seed(cfg.seed, &label);
            seeds.insert(label, s);
            let trained = train_policy(&items, &env, &cfg.rl, mask, s)?;
            train_logs.push((kind, pi, trained.log));
            networks.insert((kind, pi), Arc::new(trained.params));
        }
    }
    Ok(FoldModels {
        embedder,
        rankers,
        ctxpred,
        networks,
        train_logs,
    })
}

type PolicyFactory = Box<dyn Fn() -> Box<dyn Policy + Send> + Sync>;

fn factory(kind: PolicyKind, models: &FoldModels, profile_index: usize, cfg: &RunConfig) -> PolicyFactory {
    match kind {
        PolicyKind::Q0a => Box::new(|| Box::new(FixedBudget(0))),
        PolicyKind::Q1a => Box::new(|| Box::new(FixedBudget(1))),
        PolicyKind::Q2a => Box::new(|| Box::new(FixedBudget(2))),
        PolicyKind::Oracle => Box::new(|| Box::new(OraclePolicy)),
        PolicyKind::CtxPred => {
            let p = models.ctxpred.clone().expect("ctxpred trained");
            Box::new(move || Box::new(CtxPredPolicy(p.clone())))
        }
        PolicyKind::Rcsq | PolicyKind::RcsqS | PolicyKind::RcsqT => {
            let params = models.networks[&(kind, profile_index)].clone();
            let mask = cfg.mask_for(kind).expect("network policy");
            Box::new(move || {
                Box::new(DqnPolicy {
                    params: params.clone(),
                    mask,
                })
            })
        }
    }
}

/// Evaluates every configured policy and profile on one held-out fold.
pub fn evaluate_fold(
    cfg: &RunConfig,
    data: &Dataset,
    models: &FoldModels,
    fold: usize,
    runs: &mut BTreeMap<(PolicyKind, usize), PolicyRun>,
) -> Result<(), ExperimentError> {
    let test = data.items(&data.folds[fold]);
    for (pi, profile) in cfg.user_profiles().into_iter().enumerate() {
        let env = EpisodeEnv {
            answer_ranker: models.rankers.answer.as_ref(),
            question_ranker: models.rankers.question.as_ref(),
            embedder: &models.embedder,
            layout: cfg.layout(FeatureMask::Full),
            profile,
        };
        for &kind in &cfg.policies {
            let make = factory(kind, models, pi, cfg);
            let results = run_episodes(&test, &env, make, cfg.workers)?;
            let run = runs.entry((kind, pi)).or_insert_with(|| PolicyRun {
                policy: kind,
                profile,
                results: Vec::new(),
            });
            run.results.extend(results.into_iter().map(|r| (fold, r)));
        }
    }
    Ok(())
}

pub struct SimulationOutput {
    pub runs: Vec<PolicyRun>,
    pub report: Report,
    pub seeds: BTreeMap<String, u64>,
}

/// Full cross-validation: for each fold, train on the others and evaluate on it.
pub fn simulate(cfg: &RunConfig, data: &Dataset, mut seeds: BTreeMap<String, u64>) -> Result<SimulationOutput, ExperimentError> {
    let mut runs = BTreeMap::new();
    for fold in 0..data.folds.len() {
        let train_idx = data.train_indices(Some(fold));
        let models = train_fold(cfg, data, &train_idx, &format!("fold{fold}"), &mut seeds)?;
        evaluate_fold(cfg, data, &models, fold, &mut runs)?;
    }
    let runs: Vec<PolicyRun> = runs.into_values().collect();
    let report_seed = derive_seed(cfg.seed, "bootstrap");
    seeds.insert("bootstrap".into(), report_seed);
    let report = build_report(&runs, cfg.bootstrap_resamples, report_seed)?;
    Ok(SimulationOutput { runs, report, seeds })
}

/// Writes `episodes.jsonl`, `summary.json`, `report.txt` and `manifest.json`.
pub fn write_simulation(cfg: &RunConfig, out: &SimulationOutput, command: &str) -> Result<(), ExperimentError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let records: Vec<_> = out.runs.iter().flat_map(|r| r.log_records()).collect();
    let log_path = dir.join("episodes.jsonl");
    let f = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    crate::simeval::write_episode_log(std::io::BufWriter::new(f), &records).map_err(io_err(&log_path))?;
    crate::simeval::write_report(&out.report, dir).map_err(io_err(dir))?;
    write_manifest(
        cfg,
        command,
        &out.seeds,
        &["episodes.jsonl", "summary.json", "report.txt"],
    )
}

pub fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    seeds: &BTreeMap<String, u64>,
    outputs: &[&str],
) -> Result<(), ExperimentError> {
    let m = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config: cfg.clone(),
        seeds: seeds.clone(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let path = cfg.output_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))
}

/// Saves a trained network as a checkpoint.
pub fn save_checkpoint(path: &Path, layout: StateLayout, params: DqnParams) -> Result<(), ExperimentError> {
    fs::write(path, DqnCheckpoint::new(layout, params).to_json()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = config_from_json(&obj(json!({"corpus": "c.jsonl"})), Path::new("/tmp")).unwrap();
        assert_eq!(c.rl.r_cq, 0.11);
        assert_eq!(c.rl.p_cq, -0.89);
        assert_eq!(c.rl.sigma, 0.89);
        assert_eq!(c.corpus, PathBuf::from("/tmp/c.jsonl"));
        assert_eq!(c.pool_size, 100);
    }

    #[test]
    fn unknown_key_rejected() {
        let e = config_from_json(&obj(json!({"corpus": "c", "foo": 1})), Path::new(".")).unwrap_err();
        assert!(matches!(e, ExperimentError::Config(k, _) if k == "foo"));
    }

    #[test]
    fn negative_tau_rejected() {
        let e = config_from_json(
            &obj(json!({"corpus": "c", "profiles": [{"rho": "inf", "tau": -1}]})),
            Path::new("."),
        )
        .unwrap_err();
        assert!(matches!(e, ExperimentError::Config(k, _) if k == "profiles"));
    }

    #[test]
    fn nested_unknown_key_rejected() {
        let e = config_from_json(&obj(json!({"corpus": "c", "rl": {"gamma": 0.9}})), Path::new(".")).unwrap_err();
        assert!(matches!(e, ExperimentError::Config(k, r) if k == "rl" && r.contains("gamma")));
    }

    #[test]
    fn profiles_parse_inf_and_numbers() {
        let c = config_from_json(
            &obj(json!({"corpus": "c", "profiles": [{"rho": "inf", "tau": 0}, {"rho": 2, "tau": 1}]})),
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.profiles[1].rho, Patience::Limited(2));
        assert!(config_from_json(&obj(json!({"corpus": "c", "profiles": []})), Path::new(".")).is_err());
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), Some(3)).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), Some(3)).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some(3)).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), 0);
        assert!(resolve_seed(None, Some("x"), None).is_err());
    }

    #[test]
    fn ranker_pairs_follow_the_dialogue() {
        let c = Conversation::from_alternating("a", &["q", "cq1", "fb1", "cq2", "fb2", "ans"]);
        let (ans, qs) = ranker_pairs([&c]);
        assert_eq!(ans, vec![("q [SEP] cq1 [SEP] fb1 [SEP] cq2 [SEP] fb2".into(), "ans".into())]);
        assert_eq!(qs[0], ("q".into(), "cq1".into()));
        assert_eq!(qs[1], ("q [SEP] cq1 [SEP] fb1".into(), "cq2".into()));
    }

    #[test]
    fn config_round_trips_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        fs::write(&corpus, "").unwrap();
        let mut cfg = RunConfig::new(&corpus);
        cfg.output_dir = dir.path().join("out");
        fs::create_dir_all(&cfg.output_dir).unwrap();
        write_manifest(&cfg, "simulate", &BTreeMap::new(), &[]).unwrap();
        let back = load_config(&cfg.output_dir.join("manifest.json")).unwrap();
        assert_eq!(back, cfg);
    }
}
