//! Command-line front end. `dispatch` returns the process exit code:
//! 0 on success, 1 on a domain error, 2 on a usage error.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::corpus::{parse_corpus, preprocess, DEFAULT_MAX_TURNS, DEFAULT_MIN_TURNS};
use crate::experiment::{
    build_rankers, derive_seed, fit_embedder, load_config, ranker_pairs, resolve_seed, save_checkpoint, simulate,
    write_manifest, write_simulation, Dataset, ExperimentError, ProfileSpec, RankerChoice, RankerPair, RunConfig,
    SEED_ENV,
};
use crate::policy::FeatureMask;
use crate::ranker::{train_dot_ranker, DotRanker, Ranker, RankerTrainConfig};
use crate::rl::train_policy;
use crate::simeval::{
    build_report, format_report, read_episode_log, write_report, EpisodeEnv, PolicyKind, PolicyRun,
};
use crate::usersim::{Patience, UserProfile};

#[derive(Debug, Parser)]
#[command(
    name = "convrisk",
    version,
    about = "Simulated-user evaluation and Q-learning for clarifying-question policies",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize and filter a raw JSONL corpus.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_TURNS)]
        min_turns: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_TURNS)]
        max_turns: usize,
    },
    /// Train the built-in answer and question rankers.
    TrainRanker {
        #[command(flatten)]
        common: Common,
        /// Hold this fold out; trains on every conversation when omitted.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Train one Q-network policy and save a checkpoint.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "rcsq")]
        policy: PolicyKind,
        #[arg(long)]
        fold: Option<usize>,
        /// Directory holding answer_ranker.json and question_ranker.json.
        #[arg(long)]
        rankers: Option<PathBuf>,
    },
    /// Cross-validated simulation of every requested policy and user profile.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated policy names.
        #[arg(long, value_delimiter = ',')]
        policy: Vec<PolicyKind>,
    },
    /// Rebuild the summary and text report from an episode log.
    Report {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run config or a manifest written by an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus path; required when no config is given.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Tolerance values, comma separated.
    #[arg(long, value_delimiter = ',')]
    tau: Vec<u32>,
    /// Patience values ("inf" allowed), comma separated.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<Patience>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    /// Training episodes for Q-network policies.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ExperimentError> {
        let (mut cfg, file_seed) = match (&self.config, &self.corpus) {
            (Some(path), _) => {
                let c = load_config(path)?;
                let s = c.seed;
                (c, Some(s))
            }
            (None, Some(corpus)) => (RunConfig::new(corpus), None),
            (None, None) => {
                return Err(ExperimentError::Config(
                    "corpus".into(),
                    "pass --config or --corpus".into(),
                ))
            }
        };
        if let Some(c) = &self.corpus {
            cfg.corpus = c.clone();
        }
        let env = std::env::var(SEED_ENV).ok();
        cfg.seed = resolve_seed(self.seed, env.as_deref(), file_seed)?;
        if !self.tau.is_empty() || !self.rho.is_empty() {
            let mut taus: Vec<u32> = self.tau.clone();
            let mut rhos: Vec<Patience> = self.rho.clone();
            if taus.is_empty() {
                taus = cfg.profiles.iter().map(|p| p.tau).collect();
            }
            if rhos.is_empty() {
                rhos = cfg.profiles.iter().map(|p| p.rho).collect();
            }
            taus.sort_unstable();
            taus.dedup();
            rhos.sort_unstable();
            rhos.dedup();
            cfg.profiles = rhos
                .iter()
                .flat_map(|&rho| taus.iter().map(move |&tau| ProfileSpec { rho, tau }))
                .collect();
        }
        if let Some(f) = self.folds {
            cfg.folds = f;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(p) = self.pool_size {
            cfg.pool_size = p;
        }
        if let Some(e) = self.episodes {
            cfg.rl.episodes = e;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        cfg.check_paths()?;
        Ok(cfg)
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Usage(String),
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            2
        }
        Err(CliError::Experiment(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn check_fold(cfg: &RunConfig, fold: Option<usize>) -> Result<(), CliError> {
    match fold {
        Some(f) if f >= cfg.folds => Err(CliError::Usage(format!("--fold {f} is out of range for {} folds", cfg.folds))),
        _ => Ok(()),
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Preprocess {
            input,
            output,
            min_turns,
            max_turns,
        } => {
            if min_turns > max_turns {
                return Err(CliError::Usage("--min-turns exceeds --max-turns".into()));
            }
            let raw = parse_corpus(&input).map_err(ExperimentError::from)?;
            let (corpus, stats) = preprocess(raw, min_turns, max_turns);
            if let Some(dir) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io(dir))?;
            }
            fs::write(&output, corpus.to_jsonl()).map_err(io(&output))?;
            println!(
                "kept {} conversations (too short {}, too long {}, malformed {})",
                stats.kept, stats.too_short, stats.too_long, stats.malformed
            );
            Ok(())
        }
        Command::TrainRanker { common, fold } => {
            let cfg = common.resolve()?;
            check_fold(&cfg, fold)?;
            let RankerChoice::Builtin { train } = cfg.ranker.clone() else {
                return Err(CliError::Usage("train-ranker only applies to the builtin ranker".into()));
            };
            let mut seeds = BTreeMap::new();
            let data = Dataset::load(&cfg, &mut seeds)?;
            let idx = data.train_indices(fold);
            let embedder = fit_embedder(&cfg, &data.subset(&idx))?;
            let (ans, qs) = ranker_pairs(idx.iter().map(|&i| &data.corpus.conversations[i]));
            fs::create_dir_all(&cfg.output_dir).map_err(io(&cfg.output_dir))?;
            for (name, pairs) in [("answer", ans), ("question", qs)] {
                let seed = derive_seed(cfg.seed, &format!("{name}-ranker"));
                seeds.insert(format!("{name}-ranker"), seed);
                let tc = RankerTrainConfig {
                    seed,
                    batch_size: train.batch_size.min(pairs.len().max(2)),
                    ..train
                };
                let params = train_dot_ranker(&pairs, &embedder, &tc).map_err(ExperimentError::from)?;
                let ranker = DotRanker::new(embedder.clone(), params).map_err(ExperimentError::from)?;
                let path = cfg.output_dir.join(format!("{name}_ranker.json"));
                fs::write(&path, ranker.to_json()).map_err(io(&path))?;
                println!("{name} ranker: {} pairs -> {}", pairs.len(), path.display());
            }
            write_manifest(
                &cfg,
                "train-ranker",
                &seeds,
                &["answer_ranker.json", "question_ranker.json"],
            )?;
            Ok(())
        }
        Command::TrainPolicy {
            common,
            policy,
            fold,
            rankers,
        } => {
            let cfg = common.resolve()?;
            check_fold(&cfg, fold)?;
            let Some(mask) = cfg.mask_for(policy) else {
                return Err(CliError::Usage(format!(
                    "{policy} has nothing to train; choose rcsq, rcsq-s or rcsq-t"
                )));
            };
            if cfg.profiles.len() != 1 {
                return Err(CliError::Usage("train-policy needs exactly one (rho, tau) profile".into()));
            }
            let mut seeds = BTreeMap::new();
            let data = Dataset::load(&cfg, &mut seeds)?;
            let idx = data.train_indices(fold);
            let embedder = fit_embedder(&cfg, &data.subset(&idx))?;
            let pair = match rankers {
                Some(dir) => load_rankers(&dir)?,
                None => {
                    let convs: Vec<_> = idx.iter().map(|&i| &data.corpus.conversations[i]).collect();
                    build_rankers(&cfg, &convs, embedder.clone(), derive_seed(cfg.seed, "rankers/train"))?
                }
            };
            let p = cfg.profiles[0];
            let env = EpisodeEnv {
                answer_ranker: pair.answer.as_ref(),
                question_ranker: pair.question.as_ref(),
                embedder: &embedder,
                layout: cfg.layout(FeatureMask::Full),
                profile: UserProfile {
                    tolerance: p.tau,
                    patience: p.rho,
                    patience_mode: cfg.patience_mode,
                },
            };
            let seed = derive_seed(cfg.seed, &format!("policy/{policy}"));
            seeds.insert(format!("policy/{policy}"), seed);
            let trained = train_policy(&data.items(&idx), &env, &cfg.rl, mask, seed).map_err(ExperimentError::from)?;
            fs::create_dir_all(&cfg.output_dir).map_err(io(&cfg.output_dir))?;
            save_checkpoint(&cfg.output_dir.join("checkpoint.json"), cfg.layout(mask), trained.params)?;
            let log_path = cfg.output_dir.join("train_log.jsonl");
            let mut f = std::io::BufWriter::new(fs::File::create(&log_path).map_err(io(&log_path))?);
            for r in &trained.log {
                serde_json::to_writer(&mut f, r).expect("log record serializes");
                f.write_all(b"\n").map_err(io(&log_path))?;
            }
            f.flush().map_err(io(&log_path))?;
            write_manifest(&cfg, "train-policy", &seeds, &["checkpoint.json", "train_log.jsonl"])?;
            println!(
                "{policy}: {} episodes, {} updates -> {}",
                trained.log.len(),
                trained.updates,
                cfg.output_dir.display()
            );
            Ok(())
        }
        Command::Simulate { common, policy } => {
            let mut cfg = common.resolve()?;
            if !policy.is_empty() {
                let mut p = policy;
                p.sort_unstable();
                p.dedup();
                cfg.policies = p;
            }
            let mut seeds = BTreeMap::new();
            seeds.insert("master".into(), cfg.seed);
            let data = Dataset::load(&cfg, &mut seeds)?;
            let out = simulate(&cfg, &data, seeds)?;
            write_simulation(&cfg, &out, "simulate")?;
            print!("{}", format_report(&out.report));
            Ok(())
        }
        Command::Report {
            episodes,
            out,
            resamples,
            seed,
        } => {
            let f = fs::File::open(&episodes).map_err(io(&episodes))?;
            let records = read_episode_log(BufReader::new(f)).map_err(io(&episodes))?;
            let mut runs: BTreeMap<(PolicyKind, Patience, u32), PolicyRun> = BTreeMap::new();
            for r in records {
                runs.entry((r.policy, r.rho, r.tau))
                    .or_insert_with(|| PolicyRun {
                        policy: r.policy,
                        profile: UserProfile::new(r.tau, r.rho),
                        results: Vec::new(),
                    })
                    .results
                    .push((r.fold, r.result));
            }
            let runs: Vec<PolicyRun> = runs.into_values().collect();
            let report = build_report(&runs, resamples, seed).map_err(ExperimentError::from)?;
            write_report(&report, &out).map_err(io(&out))?;
            print!("{}", format_report(&report));
            Ok(())
        }
    }
}

fn load_rankers(dir: &Path) -> Result<RankerPair, ExperimentError> {
    let load = |name: &str| -> Result<Arc<dyn Ranker>, ExperimentError> {
        let path = dir.join(format!("{name}_ranker.json"));
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        Ok(Arc::new(DotRanker::from_json(&text)?))
    };
    Ok(RankerPair {
        answer: load("answer")?,
        question: load("question")?,
    })
}
