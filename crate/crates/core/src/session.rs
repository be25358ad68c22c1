//! The episode loop: interaction, teaching, per-user retraining, metrics.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embednet::{
    train_pair_classifier, train_reranker, ModelError, PairModel, RerankExample, Reranker,
    TrainConfig, TrainError, TrainReport,
};
use crate::entity::{lift_example, EntityError, LiftedUtterance};
use crate::nn::{CheckpointError, Params};
use crate::parser::{
    preprocess_lifted, rebuild_index, seed_examples, Calibration, ExemplarStore, StoreError,
};
use crate::pipeline::{Interpretation, Parser, Resources};
use crate::program::{LiftedProgram, PrimitiveAction, Program};
use crate::world::{
    check_goal, generate_task, render_action, ExecError, Task, TaskType, WorldState,
};

pub const NOT_SURE_MESSAGE: &str = "I'm sorry - I don't understand!";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Taught { episode: usize, turn: usize },
}

/// One training example in both grounded and lifted form. Seeds only exist
/// lifted, so their grounded program is absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub utterance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<Program>,
    pub lifted_utterance: LiftedUtterance,
    pub lifted_program: LiftedProgram,
    pub origin: Origin,
}

impl Example {
    fn key(&self) -> (String, String) {
        let program = match &self.program {
            Some(p) => p.to_string(),
            None => self.lifted_program.to_string(),
        };
        (self.utterance.trim().to_lowercase(), program)
    }
}

/// A logged utterance with the program that was actually executed for it;
/// the reranker's supervision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub utterance: String,
    pub state: WorldState,
    pub gold: Program,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("episode is over")]
    EpisodeOver,
    #[error("episode is not finished")]
    EpisodeNotFinished,
    #[error("invalid teaching span for turn {target}: {reason}")]
    InvalidSpan { target: usize, reason: String },
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("model file {0}: {1}")]
    Io(String, io::Error),
    #[error("model file {0}: {1}")]
    Format(String, String),
}

/// Everything learned for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserModel {
    pub parser: Parser,
    /// Seeds first, then taught examples in teaching order.
    pub dataset: Vec<Example>,
    pub seed_count: usize,
    /// Executed programs from every finished episode, for the reranker.
    pub gold: Vec<GoldRecord>,
    pub calibration: Calibration,
    pub version: u64,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainStage {
    Lifting,
    TrainingParser,
    RebuildingIndex,
    Calibrating,
    TrainingReranker,
    Done,
}

impl RetrainStage {
    /// Rough share of the work finished when this stage starts.
    pub fn progress(self) -> f64 {
        match self {
            RetrainStage::Lifting => 0.0,
            RetrainStage::TrainingParser => 0.05,
            RetrainStage::RebuildingIndex => 0.6,
            RetrainStage::Calibrating => 0.65,
            RetrainStage::TrainingReranker => 0.7,
            RetrainStage::Done => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub version: u64,
    pub examples: usize,
    pub added: usize,
    pub parser_epochs: usize,
    pub parser_loss: Option<f64>,
    pub reranker_epochs: usize,
    pub reranker_examples: usize,
    /// Logged turns whose gold program was not among the re-parsed candidates.
    pub reranker_skipped: usize,
    pub calibration: Calibration,
    pub elapsed_ms: u64,
}

fn dataset_pairs(dataset: &[Example]) -> Vec<(LiftedUtterance, LiftedProgram)> {
    dataset
        .iter()
        .map(|e| (e.lifted_utterance.clone(), e.lifted_program.clone()))
        .collect()
}

fn train_parser(
    dataset: &[Example],
    seed_count: usize,
    res: &Resources,
    train: &TrainConfig,
    version: u64,
    progress: &dyn Fn(RetrainStage),
) -> Result<(PairModel, ExemplarStore, Calibration, TrainReport), SessionError> {
    progress(RetrainStage::TrainingParser);
    let pairs = dataset_pairs(dataset);
    let tokens: Vec<(Vec<String>, LiftedProgram)> = pairs
        .iter()
        .map(|(f, q)| (preprocess_lifted(f, &res.parser), q.clone()))
        .collect();
    let (embedder, report) = train_pair_classifier(&tokens, &res.table, train)?;
    progress(RetrainStage::RebuildingIndex);
    let mut store = rebuild_index(&pairs, &embedder, &res.table, &res.parser, version);
    progress(RetrainStage::Calibrating);
    let calibration = store.calibrate(0..seed_count, &res.parser);
    Ok((embedder, store, calibration, report))
}

impl UserModel {
    /// The seed-only model: parser trained on the 44 seed examples, reranker
    /// at its initialisation.
    pub fn bootstrap(res: &Resources, train: TrainConfig) -> Result<Self, SessionError> {
        let dataset: Vec<Example> = seed_examples()
            .into_iter()
            .map(|(f, q)| Example {
                utterance: f.to_string(),
                program: None,
                lifted_utterance: f,
                lifted_program: q,
                origin: Origin::Seed,
            })
            .collect();
        let seed_count = dataset.len();
        let (embedder, store, calibration, report) =
            train_parser(&dataset, seed_count, res, &train, 0, &|_| {})?;
        log::info!(
            "bootstrap: {} seeds, {} epochs, τ={:.4}",
            seed_count,
            report.epochs_run,
            calibration.tau
        );
        Ok(UserModel {
            parser: Parser {
                embedder,
                store,
                reranker: Reranker::init(train.rng_seed),
            },
            dataset,
            seed_count,
            gold: Vec::new(),
            calibration,
            version: 0,
            train,
        })
    }

    pub fn examples_taught(&self) -> usize {
        self.dataset.len()
    }

    pub fn interpret(
        &self,
        utterance: &str,
        state: &WorldState,
        res: &Resources,
    ) -> Interpretation {
        self.parser.interpret(utterance, state, res)
    }

    /// Drops examples already in the dataset (or repeated within `new`).
    pub fn unique_new(&self, new: Vec<Example>) -> Vec<Example> {
        let mut seen: HashSet<(String, String)> = self.dataset.iter().map(Example::key).collect();
        new.into_iter().filter(|e| seen.insert(e.key())).collect()
    }

    /// Full retrain on the whole history plus `new`: parser from scratch,
    /// fresh index, recalibrated τ, reranker on re-parsed logged turns. The
    /// receiver is untouched; the caller swaps in the result.
    pub fn retrain(
        &self,
        new: Vec<Example>,
        gold: Vec<GoldRecord>,
        res: &Resources,
        progress: &dyn Fn(RetrainStage),
    ) -> Result<(UserModel, RetrainReport), SessionError> {
        let started = Instant::now();
        progress(RetrainStage::Lifting);
        let new = self.unique_new(new);
        let added = new.len();
        let mut dataset = self.dataset.clone();
        dataset.extend(new);
        let mut gold_log = self.gold.clone();
        gold_log.extend(gold);
        let version = self.version + 1;

        let (embedder, store, calibration, parser_report) = train_parser(
            &dataset,
            self.seed_count,
            res,
            &self.train,
            version,
            progress,
        )?;

        progress(RetrainStage::TrainingReranker);
        let interim = Parser {
            embedder,
            store,
            reranker: Reranker::init(self.train.rng_seed),
        };
        let parsed: Vec<Option<RerankExample>> = crate::par::map(self.train.exec, &gold_log, |g| {
            let i = interim.interpret(&g.utterance, &g.state, res);
            let candidates = i.executable.programs();
            candidates.contains(&g.gold).then(|| RerankExample {
                utterance: i.rerank_tokens.clone(),
                state: i.features(),
                candidates,
                gold: g.gold.clone(),
            })
        });
        let skipped = parsed.iter().filter(|p| p.is_none()).count();
        // Single-candidate tuples carry no gradient.
        let examples: Vec<RerankExample> = parsed
            .into_iter()
            .flatten()
            .filter(|e| e.candidates.len() > 1)
            .collect();
        let (reranker, rerank_report) = train_reranker(&examples, &res.table, &self.train)?;
        progress(RetrainStage::Done);

        let report = RetrainReport {
            version,
            examples: dataset.len(),
            added,
            parser_epochs: parser_report.epochs_run,
            parser_loss: parser_report.final_loss(),
            reranker_epochs: rerank_report.epochs_run,
            reranker_examples: examples.len(),
            reranker_skipped: skipped,
            calibration,
            elapsed_ms: started.elapsed().as_millis() as u64,
        };
        log::info!("retrained v{version}: {report:?}");
        let model = UserModel {
            parser: Parser {
                reranker,
                ..interim
            },
            dataset,
            seed_count: self.seed_count,
            gold: gold_log,
            calibration,
            version,
            train: self.train,
        };
        Ok((model, report))
    }

    /// Writes the model under `dir` (normally `users/<uid>/v<k>/`).
    pub fn save(&self, dir: &Path) -> Result<(), SessionError> {
        let io = |p: &Path| {
            let p = p.display().to_string();
            move |e| SessionError::Io(p, e)
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        self.parser
            .embedder
            .params
            .save(&dir.join("embedder.params"))?;
        self.parser
            .reranker
            .params
            .save(&dir.join("reranker.params"))?;
        self.parser.store.save(dir)?;
        write_jsonl(&dir.join("dataset.jsonl"), &self.dataset)?;
        write_jsonl(&dir.join("gold.jsonl"), &self.gold)?;
        let meta = ModelMeta {
            version: self.version,
            seed_count: self.seed_count,
            calibration: self.calibration,
            train: TrainMeta::from(&self.train),
        };
        let path = dir.join("model.json");
        fs::write(
            &path,
            serde_json::to_vec_pretty(&meta).expect("meta serializes"),
        )
        .map_err(io(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, SessionError> {
        let path = dir.join("model.json");
        let bytes = fs::read(&path).map_err(|e| SessionError::Io(path.display().to_string(), e))?;
        let meta: ModelMeta = serde_json::from_slice(&bytes)
            .map_err(|e| SessionError::Format(path.display().to_string(), e.to_string()))?;
        let embedder = PairModel::from_params(Params::load(&dir.join("embedder.params"))?)?;
        let reranker = Reranker::from_params(Params::load(&dir.join("reranker.params"))?)?;
        let store = ExemplarStore::load(dir, meta.version)?;
        let dataset: Vec<Example> = read_jsonl(&dir.join("dataset.jsonl"))?;
        let gold: Vec<GoldRecord> = read_jsonl(&dir.join("gold.jsonl"))?;
        if dataset.len() != store.len() {
            return Err(SessionError::Format(
                dir.display().to_string(),
                "dataset and store sizes differ".into(),
            ));
        }
        Ok(UserModel {
            parser: Parser {
                embedder,
                store,
                reranker,
            },
            dataset,
            seed_count: meta.seed_count,
            gold,
            calibration: meta.calibration,
            version: meta.version,
            train: meta.train.into(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    version: u64,
    seed_count: usize,
    calibration: Calibration,
    train: TrainMeta,
}

/// Serializable mirror of [`TrainConfig`] (execution mode is not persisted).
#[derive(Serialize, Deserialize)]
struct TrainMeta {
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    rng_seed: u64,
    early_stop_loss: f64,
}

impl From<&TrainConfig> for TrainMeta {
    fn from(c: &TrainConfig) -> Self {
        TrainMeta {
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
            rng_seed: c.rng_seed,
            early_stop_loss: c.early_stop_loss,
        }
    }
}

impl From<TrainMeta> for TrainConfig {
    fn from(m: TrainMeta) -> Self {
        TrainConfig {
            learning_rate: m.learning_rate,
            epochs: m.epochs,
            batch_size: m.batch_size,
            rng_seed: m.rng_seed,
            early_stop_loss: m.early_stop_loss,
            ..TrainConfig::default()
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SessionError> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("row serializes");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| SessionError::Io(path.display().to_string(), e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SessionError> {
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| SessionError::Io(name.clone(), e))?;
    let mut rows = Vec::new();
    for line in io::BufReader::new(file).lines() {
        let line = line.map_err(|e| SessionError::Io(name.clone(), e))?;
        if !line.trim().is_empty() {
            rows.push(
                serde_json::from_str(&line)
                    .map_err(|e| SessionError::Format(name.clone(), e.to_string()))?,
            );
        }
    }
    Ok(rows)
}

/// Appends one JSON line to `path`, creating it if needed.
pub fn append_jsonl<T: Serialize>(path: &Path, row: &T) -> Result<(), SessionError> {
    let name = path.display().to_string();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| SessionError::Io(name.clone(), e))?;
    let mut line = serde_json::to_vec(row).expect("row serializes");
    line.push(b'\n');
    f.write_all(&line).map_err(|e| SessionError::Io(name, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    NotSure,
    Executed,
    /// Stopped at `failed_at`; earlier actions took effect.
    Partial {
        failed_at: usize,
        error: ExecError,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionTurn {
    pub index: usize,
    pub utterance: String,
    pub program: Program,
    /// Index into the episode's state snapshots of the state this turn saw.
    pub state_before: usize,
    /// The prefix of `program` that actually ran.
    pub executed: Vec<PrimitiveAction>,
    pub outcome: Outcome,
    pub response: String,
    pub rendered_actions: Vec<String>,
    pub interpretation: Interpretation,
}

impl InteractionTurn {
    pub fn is_not_sure(&self) -> bool {
        self.program.is_not_sure()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeachingAnnotation {
    /// A NOT_SURE turn.
    pub target_turn: usize,
    /// Inclusive range of later turns whose executed actions form the program.
    pub span: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub index: usize,
    pub seed: u64,
    pub task: Task,
    /// `states[k]` is the world before turn k; the last entry is the current state.
    pub states: Vec<WorldState>,
    pub turns: Vec<InteractionTurn>,
    pub solved: bool,
    pub abandoned: bool,
}

impl Episode {
    pub fn new(index: usize, seed: u64, task: Task, initial: WorldState) -> Self {
        Episode {
            index,
            seed,
            task,
            states: vec![initial],
            turns: Vec::new(),
            solved: false,
            abandoned: false,
        }
    }

    pub fn state(&self) -> &WorldState {
        self.states.last().expect("episode has an initial state")
    }

    pub fn is_over(&self) -> bool {
        self.solved || self.abandoned
    }

    /// Interprets and runs one utterance, stopping at the first failing action.
    pub fn submit(
        &mut self,
        utterance: &str,
        model: &UserModel,
        res: &Resources,
    ) -> Result<&InteractionTurn, SessionError> {
        if self.is_over() {
            return Err(SessionError::EpisodeOver);
        }
        let before = self.state().clone();
        let interpretation = model.interpret(utterance, &before, res);
        let program = interpretation.program.clone();
        let (after, executed, outcome) = match &program {
            Program::NotSure => (before.clone(), Vec::new(), Outcome::NotSure),
            Program::Actions(actions) => {
                let (after, err) = before.execute_all(actions);
                match err {
                    None => (after, actions.clone(), Outcome::Executed),
                    Some((i, error)) => (
                        after,
                        actions[..i].to_vec(),
                        Outcome::Partial {
                            failed_at: i,
                            error,
                        },
                    ),
                }
            }
        };
        let rendered_actions: Vec<String> = executed
            .iter()
            .map(|a| render_action(a, &res.catalog))
            .collect();
        let response = match &outcome {
            Outcome::NotSure => NOT_SURE_MESSAGE.to_string(),
            Outcome::Executed => rendered_actions.join(", "),
            Outcome::Partial { error, .. } => {
                let done = if rendered_actions.is_empty() {
                    String::new()
                } else {
                    format!("{}, then ", rendered_actions.join(", "))
                };
                format!("{done}I couldn't continue: {error}")
            }
        };
        let index = self.turns.len();
        self.turns.push(InteractionTurn {
            index,
            utterance: utterance.to_string(),
            program,
            state_before: self.states.len() - 1,
            executed,
            outcome,
            response,
            rendered_actions,
            interpretation,
        });
        self.solved = check_goal(&after, &self.task);
        self.states.push(after);
        Ok(self.turns.last().expect("just pushed"))
    }

    /// NOT_SURE turns that have at least one later turn with executed actions.
    pub fn collect_teachable(&self) -> Vec<usize> {
        self.turns
            .iter()
            .filter(|t| t.is_not_sure())
            .filter(|t| {
                self.turns[t.index + 1..]
                    .iter()
                    .any(|u| !u.executed.is_empty())
            })
            .map(|t| t.index)
            .collect()
    }

    /// Turns annotations into grounded and lifted examples. Spans must follow
    /// their target, contain no NOT_SURE turn, execute something and not
    /// overlap each other.
    pub fn apply_teaching(
        &self,
        annotations: &[TeachingAnnotation],
        res: &Resources,
    ) -> Result<Vec<Example>, SessionError> {
        let mut used: Vec<(usize, usize)> = Vec::new();
        let mut out = Vec::with_capacity(annotations.len());
        for a in annotations {
            let bad = |reason: &str| SessionError::InvalidSpan {
                target: a.target_turn,
                reason: reason.to_string(),
            };
            let target = self
                .turns
                .get(a.target_turn)
                .ok_or_else(|| bad("no such turn"))?;
            if !target.is_not_sure() {
                return Err(bad("target turn was understood"));
            }
            let (i, j) = a.span;
            if i > j {
                return Err(bad("span is reversed"));
            }
            if i <= a.target_turn {
                return Err(bad("span must come after the target turn"));
            }
            if j >= self.turns.len() {
                return Err(bad("span runs past the last turn"));
            }
            if self.turns[i..=j].iter().any(InteractionTurn::is_not_sure) {
                return Err(bad("span contains a NOT_SURE turn"));
            }
            if used.iter().any(|&(s, e)| i <= e && s <= j) {
                return Err(bad("span overlaps another annotation"));
            }
            used.push((i, j));
            let actions: Vec<PrimitiveAction> = self.turns[i..=j]
                .iter()
                .flat_map(|t| t.executed.clone())
                .collect();
            let program =
                Program::from_actions(actions).map_err(|_| bad("span executed no actions"))?;
            let state = &self.states[target.state_before];
            let (f, q, _) = lift_example(&target.utterance, &program, state, &res.lexicon)?;
            out.push(Example {
                utterance: target.utterance.clone(),
                program: Some(program),
                lifted_utterance: f,
                lifted_program: q,
                origin: Origin::Taught {
                    episode: self.index,
                    turn: a.target_turn,
                },
            });
        }
        Ok(out)
    }

    /// Every turn whose program ran to completion, as reranker supervision.
    pub fn gold_records(&self) -> Vec<GoldRecord> {
        self.turns
            .iter()
            .filter(|t| t.outcome == Outcome::Executed)
            .map(|t| GoldRecord {
                utterance: t.utterance.clone(),
                state: self.states[t.state_before].clone(),
                gold: t.program.clone(),
            })
            .collect()
    }

    pub fn metrics(&self, examples_taught: usize) -> EpisodeMetrics {
        let utterances = self.turns.len();
        let complexity: usize = self.turns.iter().map(|t| t.program.complexity()).sum();
        EpisodeMetrics {
            episode: self.index,
            task_type: self.task.task_type,
            utterances,
            min_primitives: self.task.min_primitives,
            solved: self.solved,
            examples_taught,
            per_turn_complexity: if utterances == 0 {
                0.0
            } else {
                complexity as f64 / utterances as f64
            },
            normalized_episode_length: utterances as f64 / self.task.min_primitives as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub task_type: TaskType,
    pub utterances: usize,
    pub min_primitives: usize,
    pub solved: bool,
    /// Dataset size after this episode's teaching phase.
    pub examples_taught: usize,
    pub per_turn_complexity: f64,
    pub normalized_episode_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    /// Dataset size before the first episode (the seed count).
    pub initial_examples: usize,
    pub examples_taught: usize,
    pub episodes: Vec<EpisodeMetrics>,
}

/// Per-episode and cumulative metrics. `taught_after[k]` is the dataset size
/// after episode k's teaching (or the current size for an unfinished one).
pub fn compute_metrics(
    episodes: &[Episode],
    initial_examples: usize,
    taught_after: &[usize],
) -> SessionMetrics {
    let rows: Vec<EpisodeMetrics> = episodes
        .iter()
        .enumerate()
        .map(|(k, e)| e.metrics(taught_after.get(k).copied().unwrap_or(initial_examples)))
        .collect();
    SessionMetrics {
        initial_examples,
        examples_taught: rows.last().map_or(initial_examples, |r| r.examples_taught),
        episodes: rows,
    }
}

/// Episodes in one user's run.
pub const EPISODES_PER_SESSION: usize = 5;

/// Deterministic per-episode world seed.
pub fn episode_seed(session_seed: u64, episode: usize) -> u64 {
    session_seed
        .wrapping_mul(1_000_003)
        .wrapping_add(episode as u64)
}

/// One user working through a run of episodes of a single task type.
#[derive(Clone, Debug)]
pub struct Session {
    pub task_type: TaskType,
    pub seed: u64,
    pub model: UserModel,
    pub episodes: Vec<Episode>,
    /// Dataset size recorded after each finished episode's teaching.
    pub taught_after: Vec<usize>,
}

impl Session {
    pub fn new(model: UserModel, task_type: TaskType, seed: u64, res: &Resources) -> Self {
        let mut s = Session {
            task_type,
            seed,
            model,
            episodes: Vec::new(),
            taught_after: Vec::new(),
        };
        s.start_episode(res);
        s
    }

    pub fn start_episode(&mut self, res: &Resources) -> &Episode {
        let index = self.episodes.len() + 1;
        let seed = episode_seed(self.seed, index);
        let (state, task) = generate_task(&res.catalog, self.task_type, seed);
        self.episodes.push(Episode::new(index, seed, task, state));
        self.episodes.last().expect("just pushed")
    }

    pub fn episode(&self) -> &Episode {
        self.episodes.last().expect("session has an episode")
    }

    pub fn submit_utterance(
        &mut self,
        utterance: &str,
        res: &Resources,
    ) -> Result<&InteractionTurn, SessionError> {
        let episode = self.episodes.last_mut().expect("session has an episode");
        episode.submit(utterance, &self.model, res)
    }

    pub fn abandon(&mut self) {
        if let Some(e) = self.episodes.last_mut() {
            e.abandoned = true;
        }
    }

    /// Teaching for the finished episode: validates the annotations and
    /// retrains. The model is replaced only if everything succeeds.
    pub fn teach_and_retrain(
        &mut self,
        annotations: &[TeachingAnnotation],
        res: &Resources,
        progress: &dyn Fn(RetrainStage),
    ) -> Result<RetrainReport, SessionError> {
        let (new, gold) = self.prepare_teaching(annotations, res)?;
        let (model, report) = self.model.retrain(new, gold, res, progress)?;
        self.finish_teaching(model);
        Ok(report)
    }

    /// The validation half of [`Session::teach_and_retrain`].
    pub fn prepare_teaching(
        &self,
        annotations: &[TeachingAnnotation],
        res: &Resources,
    ) -> Result<(Vec<Example>, Vec<GoldRecord>), SessionError> {
        let episode = self.episode();
        if !episode.is_over() {
            return Err(SessionError::EpisodeNotFinished);
        }
        let new = episode.apply_teaching(annotations, res)?;
        let mut gold = episode.gold_records();
        for e in &new {
            if let (Origin::Taught { turn, .. }, Some(p)) = (&e.origin, &e.program) {
                gold.push(GoldRecord {
                    utterance: e.utterance.clone(),
                    state: episode.states[episode.turns[*turn].state_before].clone(),
                    gold: p.clone(),
                });
            }
        }
        Ok((new, gold))
    }

    /// Swaps in a retrained model and records the dataset size.
    pub fn finish_teaching(&mut self, model: UserModel) {
        self.model = model;
        self.taught_after.push(self.model.examples_taught());
    }

    pub fn metrics(&self) -> SessionMetrics {
        let mut taught = self.taught_after.clone();
        taught.resize(self.episodes.len(), self.model.examples_taught());
        compute_metrics(&self.episodes, self.model.seed_count, &taught)
    }
}
