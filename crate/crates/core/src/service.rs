//! Transport-independent session service: a registry of user sessions with
//! phase gating, request-id idempotency, background retraining with progress
//! events, per-session JSONL logs and per-user model checkpoints.
//!
//! Every method is blocking but short, except that teaching hands the
//! retrain to a worker thread and returns immediately.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embednet::TrainConfig;
use crate::pipeline::Resources;
use crate::program::Program;
use crate::session::{
    append_jsonl, read_jsonl, EpisodeMetrics, Outcome, RetrainStage, Session, SessionError,
    SessionMetrics, TeachingAnnotation, UserModel, EPISODES_PER_SESSION,
};
use crate::world::{ObjectId, ObjectInstance, Pos, Task, TaskType, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Interaction,
    Teaching,
    Retraining,
    Done,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSession {
    pub session_id: String,
    pub user_id: String,
    pub task_type: TaskType,
    pub seed: u64,
    /// 1-based.
    pub episode_index: usize,
    pub phase: Phase,
    pub model_version: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldView {
    pub state: WorldState,
    pub task: Task,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub task_type: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub user_id: Option<String>,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session: ApiSession,
    pub world: WorldView,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceRequest {
    pub text: String,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Executed,
    NotSure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceResponse {
    pub turn: usize,
    pub response_kind: ResponseKind,
    pub message: String,
    pub program: Program,
    pub outcome: Outcome,
    pub rendered_actions: Vec<String>,
    /// Objects whose state changed, as they are now.
    pub world_delta: Vec<ObjectInstance>,
    pub agent_position: Pos,
    pub held: Option<ObjectId>,
    pub episode_solved: bool,
    pub phase: Phase,
    pub metrics: EpisodeMetrics,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeachingRequest {
    pub annotations: Vec<TeachingAnnotation>,
    #[serde(default)]
    pub request_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeachingResponse {
    pub accepted: usize,
    pub retraining_started: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnView {
    pub index: usize,
    pub utterance: String,
    pub response_kind: ResponseKind,
    pub response: String,
    pub rendered_actions: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub session: ApiSession,
    pub world: WorldView,
    pub turns: Vec<TurnView>,
    /// NOT_SURE turns that can be annotated.
    pub teachable: Vec<usize>,
}

/// Pushed to event subscribers (server-sent events over HTTP).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ServiceEvent {
    Phase {
        phase: Phase,
        episode_index: usize,
    },
    Turn {
        turn: usize,
        response_kind: ResponseKind,
    },
    RetrainProgress {
        stage: RetrainStage,
        progress: f64,
    },
    RetrainDone {
        version: u64,
        examples: usize,
    },
    RetrainFailed {
        message: String,
    },
}

/// One line of a session's JSONL log. Nothing time-dependent goes in, so
/// replaying the same requests yields the same bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    SessionCreated {
        session_id: String,
        user_id: String,
        task_type: TaskType,
        seed: u64,
        model_version: u64,
    },
    EpisodeStarted {
        episode: usize,
        seed: u64,
        task: Task,
    },
    Utterance {
        episode: usize,
        turn: usize,
        text: String,
        program: String,
        response_kind: ResponseKind,
        rendered_actions: Vec<String>,
        solved: bool,
    },
    Abandoned {
        episode: usize,
    },
    Teaching {
        episode: usize,
        annotations: Vec<TeachingAnnotation>,
        accepted: usize,
    },
    Retrained {
        version: u64,
        examples: usize,
    },
    RetrainFailed {
        message: String,
    },
    Finished,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("session is in phase {actual:?}; this needs {expected:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("invalid span for turn {target}: {reason}")]
    InvalidSpan { target: usize, reason: String },
    #[error("{0}")]
    Internal(String),
}

impl From<SessionError> for ServiceError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::InvalidSpan { target, reason } => {
                ServiceError::InvalidSpan { target, reason }
            }
            SessionError::EpisodeOver
            | SessionError::EpisodeNotFinished
            | SessionError::Entity(_) => ServiceError::BadRequest(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// A saved seed model; bootstrapped from the bundled seeds when absent.
    pub seed_checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            seed_checkpoint: None,
            train: TrainConfig::default(),
        }
    }
}

struct Slot {
    api: ApiSession,
    session: Session,
    replies: HashMap<String, serde_json::Value>,
    events: Vec<ServiceEvent>,
    log_path: PathBuf,
}

struct Handle {
    slot: Mutex<Slot>,
    changed: Condvar,
}

impl Handle {
    fn lock(&self) -> MutexGuard<'_, Slot> {
        self.slot.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl Slot {
    fn log(&self, record: &LogRecord) {
        if let Err(e) = append_jsonl(&self.log_path, record) {
            log::warn!("session log {}: {e}", self.log_path.display());
        }
    }

    fn emit(&mut self, event: ServiceEvent) {
        self.events.push(event);
    }

    fn require(&self, expected: Phase) -> Result<(), ServiceError> {
        if self.api.phase == expected {
            Ok(())
        } else {
            Err(ServiceError::WrongPhase {
                expected,
                actual: self.api.phase,
            })
        }
    }

    fn set_phase(&mut self, phase: Phase) {
        self.api.phase = phase;
        let episode_index = self.api.episode_index;
        self.emit(ServiceEvent::Phase {
            phase,
            episode_index,
        });
    }

    fn world(&self) -> WorldView {
        let e = self.session.episode();
        WorldView {
            state: e.state().clone(),
            task: e.task.clone(),
        }
    }

    fn log_episode_start(&self) {
        let e = self.session.episode();
        self.log(&LogRecord::EpisodeStarted {
            episode: e.index,
            seed: e.seed,
            task: e.task.clone(),
        });
    }
}

/// Replays a cached reply for a seen request id, or runs `f` and caches a
/// successful result.
fn idempotent<R, F>(slot: &mut Slot, request_id: Option<&str>, f: F) -> Result<R, ServiceError>
where
    R: Serialize + DeserializeOwned,
    F: FnOnce(&mut Slot) -> Result<R, ServiceError>,
{
    if let Some(v) = request_id.and_then(|id| slot.replies.get(id)) {
        return serde_json::from_value(v.clone())
            .map_err(|e| ServiceError::Internal(e.to_string()));
    }
    let out = f(slot)?;
    if let Some(id) = request_id {
        let v = serde_json::to_value(&out).map_err(|e| ServiceError::Internal(e.to_string()))?;
        slot.replies.insert(id.to_string(), v);
    }
    Ok(out)
}

pub struct Service {
    res: Arc<Resources>,
    seed_model: UserModel,
    data_dir: PathBuf,
    sessions: Mutex<BTreeMap<String, Arc<Handle>>>,
    created: Mutex<HashMap<String, CreateSessionResponse>>,
}

impl Service {
    pub fn new(res: Resources, config: ServiceConfig) -> Result<Self, ServiceError> {
        let seed_model = match &config.seed_checkpoint {
            Some(dir) => UserModel::load(dir)?,
            None => UserModel::bootstrap(&res, config.train)?,
        };
        Ok(Self::with_model(res, seed_model, &config.data_dir))
    }

    pub fn with_model(res: Resources, seed_model: UserModel, data_dir: &Path) -> Self {
        Service {
            res: Arc::new(res),
            seed_model,
            data_dir: data_dir.to_path_buf(),
            sessions: Mutex::new(BTreeMap::new()),
            created: Mutex::new(HashMap::new()),
        }
    }

    pub fn resources(&self) -> &Resources {
        &self.res
    }

    pub fn seed_model(&self) -> &UserModel {
        &self.seed_model
    }

    fn handle(&self, id: &str) -> Result<Arc<Handle>, ServiceError> {
        let sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    pub fn user_dir(&self, user_id: &str) -> PathBuf {
        self.data_dir.join("users").join(user_id)
    }

    pub fn log_path(&self, session_id: &str) -> Result<PathBuf, ServiceError> {
        Ok(self.handle(session_id)?.lock().log_path.clone())
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .keys()
            .cloned()
            .collect()
    }

    pub fn create_session(
        &self,
        req: CreateSessionRequest,
    ) -> Result<CreateSessionResponse, ServiceError> {
        let mut created = self.created.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(r) = req.request_id.as_ref().and_then(|id| created.get(id)) {
            return Ok(r.clone());
        }
        let task_type: TaskType = req
            .task_type
            .parse()
            .map_err(|e: crate::world::UnknownTaskType| ServiceError::BadRequest(e.to_string()))?;
        let mut sessions = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        let n = sessions.len() + 1;
        let session_id = format!("s{n}");
        let user_id = match req.user_id {
            Some(u) if is_safe_id(&u) => u,
            Some(u) => return Err(ServiceError::BadRequest(format!("bad user id {u:?}"))),
            None => format!("u{n}"),
        };
        let session = Session::new(self.seed_model.clone(), task_type, req.seed, &self.res);
        let log_dir = self.user_dir(&user_id).join("sessions");
        std::fs::create_dir_all(&log_dir)
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", log_dir.display())))?;
        let log_path = log_dir.join(format!("{session_id}.jsonl"));
        // A restarted server may reuse an id; start the log afresh.
        let _ = std::fs::remove_file(&log_path);
        let api = ApiSession {
            session_id: session_id.clone(),
            user_id,
            task_type,
            seed: req.seed,
            episode_index: 1,
            phase: Phase::Interaction,
            model_version: session.model.version,
        };
        let slot = Slot {
            api: api.clone(),
            session,
            replies: HashMap::new(),
            events: Vec::new(),
            log_path,
        };
        slot.log(&LogRecord::SessionCreated {
            session_id: api.session_id.clone(),
            user_id: api.user_id.clone(),
            task_type,
            seed: req.seed,
            model_version: api.model_version,
        });
        slot.log_episode_start();
        let resp = CreateSessionResponse {
            session: api,
            world: slot.world(),
        };
        sessions.insert(
            session_id,
            Arc::new(Handle {
                slot: Mutex::new(slot),
                changed: Condvar::new(),
            }),
        );
        if let Some(id) = req.request_id {
            created.insert(id, resp.clone());
        }
        Ok(resp)
    }

    pub fn post_utterance(
        &self,
        session_id: &str,
        req: UtteranceRequest,
    ) -> Result<UtteranceResponse, ServiceError> {
        let h = self.handle(session_id)?;
        let mut slot = h.lock();
        let res = &self.res;
        let out = idempotent(&mut slot, req.request_id.as_deref(), |slot| {
            slot.require(Phase::Interaction)?;
            if req.text.trim().is_empty() {
                return Err(ServiceError::BadRequest("empty utterance".into()));
            }
            let turn = slot.session.submit_utterance(&req.text, res)?.clone();
            let episode = slot.session.episode();
            let before = &episode.states[turn.state_before];
            let after = episode.state();
            let world_delta = before
                .changed_objects(after)
                .into_iter()
                .filter_map(|id| after.object(id).cloned())
                .collect();
            let response_kind = if turn.is_not_sure() {
                ResponseKind::NotSure
            } else {
                ResponseKind::Executed
            };
            let solved = episode.solved;
            let (agent_position, held) = (after.agent_position, after.held);
            let metrics = episode.metrics(slot.session.model.examples_taught());
            slot.log(&LogRecord::Utterance {
                episode: slot.api.episode_index,
                turn: turn.index,
                text: req.text.clone(),
                program: turn.program.to_string(),
                response_kind,
                rendered_actions: turn.rendered_actions.clone(),
                solved,
            });
            slot.emit(ServiceEvent::Turn {
                turn: turn.index,
                response_kind,
            });
            if solved {
                slot.set_phase(Phase::Teaching);
            }
            Ok(UtteranceResponse {
                turn: turn.index,
                response_kind,
                message: turn.response.clone(),
                program: turn.program.clone(),
                outcome: turn.outcome.clone(),
                rendered_actions: turn.rendered_actions.clone(),
                world_delta,
                agent_position,
                held,
                episode_solved: solved,
                phase: slot.api.phase,
                metrics,
            })
        });
        h.changed.notify_all();
        out
    }

    /// Gives up on the current episode; it can still be taught from.
    pub fn abandon(
        &self,
        session_id: &str,
        request_id: Option<&str>,
    ) -> Result<ApiSession, ServiceError> {
        let h = self.handle(session_id)?;
        let mut slot = h.lock();
        let out = idempotent(&mut slot, request_id, |slot| {
            slot.require(Phase::Interaction)?;
            slot.session.abandon();
            slot.log(&LogRecord::Abandoned {
                episode: slot.api.episode_index,
            });
            slot.set_phase(Phase::Teaching);
            Ok(slot.api.clone())
        });
        h.changed.notify_all();
        out
    }

    /// Validates the annotations and starts retraining in the background.
    pub fn post_teaching(
        &self,
        session_id: &str,
        req: TeachingRequest,
    ) -> Result<TeachingResponse, ServiceError> {
        let h = self.handle(session_id)?;
        let mut slot = h.lock();
        let res = Arc::clone(&self.res);
        let mut job = None;
        let out = idempotent(&mut slot, req.request_id.as_deref(), |slot| {
            slot.require(Phase::Teaching)?;
            let (new, gold) = slot.session.prepare_teaching(&req.annotations, &res)?;
            let accepted = new.len();
            slot.log(&LogRecord::Teaching {
                episode: slot.api.episode_index,
                annotations: req.annotations.clone(),
                accepted,
            });
            slot.set_phase(Phase::Retraining);
            job = Some((slot.session.model.clone(), new, gold));
            Ok(TeachingResponse {
                accepted,
                retraining_started: true,
            })
        });
        drop(slot);
        if let Some((model, new, gold)) = job {
            let handle = Arc::clone(&h);
            let checkpoints = self.data_dir.join("users");
            thread::spawn(move || retrain_job(handle, res, model, new, gold, checkpoints));
        }
        h.changed.notify_all();
        out
    }

    pub fn session(&self, session_id: &str) -> Result<ApiSession, ServiceError> {
        Ok(self.handle(session_id)?.lock().api.clone())
    }

    pub fn metrics(&self, session_id: &str) -> Result<SessionMetrics, ServiceError> {
        Ok(self.handle(session_id)?.lock().session.metrics())
    }

    pub fn state(&self, session_id: &str) -> Result<StateView, ServiceError> {
        let h = self.handle(session_id)?;
        let slot = h.lock();
        let episode = slot.session.episode();
        let turns = episode
            .turns
            .iter()
            .map(|t| TurnView {
                index: t.index,
                utterance: t.utterance.clone(),
                response_kind: if t.is_not_sure() {
                    ResponseKind::NotSure
                } else {
                    ResponseKind::Executed
                },
                response: t.response.clone(),
                rendered_actions: t.rendered_actions.clone(),
            })
            .collect();
        Ok(StateView {
            session: slot.api.clone(),
            world: slot.world(),
            turns,
            teachable: episode.collect_teachable(),
        })
    }

    /// The session's log, one JSON value per line.
    pub fn log(&self, session_id: &str) -> Result<Vec<serde_json::Value>, ServiceError> {
        let path = self.log_path(session_id)?;
        Ok(read_jsonl(&path)?)
    }

    /// Events numbered from 0; returns those at `since` and later.
    pub fn events_since(
        &self,
        session_id: &str,
        since: usize,
    ) -> Result<Vec<(usize, ServiceEvent)>, ServiceError> {
        let h = self.handle(session_id)?;
        let slot = h.lock();
        Ok(slot
            .events
            .iter()
            .cloned()
            .enumerate()
            .skip(since)
            .collect())
    }

    /// Like [`Service::events_since`] but blocks up to `timeout` for the
    /// first new event.
    pub fn wait_events(
        &self,
        session_id: &str,
        since: usize,
        timeout: Duration,
    ) -> Result<Vec<(usize, ServiceEvent)>, ServiceError> {
        let h = self.handle(session_id)?;
        let slot = h.lock();
        let (slot, _) = h
            .changed
            .wait_timeout_while(slot, timeout, |s| s.events.len() <= since)
            .unwrap_or_else(|p| p.into_inner());
        Ok(slot
            .events
            .iter()
            .cloned()
            .enumerate()
            .skip(since)
            .collect())
    }

    /// Blocks until the session is not retraining (or `timeout` passes).
    pub fn wait_idle(
        &self,
        session_id: &str,
        timeout: Duration,
    ) -> Result<ApiSession, ServiceError> {
        let h = self.handle(session_id)?;
        let slot = h.lock();
        let (slot, _) = h
            .changed
            .wait_timeout_while(slot, timeout, |s| s.api.phase == Phase::Retraining)
            .unwrap_or_else(|p| p.into_inner());
        Ok(slot.api.clone())
    }
}

fn retrain_job(
    h: Arc<Handle>,
    res: Arc<Resources>,
    model: UserModel,
    new: Vec<crate::session::Example>,
    gold: Vec<crate::session::GoldRecord>,
    checkpoints: PathBuf,
) {
    let progress = |stage: RetrainStage| {
        h.lock().emit(ServiceEvent::RetrainProgress {
            stage,
            progress: stage.progress(),
        });
        h.changed.notify_all();
    };
    let result = model.retrain(new, gold, &res, &progress);
    let mut slot = h.lock();
    match result {
        Ok((model, report)) => {
            let dir = checkpoints
                .join(&slot.api.user_id)
                .join(format!("v{}", model.version));
            if let Err(e) = model.save(&dir) {
                log::warn!("checkpoint {}: {e}", dir.display());
            }
            slot.api.model_version = model.version;
            slot.session.finish_teaching(model);
            slot.log(&LogRecord::Retrained {
                version: report.version,
                examples: report.examples,
            });
            slot.emit(ServiceEvent::RetrainDone {
                version: report.version,
                examples: report.examples,
            });
            if slot.api.episode_index >= EPISODES_PER_SESSION {
                slot.log(&LogRecord::Finished);
                slot.set_phase(Phase::Done);
            } else {
                slot.session.start_episode(&res);
                slot.api.episode_index += 1;
                slot.log_episode_start();
                slot.set_phase(Phase::Interaction);
            }
        }
        Err(e) => {
            let message = e.to_string();
            log::error!("retrain for {}: {message}", slot.api.session_id);
            slot.log(&LogRecord::RetrainFailed {
                message: message.clone(),
            });
            slot.emit(ServiceEvent::RetrainFailed { message });
            slot.set_phase(Phase::Teaching);
        }
    }
    drop(slot);
    h.changed.notify_all();
}

fn is_safe_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}
