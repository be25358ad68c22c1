//! HTTP+JSON front end over [`decomp_core::service::Service`].
//!
//! Routes (all JSON):
//!
//! | method | path                         | body                  |
//! |--------|------------------------------|-----------------------|
//! | POST   | /sessions                    | CreateSessionRequest  |
//! | GET    | /sessions/{id}               |                       |
//! | POST   | /sessions/{id}/utterances    | UtteranceRequest      |
//! | POST   | /sessions/{id}/teaching      | TeachingRequest       |
//! | POST   | /sessions/{id}/abandon       | `{request_id?}`       |
//! | GET    | /sessions/{id}/state         |                       |
//! | GET    | /sessions/{id}/metrics       |                       |
//! | GET    | /sessions/{id}/log           |                       |
//! | GET    | /sessions/{id}/events?since= | server-sent events    |
//!
//! A request id may be given in the body or as an `x-request-id` header;
//! retries with the same id get the original reply.

pub mod oracle;

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};

use decomp_core::service::{
    CreateSessionRequest, Phase, Service, ServiceError, ServiceEvent, TeachingRequest,
    UtteranceRequest,
};

/// How long one SSE poll waits before re-checking the session.
const EVENT_POLL: Duration = Duration::from_secs(10);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_turn: Option<usize>,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, target_turn) = match &self.0 {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found", None),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request", None),
            ServiceError::WrongPhase { .. } => (StatusCode::CONFLICT, "wrong_phase", None),
            ServiceError::InvalidSpan { target, .. } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_span",
                Some(*target),
            ),
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", None),
        };
        let body = ErrorBody {
            error: kind.into(),
            message: self.0.to_string(),
            target_turn,
        };
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<Service>;
type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs a service call off the async executor.
async fn blocking<T, F>(svc: &Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    let svc = Arc::clone(svc);
    match tokio::task::spawn_blocking(move || f(&svc)).await {
        Ok(r) => r.map(Json).map_err(ApiError),
        Err(e) => Err(ApiError(ServiceError::Internal(e.to_string()))),
    }
}

fn header_request_id(headers: &HeaderMap) -> Option<String> {
    headers
        .get("x-request-id")
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/utterances", post(post_utterance))
        .route("/sessions/{id}/teaching", post(post_teaching))
        .route("/sessions/{id}/abandon", post(abandon))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/log", get(get_log))
        .route("/sessions/{id}/events", get(events))
        .with_state(service)
}

async fn create_session(
    State(svc): State<Shared>,
    headers: HeaderMap,
    Json(mut req): Json<CreateSessionRequest>,
) -> Result<Response, ApiError> {
    req.request_id = req.request_id.or_else(|| header_request_id(&headers));
    let out = blocking(&svc, move |s| s.create_session(req)).await?;
    Ok((StatusCode::CREATED, out).into_response())
}

async fn get_session(
    State(svc): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(blocking(&svc, move |s| s.session(&id))
        .await?
        .into_response())
}

async fn post_utterance(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(mut req): Json<UtteranceRequest>,
) -> Result<Response, ApiError> {
    req.request_id = req.request_id.or_else(|| header_request_id(&headers));
    Ok(blocking(&svc, move |s| s.post_utterance(&id, req))
        .await?
        .into_response())
}

async fn post_teaching(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(mut req): Json<TeachingRequest>,
) -> Result<Response, ApiError> {
    req.request_id = req.request_id.or_else(|| header_request_id(&headers));
    let out = blocking(&svc, move |s| s.post_teaching(&id, req)).await?;
    Ok((StatusCode::ACCEPTED, out).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct AbandonRequest {
    #[serde(default)]
    request_id: Option<String>,
}

async fn abandon(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Option<Json<AbandonRequest>>,
) -> Result<Response, ApiError> {
    let rid = body
        .and_then(|Json(b)| b.request_id)
        .or_else(|| header_request_id(&headers));
    Ok(blocking(&svc, move |s| s.abandon(&id, rid.as_deref()))
        .await?
        .into_response())
}

async fn get_state(
    State(svc): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(blocking(&svc, move |s| s.state(&id)).await?.into_response())
}

async fn get_metrics(
    State(svc): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    Ok(blocking(&svc, move |s| s.metrics(&id))
        .await?
        .into_response())
}

async fn get_log(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(blocking(&svc, move |s| s.log(&id)).await?.into_response())
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    since: usize,
}

fn event_name(e: &ServiceEvent) -> &'static str {
    match e {
        ServiceEvent::Phase { .. } => "phase",
        ServiceEvent::Turn { .. } => "turn",
        ServiceEvent::RetrainProgress { .. } => "retrain_progress",
        ServiceEvent::RetrainDone { .. } => "retrain_done",
        ServiceEvent::RetrainFailed { .. } => "retrain_failed",
    }
}

/// Server-sent events for one session, starting at event number `since`.
/// The stream ends once the session is done and every event was sent.
async fn events(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    // Fail fast on unknown sessions instead of opening an empty stream.
    let _ = blocking(&svc, {
        let id = id.clone();
        move |s| s.session(&id)
    })
    .await?;
    let stream = stream::unfold((svc, id, q.since), |(svc, id, since)| async move {
        loop {
            let (s2, id2) = (Arc::clone(&svc), id.clone());
            let polled = tokio::task::spawn_blocking(move || {
                let evs = s2.wait_events(&id2, since, EVENT_POLL)?;
                let phase = s2.session(&id2)?.phase;
                Ok::<_, ServiceError>((evs, phase))
            })
            .await;
            let (evs, phase) = match polled {
                Ok(Ok(x)) => x,
                _ => return None,
            };
            if evs.is_empty() {
                if phase == Phase::Done {
                    return None;
                }
                continue;
            }
            let next = evs.last().map_or(since, |(k, _)| k + 1);
            let items: Vec<Result<Event, Infallible>> = evs
                .iter()
                .map(|(k, e)| {
                    Ok(Event::default()
                        .id(k.to_string())
                        .event(event_name(e))
                        .json_data(e)
                        .expect("event serializes"))
                })
                .collect();
            return Some((stream::iter(items), (svc, id, next)));
        }
    });
    use futures::StreamExt;
    Ok(Sse::new(stream.flatten()).keep_alive(KeepAlive::default()))
}
