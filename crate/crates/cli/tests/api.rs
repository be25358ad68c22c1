use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use decomp::ErrorBody;
use decomp_core::pipeline::Resources;
use decomp_core::scripted_user::Namer;
use decomp_core::service::Service;
use decomp_core::session::{UserModel, NOT_SURE_MESSAGE};
use decomp_core::world::Task;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/seed-checkpoint")
}

struct Api {
    app: Router,
    svc: Arc<Service>,
    _dir: tempfile::TempDir,
}

fn api() -> Api {
    let dir = tempfile::tempdir().unwrap();
    let model = UserModel::load(&fixture()).unwrap();
    let svc = Arc::new(Service::with_model(Resources::builtin(), model, dir.path()));
    Api {
        app: decomp::router(Arc::clone(&svc)),
        svc,
        _dir: dir,
    }
}

impl Api {
    async fn call(
        &self,
        method: Method,
        uri: &str,
        body: Option<Value>,
        request_id: Option<&str>,
    ) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(rid) = request_id {
            req = req.header("x-request-id", rid);
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp
            .into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec();
        (status, bytes)
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.call(method, uri, body, None).await;
        (
            status,
            serde_json::from_slice(&bytes).unwrap_or(Value::Null),
        )
    }

    async fn create(&self, task_type: &str, seed: u64) -> (String, Task) {
        let (status, v) = self
            .json(
                Method::POST,
                "/sessions",
                Some(json!({"task_type": task_type, "seed": seed})),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        let id = v["session"]["session_id"].as_str().unwrap().to_string();
        (
            id,
            serde_json::from_value(v["world"]["task"].clone()).unwrap(),
        )
    }

    async fn say(&self, id: &str, text: &str) -> Value {
        let (status, v) = self
            .json(
                Method::POST,
                &format!("/sessions/{id}/utterances"),
                Some(json!({ "text": text })),
            )
            .await;
        assert_eq!(status, StatusCode::OK, "{v}");
        v
    }
}

fn names(svc: &Service, task: &Task) -> (String, String) {
    let namer = Namer::new(&svc.resources().catalog, false);
    (
        namer.name(task.target()),
        namer.name(&task.goal.destination),
    )
}

#[tokio::test]
async fn health_and_session_creation() {
    let api = api();
    let (status, body) = api.call(Method::GET, "/health", None, None).await;
    assert_eq!(
        (status, body.as_slice()),
        (StatusCode::OK, b"ok".as_slice())
    );

    let (status, v) = api
        .json(
            Method::POST,
            "/sessions",
            Some(json!({"task_type": "PickAndPlace", "seed": 3})),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["session"]["phase"], "interaction");
    assert_eq!(v["session"]["episode_index"], 1);
    assert_eq!(v["session"]["task_type"], "PickAndPlace");
    assert!(v["world"]["state"].is_object());
    assert!(v["world"]["task"].is_object());

    let id = v["session"]["session_id"].as_str().unwrap();
    let (status, s) = api
        .json(Method::GET, &format!("/sessions/{id}"), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s, v["session"]);

    let (status, v) = api
        .json(
            Method::POST,
            "/sessions",
            Some(json!({"task_type": "MakeCoffee", "seed": 3})),
        )
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_value(v).unwrap();
    assert_eq!(err.error, "bad_request");
}

#[tokio::test]
async fn unknown_sessions_are_404() {
    let api = api();
    for (method, path) in [
        (Method::GET, "/sessions/nope"),
        (Method::GET, "/sessions/nope/state"),
        (Method::GET, "/sessions/nope/metrics"),
        (Method::GET, "/sessions/nope/log"),
        (Method::GET, "/sessions/nope/events"),
    ] {
        let (status, v) = api.json(method, path, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{path}");
        assert_eq!(v["error"], "not_found");
    }
    let (status, _) = api
        .json(
            Method::POST,
            "/sessions/nope/utterances",
            Some(json!({"text": "go to the sink"})),
        )
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn not_sure_reply_and_phase_gating() {
    let api = api();
    let (id, task) = api.create("PickCleanPlace", 5).await;
    let (t, d) = names(&api.svc, &task);
    let v = api
        .say(&id, &format!("wash the {t} and put it on the {d}"))
        .await;
    assert_eq!(v["response_kind"], "not_sure");
    assert_eq!(v["message"], NOT_SURE_MESSAGE);
    assert_eq!(v["turn"], 0);
    assert_eq!(v["rendered_actions"], json!([]));
    assert_eq!(v["phase"], "interaction");

    let (status, v) = api
        .json(
            Method::POST,
            &format!("/sessions/{id}/teaching"),
            Some(json!({"annotations": [{"target_turn": 0, "span": [1, 1]}]})),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "wrong_phase");

    let v = api.say(&id, &format!("go to the {t}")).await;
    assert_eq!(v["response_kind"], "executed");
    assert_eq!(v["rendered_actions"].as_array().unwrap().len(), 1);
    assert!(v["agent_position"].is_object() || v["agent_position"].is_array());

    let (status, state) = api
        .json(Method::GET, &format!("/sessions/{id}/state"), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    let turns = state["turns"].as_array().unwrap();
    assert_eq!(turns.len(), 2);
    assert_eq!(turns[0]["response_kind"], "not_sure");
    assert_eq!(turns[1]["utterance"], format!("go to the {t}"));
}

#[tokio::test]
async fn request_ids_make_posts_idempotent() {
    let api = api();
    let (id, task) = api.create("PickAndPlace", 9).await;
    let (t, _) = names(&api.svc, &task);
    let uri = format!("/sessions/{id}/utterances");
    let body = json!({ "text": format!("go to the {t}") });
    let (s1, first) = api
        .call(Method::POST, &uri, Some(body.clone()), Some("r-1"))
        .await;
    let (s2, again) = api
        .call(Method::POST, &uri, Some(body.clone()), Some("r-1"))
        .await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(first, again);
    let (_, state) = api
        .json(Method::GET, &format!("/sessions/{id}/state"), None)
        .await;
    assert_eq!(state["turns"].as_array().unwrap().len(), 1);

    let (_, other) = api.call(Method::POST, &uri, Some(body), Some("r-2")).await;
    let other: Value = serde_json::from_slice(&other).unwrap();
    assert_eq!(other["turn"], 1);

    let create = json!({"task_type": "PickAndPlace", "seed": 1, "request_id": "c-1"});
    let (_, a) = api
        .call(Method::POST, "/sessions", Some(create.clone()), None)
        .await;
    let (_, b) = api
        .call(Method::POST, "/sessions", Some(create), None)
        .await;
    assert_eq!(a, b);
}

async fn sse_events(api: &Api, id: &str, since: usize) -> Vec<(String, String, Value)> {
    let (status, body) = api
        .call(
            Method::GET,
            &format!("/sessions/{id}/events?since={since}"),
            None,
            None,
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(body).unwrap();
    text.split("\n\n")
        .filter(|block| block.contains("data:"))
        .map(|block| {
            let field = |name: &str| {
                block
                    .lines()
                    .find_map(|l| l.strip_prefix(name).map(|v| v.trim().to_string()))
                    .unwrap_or_default()
            };
            let data = serde_json::from_str(&field("data:")).unwrap();
            (field("id:"), field("event:"), data)
        })
        .collect()
}

#[tokio::test]
async fn full_episode_over_http_with_teaching_retraining_and_events() {
    let api = api();
    let (id, task) = api.create("PickAndPlace", 2).await;
    let (t, d) = names(&api.svc, &task);
    assert_eq!(
        api.say(&id, &format!("bring the {t} to the {d}")).await["response_kind"],
        "not_sure"
    );
    api.say(&id, &format!("go to the {t} and pick it up")).await;
    api.say(&id, &format!("go to the {d}")).await;
    let last = api.say(&id, &format!("put the {t} on the {d}")).await;
    assert_eq!(last["episode_solved"], true);
    assert_eq!(last["phase"], "teaching");

    let (_, state) = api
        .json(Method::GET, &format!("/sessions/{id}/state"), None)
        .await;
    assert_eq!(state["teachable"], json!([0]));

    let uri = format!("/sessions/{id}/teaching");
    let (status, v) = api
        .json(
            Method::POST,
            &uri,
            Some(json!({"annotations": [{"target_turn": 0, "span": [0, 3]}]})),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let err: ErrorBody = serde_json::from_value(v).unwrap();
    assert_eq!(
        (err.error.as_str(), err.target_turn),
        ("invalid_span", Some(0))
    );

    let (status, v) = api
        .json(
            Method::POST,
            &uri,
            Some(json!({"annotations": [{"target_turn": 0, "span": [1, 3]}]})),
        )
        .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{v}");
    assert_eq!(v, json!({"accepted": 1, "retraining_started": true}));

    let svc = Arc::clone(&api.svc);
    let sid = id.clone();
    let session =
        tokio::task::spawn_blocking(move || svc.wait_idle(&sid, Duration::from_secs(600)))
            .await
            .unwrap()
            .unwrap();
    assert_eq!(session.model_version, 1);
    assert_eq!(session.episode_index, 2);

    let (_, s) = api
        .json(Method::GET, &format!("/sessions/{id}"), None)
        .await;
    assert_eq!(s["phase"], "interaction");
    assert_eq!(s["model_version"], 1);

    // Abandon the remaining episodes so the event stream terminates.
    for _ in 2..=decomp_core::session::EPISODES_PER_SESSION {
        let (status, v) = api
            .json(Method::POST, &format!("/sessions/{id}/abandon"), None)
            .await;
        assert_eq!(status, StatusCode::OK, "{v}");
        if v["phase"] == "teaching" {
            let (status, _) = api
                .json(Method::POST, &uri, Some(json!({"annotations": []})))
                .await;
            assert_eq!(status, StatusCode::ACCEPTED);
            let (svc, sid) = (Arc::clone(&api.svc), id.clone());
            tokio::task::spawn_blocking(move || svc.wait_idle(&sid, Duration::from_secs(600)))
                .await
                .unwrap()
                .unwrap();
        }
    }
    let (_, s) = api
        .json(Method::GET, &format!("/sessions/{id}"), None)
        .await;
    assert_eq!(s["phase"], "done");

    let events = sse_events(&api, &id, 0).await;
    let kinds: Vec<&str> = events.iter().map(|(_, k, _)| k.as_str()).collect();
    assert!(kinds.contains(&"turn"), "{kinds:?}");
    assert!(kinds.contains(&"retrain_progress"));
    assert!(kinds.contains(&"retrain_done"));
    assert_eq!(kinds.last(), Some(&"phase"));
    for (k, (seq, name, data)) in events.iter().enumerate() {
        assert_eq!(seq, &k.to_string());
        assert_eq!(data["event"], name.as_str());
    }
    let done = events.iter().find(|(_, k, _)| k == "retrain_done").unwrap();
    assert_eq!(done.2["version"], 1);
    let tail = sse_events(&api, &id, events.len() - 1).await;
    assert_eq!(tail.len(), 1);
    assert_eq!(tail[0].2, events.last().unwrap().2);

    let (status, metrics) = api
        .json(Method::GET, &format!("/sessions/{id}/metrics"), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert!(
        metrics["episodes"]
            .as_array()
            .is_some_and(|e| !e.is_empty()),
        "{metrics}"
    );

    let (status, log) = api
        .json(Method::GET, &format!("/sessions/{id}/log"), None)
        .await;
    assert_eq!(status, StatusCode::OK);
    let kinds: Vec<&str> = log
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds.first(), Some(&"session_created"));
    assert_eq!(kinds.last(), Some(&"finished"));
    for k in [
        "episode_started",
        "utterance",
        "teaching",
        "retrained",
        "abandoned",
    ] {
        assert!(kinds.contains(&k), "{k} missing from {kinds:?}");
    }
    assert!(api
        .svc
        .user_dir(s["user_id"].as_str().unwrap())
        .join("v1/model.json")
        .exists());
}
