use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forestcut::dataset::WaveformDataset;
use forestcut::forest::Forest;
use forestcut::oracle::{read_log, write_log, Clock, SourceTag};
use forestcut::search::Progress;
use forestcut::treegen::{read_trees, LinkageTree};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::session::{Event, HistoryEntry, PendingPair, Session, SessionConfig, SessionError, SessionMeta, Status, Verdict};
use crate::store::{Store, StoreError, StoredTree};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, body: json!({ "error": message.into() }) }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn conflict(message: impl Into<String>, extra: Value) -> Self {
        let mut body = json!({ "error": message.into() });
        if let (Some(obj), Value::Object(more)) = (body.as_object_mut(), extra) {
            obj.extend(more);
        }
        ApiError { status: StatusCode::CONFLICT, body }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Artifact(e) => ApiError::bad_request(e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Engine(e) => ApiError::internal(e.to_string()),
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    store: Store,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(store: Store) -> Self {
        AppState { store, sessions: Mutex::new(HashMap::new()) }
    }

    fn dataset(&self, id: &str) -> ApiResult<WaveformDataset> {
        self.store.get_dataset(id)?.ok_or_else(|| ApiError::not_found(format!("unknown dataset {id}")))
    }

    fn ensemble(&self, id: &str) -> ApiResult<Vec<(String, LinkageTree)>> {
        self.store.get_ensemble(id)?.ok_or_else(|| ApiError::not_found(format!("unknown ensemble {id}")))
    }

    /// Sessions are loaded from disk on first use, so a restarted service
    /// resumes every session exactly where its log ends.
    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        if let Some(s) = sessions.get(id) {
            return Ok(s.clone());
        }
        let (meta, events) =
            self.store.load_session(id)?.ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))?;
        let dataset = self.dataset(&meta.dataset_id)?;
        let forest = build_forest(&dataset, &self.ensemble(&meta.ensemble_id)?)?;
        let session = Session::new(meta, Arc::new(dataset), Arc::new(forest), events)?;
        let session = Arc::new(Mutex::new(session));
        sessions.insert(id.to_string(), session.clone());
        Ok(session)
    }
}

fn build_forest(dataset: &WaveformDataset, trees: &[(String, LinkageTree)]) -> ApiResult<Forest> {
    if let Some((tag, t)) = trees.iter().find(|(_, t)| t.n != dataset.len()) {
        return Err(ApiError::bad_request(format!(
            "tree {tag} has {} leaves but the dataset has {} units",
            t.n,
            dataset.len()
        )));
    }
    Forest::from_linkages(trees).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn now() -> String {
    Clock::Wall.stamp(0)
}

#[derive(Serialize)]
struct UnitView {
    unit_id: usize,
    session: usize,
    /// One sample array per channel.
    waveform: Vec<Vec<f64>>,
}

fn unit_view(dataset: &WaveformDataset, id: usize) -> UnitView {
    let unit = &dataset.units[id];
    let samples = dataset.layout.map_or(unit.features.len(), |l| l.samples).max(1);
    UnitView { unit_id: unit.id, session: unit.session, waveform: unit.features.chunks(samples).map(<[f64]>::to_vec).collect() }
}

fn pending_body(session: &Session, p: PendingPair) -> Value {
    json!({
        "query_id": p.query_id,
        "a": unit_view(&session.dataset, p.a),
        "b": unit_view(&session.dataset, p.b),
        "progress": session.view.progress,
    })
}

fn pending_extra(session: &Session) -> Value {
    json!({ "status": session.view.status, "pending": session.view.pending.map(|p| pending_body(session, p)) })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/v1/datasets", post(upload_dataset))
        .route("/api/v1/ensembles", post(upload_ensemble))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}/query", get(next_query))
        .route("/api/v1/sessions/{id}/answers", post(submit_answer))
        .route("/api/v1/sessions/{id}/state", get(session_state))
        .route("/api/v1/sessions/{id}/export", get(export_log))
        .route("/api/v1/sessions/{id}/undo", post(undo))
        .route("/api/v1/sessions/{id}/abort", post(abort))
        .route("/api/v1/sessions/{id}/result", get(result))
        .with_state(state)
}

async fn upload_dataset(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    blocking(move || {
        let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("dataset must be UTF-8 text"))?;
        let dataset = WaveformDataset::parse(text, std::path::Path::new("upload"))
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let id = state.store.put_dataset(&dataset)?;
        Ok((StatusCode::CREATED, Json(json!({ "dataset_id": id, "units": dataset.len() }))))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleUpload {
    trees: Vec<StoredTree>,
}

async fn upload_ensemble(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    blocking(move || {
        let upload: EnsembleUpload = parse_body(&body)?;
        if upload.trees.is_empty() {
            return Err(ApiError::bad_request("ensemble has no trees"));
        }
        let trees = upload
            .trees
            .iter()
            .map(|t| {
                LinkageTree::parse(&t.linkage, std::path::Path::new(&t.tag))
                    .map(|l| (t.tag.clone(), l))
                    .map_err(|e| ApiError::bad_request(e.to_string()))
            })
            .collect::<ApiResult<Vec<_>>>()?;
        Forest::from_linkages(&trees).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let id = state.store.put_ensemble(&trees)?;
        Ok((StatusCode::CREATED, Json(json!({ "ensemble_id": id, "trees": trees.len() }))))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    dataset_id: Option<String>,
    dataset_path: Option<PathBuf>,
    ensemble_id: Option<String>,
    trees_dir: Option<PathBuf>,
    #[serde(default)]
    config: SessionConfig,
    /// A query log (JSONL) whose non-inferred answers are applied first.
    replay_log: Option<String>,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    blocking(move || {
        let req: CreateSession = parse_body(&body)?;
        let dataset_id = match (req.dataset_id, req.dataset_path) {
            (Some(id), None) => {
                state.dataset(&id)?;
                id
            }
            (None, Some(path)) => {
                if !path.exists() {
                    return Err(ApiError::not_found(format!("no dataset at {}", path.display())));
                }
                let d = WaveformDataset::load(&path).map_err(|e| ApiError::bad_request(e.to_string()))?;
                state.store.put_dataset(&d)?
            }
            _ => return Err(ApiError::bad_request("give exactly one of dataset_id and dataset_path")),
        };
        let ensemble_id = match (req.ensemble_id, req.trees_dir) {
            (Some(id), None) => {
                state.ensemble(&id)?;
                id
            }
            (None, Some(dir)) => {
                if !dir.exists() {
                    return Err(ApiError::not_found(format!("no trees at {}", dir.display())));
                }
                let trees = read_trees(&[dir]).map_err(|e| ApiError::bad_request(e.to_string()))?;
                state.store.put_ensemble(&trees)?
            }
            _ => return Err(ApiError::bad_request("give exactly one of ensemble_id and trees_dir")),
        };
        let dataset = state.dataset(&dataset_id)?;
        let forest = build_forest(&dataset, &state.ensemble(&ensemble_id)?)?;
        if let Some(bad) = req.config.tree_subset.iter().flatten().find(|&&t| t >= forest.len()) {
            return Err(ApiError::bad_request(format!("tree index {bad} is out of range for {} trees", forest.len())));
        }
        let mut events = Vec::new();
        if let Some(log) = req.replay_log {
            let records = read_log(log.as_bytes()).map_err(|e| ApiError::bad_request(e.to_string()))?;
            for r in records.iter().filter(|r| r.source != SourceTag::Inferred) {
                events.push(Event::Answer {
                    query_id: events.len() as u64 + 1,
                    a: r.a,
                    b: r.b,
                    answer: r.answer.into(),
                    ts: r.ts.clone(),
                });
            }
        }
        let meta = SessionMeta {
            session_id: uuid::Uuid::new_v4().simple().to_string(),
            dataset_id,
            ensemble_id,
            config: req.config,
            created: now(),
        };
        let session = Session::new(meta.clone(), Arc::new(dataset), Arc::new(forest), events.clone())?;
        state.store.create_session(&meta, &events)?;
        let status = session.view.status;
        state.sessions.lock().expect("session table poisoned").insert(meta.session_id.clone(), Arc::new(Mutex::new(session)));
        Ok((StatusCode::CREATED, Json(json!({ "session_id": meta.session_id, "status": status }))))
    })
    .await
}

async fn next_query(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let session = state.session(&id)?;
        let s = session.lock().expect("session poisoned");
        Ok(match s.view.pending {
            Some(p) => Json(pending_body(&s, p)).into_response(),
            None if s.view.status == Status::Complete => StatusCode::NO_CONTENT.into_response(),
            None => ApiError::conflict("session is not awaiting an answer", pending_extra(&s)).into_response(),
        })
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerBody {
    query_id: u64,
    answer: Verdict,
}

#[derive(Serialize)]
struct Updated {
    status: Status,
    progress: Progress,
    next_query_id: Option<u64>,
    result: Option<String>,
}

fn updated(s: &Session) -> Updated {
    Updated {
        status: s.view.status,
        progress: s.view.progress,
        next_query_id: s.view.pending.map(|p| p.query_id),
        result: (s.view.status == Status::Complete).then(|| format!("/api/v1/sessions/{}/result", s.meta.session_id)),
    }
}

/// Applies `event` to the session: evaluate first, then persist, then swap
/// in the new state, so a failed or crashed call leaves no trace.
fn apply(state: &AppState, s: &mut Session, event: Event) -> ApiResult<()> {
    let (events, view) = s.preview(event.clone())?;
    state.store.append_event(&s.meta.session_id, &event)?;
    s.commit(events, view);
    Ok(())
}

async fn submit_answer(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Updated>> {
    blocking(move || {
        let session = state.session(&id)?;
        let req: AnswerBody = parse_body(&body)?;
        let mut s = session.lock().expect("session poisoned");
        let Some(p) = s.view.pending.filter(|p| p.query_id == req.query_id) else {
            return Err(ApiError::conflict(format!("query {} is not pending", req.query_id), pending_extra(&s)));
        };
        let event = Event::Answer { query_id: p.query_id, a: p.a, b: p.b, answer: req.answer, ts: now() };
        apply(&state, &mut s, event)?;
        Ok(Json(updated(&s)))
    })
    .await
}

#[derive(Serialize)]
struct StateBody<'a> {
    session_id: &'a str,
    status: Status,
    dataset_id: &'a str,
    ensemble_id: &'a str,
    config: &'a SessionConfig,
    pending: Option<PendingPair>,
    progress: Progress,
    history: &'a [HistoryEntry],
    partition: Option<Value>,
}

async fn session_state(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let session = state.session(&id)?;
        let s = session.lock().expect("session poisoned");
        let v = &s.view;
        let partition = (v.status != Status::AwaitingAnswer)
            .then(|| json!({ "n_clusters": v.partition.len(), "blocks": v.partition, "complete": v.status == Status::Complete }));
        let body = StateBody {
            session_id: &s.meta.session_id,
            status: v.status,
            dataset_id: &s.meta.dataset_id,
            ensemble_id: &s.meta.ensemble_id,
            config: &s.meta.config,
            pending: v.pending,
            progress: v.progress,
            history: &v.history,
            partition,
        };
        Ok(Json(serde_json::to_value(body).expect("state serializes")))
    })
    .await
}

async fn export_log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let session = state.session(&id)?;
        let s = session.lock().expect("session poisoned");
        let mut out = Vec::new();
        write_log(&mut out, &s.view.log).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response())
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UndoBody {
    k: usize,
}

async fn undo(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Updated>> {
    blocking(move || {
        let session = state.session(&id)?;
        let req: UndoBody = parse_body(&body)?;
        let mut s = session.lock().expect("session poisoned");
        if s.view.status == Status::Aborted {
            return Err(ApiError::conflict("session is aborted", pending_extra(&s)));
        }
        let answered = s.view.history.len();
        if req.k == 0 || req.k > answered {
            return Err(ApiError::bad_request(format!("undo k={} but only {answered} answers can be undone", req.k)));
        }
        apply(&state, &mut s, Event::Undo { k: req.k, ts: now() })?;
        Ok(Json(updated(&s)))
    })
    .await
}

async fn abort(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Updated>> {
    blocking(move || {
        let session = state.session(&id)?;
        let mut s = session.lock().expect("session poisoned");
        if s.view.status != Status::AwaitingAnswer {
            return Err(ApiError::conflict("only a session awaiting an answer can be aborted", pending_extra(&s)));
        }
        apply(&state, &mut s, Event::Abort { ts: now() })?;
        Ok(Json(updated(&s)))
    })
    .await
}

async fn result(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let session = state.session(&id)?;
        let s = session.lock().expect("session poisoned");
        match &s.view.report {
            Some(report) => Ok(Json(serde_json::to_value(report).expect("report serializes"))),
            None => Err(ApiError::conflict("session is not complete", pending_extra(&s))),
        }
    })
    .await
}
