use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bytes::Bytes;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex, RwLock};
use tutor_core::session::{
    ConfigOverrides, Session, SessionConfig, SessionError, SessionRuntime, SessionStore, StageEvent, TurnEngine,
    TurnRecord,
};

/// Largest accepted upload: five minutes of 48 kHz stereo PCM.
pub const MAX_UPLOAD_BYTES: usize = 5 * 60 * 48_000 * 2 * 2 + 1024;

const EVENT_BUFFER: usize = 64;

/// Live state for one session: the turn lock and its event channel.
pub struct SessionSlot {
    runtime: Arc<Mutex<SessionRuntime>>,
    events: broadcast::Sender<StageEvent>,
}

impl SessionSlot {
    fn new(runtime: SessionRuntime) -> Self {
        Self { runtime: Arc::new(Mutex::new(runtime)), events: broadcast::channel(EVENT_BUFFER).0 }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: SessionStore,
    engine: TurnEngine,
    defaults: SessionConfig,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
}

impl AppState {
    pub fn new(store: SessionStore, engine: TurnEngine, defaults: SessionConfig) -> Self {
        Self { inner: Arc::new(Inner { store, engine, defaults, sessions: RwLock::new(HashMap::new()) }) }
    }

    pub fn store(&self) -> &SessionStore {
        &self.inner.store
    }

    /// Loads the slot for `id`, rebuilding it from the store after a restart.
    async fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        if let Some(s) = self.inner.sessions.read().await.get(id) {
            return Ok(s.clone());
        }
        let mut map = self.inner.sessions.write().await;
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        let runtime = self.inner.store.load_runtime(id)?;
        tracing::info!(session = id, turns = runtime.state.turn_index, "session restored");
        let slot = Arc::new(SessionSlot::new(runtime));
        map.insert(id.to_string(), slot.clone());
        Ok(slot)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/events", get(events))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("turn task failed: {0}")]
    Task(#[from] tokio::task::JoinError),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ApiError::Session(SessionError::SessionNotFound(_)) => (StatusCode::NOT_FOUND, "session_not_found"),
            ApiError::Session(SessionError::InvalidConfig(_)) => (StatusCode::BAD_REQUEST, "invalid_config"),
            ApiError::Session(SessionError::Audio(_)) => (StatusCode::BAD_REQUEST, "malformed_file"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(ErrorBody { error: self.to_string(), kind: kind.into() })).into_response()
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

/// Accepts an empty body or a JSON object of config overrides.
async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Json<Created>, ApiError> {
    let overrides: ConfigOverrides = if body.iter().all(u8::is_ascii_whitespace) {
        ConfigOverrides::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| SessionError::InvalidConfig(e.to_string()))?
    };
    let config = state.inner.defaults.with_overrides(&overrides)?;
    let session = Session::new(config)?;
    state.inner.store.create(&session)?;
    let id = session.session_id.clone();
    state.inner.sessions.write().await.insert(id.clone(), Arc::new(SessionSlot::new(SessionRuntime::new(session))));
    tracing::info!(session = %id, "session created");
    Ok(Json(Created { session_id: id }))
}

/// Runs one turn. Uploads to the same session queue on the session lock in
/// arrival order; the record is on disk before the response is sent.
async fn post_turn(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<TurnRecord>, ApiError> {
    let slot = state.slot(&id).await?;
    let mut runtime = slot.runtime.clone().lock_owned().await;
    let events = slot.events.clone();
    let inner = state.inner.clone();
    let record = tokio::task::spawn_blocking(move || {
        inner.engine.process_turn(&inner.store, &mut runtime, &body, &|e| {
            let _ = events.send(e);
        })
    })
    .await??;
    tracing::info!(session = %id, turn = record.turn_index, action = ?record.action, "turn processed");
    Ok(Json(record))
}

async fn history(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<TurnRecord>>, ApiError> {
    // Waiting for the lock keeps history consistent with in-flight turns.
    let slot = state.slot(&id).await?;
    let _guard = slot.runtime.lock().await;
    Ok(Json(state.inner.store.load_records(&id)?))
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id).await?;
    let rx = slot.events.subscribe();
    Ok(ws.on_upgrade(move |socket| forward_events(socket, rx)))
}

async fn forward_events(mut socket: WebSocket, mut rx: broadcast::Receiver<StageEvent>) {
    loop {
        tokio::select! {
            ev = rx.recv() => match ev {
                Ok(ev) => {
                    let text = serde_json::to_string(&ev).expect("stage event serializes");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => tracing::warn!(skipped = n, "event subscriber lagged"),
                Err(broadcast::error::RecvError::Closed) => return,
            },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
