//! Session service over HTTP and WebSocket.
//!
//! Routes:
//! - `GET /scenes`
//! - `POST /sessions` with `{"scene_id", "log"?}`
//! - `DELETE /sessions/{id}`
//! - `POST /sessions/{id}/commands`, newline-delimited JSON in and out
//! - `POST /sessions/{id}/chat`
//! - `GET /sessions/{id}/log`
//! - `GET /sessions/{id}/frame`, the current frame as PNG
//! - `GET /sessions/{id}/ws`, chat in, token/frame/status/log/error events out
//! - `GET /metrics`, optionally `?session=<id>`

mod actor;
pub mod wire;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};

use nlvis_core::agent::ChatProvider;
use nlvis_core::config::{AppConfig, ConfigError};
use nlvis_core::scene_io::{load_scene_bundle, BundleError};
use nlvis_core::session::{MetricsRegistry, MetricsSnapshot, Services};
use nlvis_core::{SceneBundle, Session};

pub use actor::{Job, SessionHandle};
use wire::{
    ChatRequest, ClientMessage, CreateSession, ErrorBody, SceneComponentInfo, SceneInfo, SessionInfo, WireEvent,
};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scene {dir}: {source}")]
    Bundle { dir: PathBuf, source: BundleError },
    #[error("duplicate scene id {0}")]
    DuplicateScene(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

struct SceneEntry {
    bundle: Arc<SceneBundle>,
    services: Services,
}

pub struct AppState {
    config: AppConfig,
    scenes: BTreeMap<String, SceneEntry>,
    chat: Arc<dyn ChatProvider>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    metrics: Arc<Mutex<MetricsRegistry>>,
    persist: bool,
}

/// Every subdirectory of `dir` holding a manifest, loaded and validated.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<SceneBundle>, GatewayError> {
    let read = std::fs::read_dir(dir).map_err(|source| GatewayError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = read
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("manifest.json").is_file())
        .collect();
    dirs.sort();
    dirs.into_iter()
        .map(|d| load_scene_bundle(&d).map_err(|source| GatewayError::Bundle { dir: d, source }))
        .collect()
}

impl AppState {
    pub fn new(
        config: AppConfig,
        scenes: Vec<SceneBundle>,
        chat: Arc<dyn ChatProvider>,
    ) -> Result<Self, GatewayError> {
        let mut map = BTreeMap::new();
        for b in scenes {
            let services = config.build_services(&b.scene)?;
            let id = b.scene_id.clone();
            let entry = SceneEntry {
                bundle: Arc::new(b),
                services,
            };
            if map.insert(id.clone(), entry).is_some() {
                return Err(GatewayError::DuplicateScene(id));
            }
        }
        Ok(Self {
            config,
            scenes: map,
            chat,
            sessions: Mutex::new(HashMap::new()),
            metrics: Arc::new(Mutex::new(MetricsRegistry::default())),
            persist: true,
        })
    }

    /// Scenes from `server.scenes_dir` and the configured chat provider.
    pub fn from_config(config: AppConfig) -> Result<Self, GatewayError> {
        let scenes = load_scene_dir(&config.server.scenes_dir)?;
        let chat = config.build_chat_provider()?;
        Self::new(config, scenes, chat)
    }

    /// Keep logs and saved images in memory only. Saved images then go to
    /// the system temp directory.
    pub fn without_persistence(mut self) -> Self {
        self.persist = false;
        self
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    pub fn scene_ids(&self) -> Vec<String> {
        self.scenes.keys().cloned().collect()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("sessions lock").len()
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.metrics.lock().expect("metrics lock").snapshot(None)
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        if self.persist {
            self.config.server.data_dir.join("sessions").join(id)
        } else {
            std::env::temp_dir().join("nlvis-sessions").join(id)
        }
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionInfo, ApiError> {
        let entry = self
            .scenes
            .get(&req.scene_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown scene {:?}", req.scene_id)))?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.session_dir(&id);
        let mut config = self.config.session_config();
        config.image_dir = Some(dir.join("images"));
        let camera = entry.bundle.defaults.camera;
        let (width, height) = match config.resolution {
            Some(r) => (r, r),
            None => (camera.width, camera.height),
        };
        let (bundle, services) = (entry.bundle.clone(), entry.services.clone());
        let session_id = id.clone();
        let build = move || match req.log {
            Some(log) => Session::replay(session_id, &log, bundle, services, config),
            None => Session::new(session_id, bundle, services, config),
        };
        let ctx = actor::ActorContext {
            chat: self.chat.clone(),
            metrics: self.metrics.clone(),
            log_path: self.persist.then(|| dir.join("log.jsonl")),
        };
        let handle = actor::spawn(id.clone(), req.scene_id.clone(), build, ctx)
            .map_err(|e| ApiError::internal(format!("could not start session: {e}")))?;
        self.sessions.lock().expect("sessions lock").insert(id.clone(), handle);
        tracing::info!(session = %id, scene = %req.scene_id, "session created");
        Ok(SessionInfo {
            session_id: id,
            scene_id: req.scene_id,
            width,
            height,
        })
    }

    pub fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message,
        }
    }

    fn internal(message: String) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message,
        }
    }

    fn gone() -> Self {
        Self::internal("session stopped".into())
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

async fn ask<T>(handle: &SessionHandle, make: impl FnOnce(oneshot::Sender<T>) -> Job) -> Result<T, ApiError> {
    let (tx, rx) = oneshot::channel();
    if !handle.submit(make(tx)) {
        return Err(ApiError::gone());
    }
    rx.await.map_err(|_| ApiError::gone())
}

async fn list_scenes(State(st): State<Arc<AppState>>) -> Json<Vec<SceneInfo>> {
    Json(
        st.scenes
            .iter()
            .map(|(id, e)| SceneInfo {
                id: id.clone(),
                components: e
                    .bundle
                    .scene
                    .components
                    .iter()
                    .map(|c| SceneComponentInfo {
                        id: c.id.clone(),
                        label: c.label.clone(),
                        primitives: c.primitives.len(),
                    })
                    .collect(),
                knowledge_entries: e.bundle.knowledge.len(),
                indexed: e.bundle.missing_embeddings().is_empty(),
            })
            .collect(),
    )
}

async fn create_session(
    State(st): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    Ok((StatusCode::CREATED, Json(st.create_session(req)?)))
}

async fn delete_session(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<StatusCode, ApiError> {
    match st.sessions.lock().expect("sessions lock").remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(format!("unknown session {id:?}"))),
    }
}

async fn post_commands(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: String,
) -> Result<Response, ApiError> {
    let handle = st.session(&id)?;
    let lines: Vec<(usize, String)> = body
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_owned()))
        .collect();
    let results = ask(&handle, |reply| Job::Commands { lines, reply }).await?;
    let mut out = String::new();
    for r in &results {
        out.push_str(&serde_json::to_string(r).expect("serializable"));
        out.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response())
}

async fn post_chat(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ChatRequest>,
) -> Result<Response, ApiError> {
    let handle = st.session(&id)?;
    let summary = ask(&handle, |reply| Job::Chat {
        text: req.text,
        reply: Some(reply),
    })
    .await?;
    Ok(Json(summary).into_response())
}

async fn get_log(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let handle = st.session(&id)?;
    let log = ask(&handle, |reply| Job::Log { reply }).await?;
    Ok(Json(log).into_response())
}

async fn get_frame(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let handle = st.session(&id)?;
    let frame = ask(&handle, |reply| Job::Frame { reply })
        .await?
        .map_err(ApiError::internal)?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_owned()),
            (header::HeaderName::from_static("x-frame-seq"), frame.seq.to_string()),
        ],
        frame.png,
    )
        .into_response())
}

#[derive(Deserialize)]
struct MetricsQuery {
    session: Option<String>,
}

async fn get_metrics(State(st): State<Arc<AppState>>, Query(q): Query<MetricsQuery>) -> Json<MetricsSnapshot> {
    Json(st.metrics.lock().expect("metrics lock").snapshot(q.session.as_deref()))
}

async fn ws_upgrade(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let handle = st.session(&id)?;
    Ok(ws.on_upgrade(move |socket| ws_session(socket, handle)))
}

fn event_text(e: &WireEvent) -> Message {
    Message::Text(serde_json::to_string(e).expect("serializable").into())
}

async fn ws_session(mut socket: WebSocket, handle: SessionHandle) {
    let mut events = handle.subscribe();
    // the current frame first, so a client has something to show
    let (tx, rx) = oneshot::channel();
    if handle.submit(Job::Frame { reply: tx }) {
        let first = match rx.await {
            Ok(Ok(f)) => WireEvent::frame(&f),
            Ok(Err(message)) => WireEvent::Error { message },
            Err(_) => return,
        };
        if socket.send(event_text(&first)).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let text = match incoming {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let job = match serde_json::from_str::<ClientMessage>(&text) {
                    Ok(ClientMessage::Chat { text }) => Job::Chat { text, reply: None },
                    Ok(ClientMessage::Command { command }) => {
                        // the reply is delivered as log and frame events
                        let (reply, _) = oneshot::channel();
                        Job::Commands { lines: vec![(1, command.to_string())], reply }
                    }
                    Err(e) => {
                        let err = WireEvent::Error { message: format!("bad message: {e}") };
                        if socket.send(event_text(&err)).await.is_err() {
                            break;
                        }
                        continue;
                    }
                };
                if !handle.submit(job) {
                    break;
                }
            }
            event = events.recv() => {
                match event {
                    Ok(e) => {
                        if socket.send(event_text(&e)).await.is_err() {
                            break;
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        let err = WireEvent::Error { message: format!("{n} events dropped, client too slow") };
                        if socket.send(event_text(&err)).await.is_err() {
                            break;
                        }
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                }
            }
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenes", get(list_scenes))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/commands", post(post_commands))
        .route("/sessions/{id}/chat", post(post_chat))
        .route("/sessions/{id}/log", get(get_log))
        .route("/sessions/{id}/frame", get(get_frame))
        .route("/sessions/{id}/ws", get(ws_upgrade))
        .route("/metrics", get(get_metrics))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
