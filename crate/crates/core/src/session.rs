//! Live view state of one user session: command execution, the action log,
//! frame streaming, chat handling and latency records.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{now_ms, run_vpa_loop, trim_memory, AgentMessage, ChatProvider, Role, VpaConfig, VpaOutcome, SYSTEM_PROMPT};
use crate::command::{
    parse_command, serialize_command, validate_command, Command, CommandResult, CommandStatus, Rejection,
    RejectionCode, Target,
};
use crate::frame::{save_image, FrameError, ImageRGBA};
use crate::raster::{render, Camera, RenderError, RenderMode, RenderOptions};
use crate::scene_io::SceneBundle;
use crate::semantic::{
    build_index, query_components, EmbeddingProvider, IndexConfig, IndexError, QueryMatch, SemanticIndex,
};
use crate::splat::{compose_scenes, ComponentEdit, ComponentId, ComposedScene, EditMap, LightState};
use crate::stylize::{masked_composite, Stylizer};
use crate::views::{cameras_around, select_top_k_views};

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub index: IndexConfig,
    pub vpa: VpaConfig,
    /// Square output resolution; the bundle camera's resolution when absent.
    pub resolution: Option<u32>,
    pub parallel_render: bool,
    /// When set, saved images must use relative paths and land under this directory.
    pub image_dir: Option<std::path::PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            index: IndexConfig::default(),
            vpa: VpaConfig::default(),
            resolution: None,
            parallel_render: true,
            image_dir: None,
        }
    }
}

/// External services a session calls into.
#[derive(Clone)]
pub struct Services {
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub stylizer: Arc<dyn Stylizer>,
}

/// Everything a command can change.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewState {
    pub edits: EditMap,
    pub camera: Camera,
    pub light: LightState,
    pub background: [f64; 3],
    pub mode: RenderMode,
    pub annotations: BTreeMap<ComponentId, String>,
    /// Replaces the rendered frame until the next visual change.
    pub stylized: Option<ImageRGBA>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Command,
    ToolCall,
    QueryResult,
    AgentReply,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionLogEntry {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub kind: LogKind,
    /// Canonical command text, tool call JSON, query text or reply text.
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<CommandStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Tool call that produced this entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub similarities: Vec<QueryMatch>,
}

impl ActionLogEntry {
    /// Equality ignoring wall-clock time.
    pub fn same_content(&self, other: &Self) -> bool {
        Self {
            timestamp_ms: 0,
            ..self.clone()
        } == Self {
            timestamp_ms: 0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationAnchor {
    pub component: ComponentId,
    pub label: String,
    /// Projected centroid in pixels; absent when behind the camera.
    pub anchor: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEvent {
    pub seq: u64,
    pub width: u32,
    pub height: u32,
    pub png: Vec<u8>,
    pub annotations: Vec<AnnotationAnchor>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    Token(String),
    Frame(FrameEvent),
    Status(String),
    Log(ActionLogEntry),
    Error(String),
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub request_id: String,
    pub session_id: String,
    pub ttft_ms: f64,
    pub total_ms: f64,
    /// User messages in memory when the request was served.
    pub user_messages: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatOutcome {
    pub outcome: VpaOutcome,
    pub latency: LatencyRecord,
}

pub struct Session {
    id: String,
    bundle: Arc<SceneBundle>,
    services: Services,
    config: SessionConfig,
    defaults: ViewState,
    state: ViewState,
    log: Vec<ActionLogEntry>,
    history: Vec<AgentMessage>,
    created_at_ms: u64,
    frame_seq: u64,
    frame_cache: Option<ImageRGBA>,
    index: Option<SemanticIndex>,
    best_views: BTreeMap<ComponentId, Camera>,
    latencies: Vec<LatencyRecord>,
    tool_call_seq: u64,
}

impl Session {
    pub fn new(id: impl Into<String>, bundle: Arc<SceneBundle>, services: Services, config: SessionConfig) -> Self {
        let mut camera = bundle.defaults.camera;
        if let Some(r) = config.resolution {
            camera = camera.with_resolution(r, r);
        }
        let defaults = ViewState {
            edits: bundle.defaults.edits.clone(),
            camera,
            light: bundle.defaults.light,
            background: bundle.defaults.background,
            mode: bundle.defaults.render_mode,
            annotations: BTreeMap::new(),
            stylized: None,
        };
        let best_views = bundle
            .views
            .iter()
            .filter_map(|(id, v)| v.first().map(|r| (id.clone(), r.camera)))
            .collect();
        Self {
            id: id.into(),
            index: bundle.index.clone(),
            bundle,
            services,
            config,
            state: defaults.clone(),
            defaults,
            log: Vec::new(),
            history: vec![AgentMessage::system(SYSTEM_PROMPT)],
            created_at_ms: now_ms(),
            frame_seq: 0,
            frame_cache: None,
            best_views,
            latencies: Vec::new(),
            tool_call_seq: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn bundle(&self) -> &Arc<SceneBundle> {
        &self.bundle
    }

    pub fn scene(&self) -> &ComposedScene {
        &self.bundle.scene
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn state(&self) -> &ViewState {
        &self.state
    }

    pub fn log(&self) -> &[ActionLogEntry] {
        &self.log
    }

    pub fn history(&self) -> &[AgentMessage] {
        &self.history
    }

    pub fn created_at_ms(&self) -> u64 {
        self.created_at_ms
    }

    pub fn latencies(&self) -> &[LatencyRecord] {
        &self.latencies
    }

    pub(crate) fn history_mut(&mut self) -> &mut Vec<AgentMessage> {
        &mut self.history
    }

    /// Append a user message and trim memory to the configured cap.
    pub(crate) fn push_user_message(&mut self, text: &str) {
        self.history.push(AgentMessage::user(text));
        self.history = trim_memory(&self.history, self.config.vpa.memory_cap);
    }

    pub(crate) fn next_tool_call_id(&mut self) -> String {
        self.tool_call_seq += 1;
        format!("call_{}", self.tool_call_seq)
    }

    pub fn append_log(
        &mut self,
        kind: LogKind,
        payload: impl Into<String>,
        origin: Option<&str>,
    ) -> &mut ActionLogEntry {
        let seq = self.log.last().map_or(1, |e| e.seq + 1);
        self.log.push(ActionLogEntry {
            seq,
            timestamp_ms: now_ms(),
            kind,
            payload: payload.into(),
            status: None,
            detail: None,
            origin: origin.map(str::to_owned),
            similarities: Vec::new(),
        });
        self.log.last_mut().expect("just pushed")
    }

    fn render_options(&self, state: &ViewState) -> RenderOptions {
        RenderOptions {
            background: Some(state.background),
            light: Some(state.light),
            mode: state.mode,
            parallel: self.config.parallel_render,
            collect_stats: false,
        }
    }

    fn render_base(&self, state: &ViewState) -> Result<ImageRGBA, RenderError> {
        Ok(render(&self.bundle.scene, &state.edits, &state.camera, &self.render_options(state))?.image)
    }

    /// The frame currently on screen.
    pub fn current_frame(&mut self) -> Result<ImageRGBA, RenderError> {
        if let Some(s) = &self.state.stylized {
            return Ok(s.clone());
        }
        if let Some(f) = &self.frame_cache {
            return Ok(f.clone());
        }
        let f = self.render_base(&self.state)?;
        self.frame_cache = Some(f.clone());
        Ok(f)
    }

    pub fn annotation_anchors(&self) -> Vec<AnnotationAnchor> {
        self.state
            .annotations
            .iter()
            .map(|(id, label)| {
                let anchor = self.bundle.scene.component(id).and_then(|c| {
                    let n = c.primitives.len() as f64;
                    let centroid = c.primitives.iter().map(|p| p.mean_vec()).sum::<nalgebra::Vector3<f64>>() / n;
                    self.state.camera.project_point(centroid)
                });
                AnnotationAnchor {
                    component: id.clone(),
                    label: label.clone(),
                    anchor,
                }
            })
            .collect()
    }

    /// Encode the current frame with the next sequence number.
    pub fn stream_frame(&mut self) -> Result<FrameEvent, SessionError> {
        let frame = self.current_frame()?.opaque();
        let png = frame.encode_png()?;
        self.frame_seq += 1;
        Ok(FrameEvent {
            seq: self.frame_seq,
            width: frame.width,
            height: frame.height,
            png,
            annotations: self.annotation_anchors(),
        })
    }

    fn resolve(&self, c: &ComponentId) -> ComponentId {
        self.bundle
            .scene
            .resolve(c.as_str())
            .map(|s| s.id.clone())
            .expect("validated before execution")
    }

    /// Rank-1 entropy view of a component at the session resolution.
    pub fn best_view_camera(&mut self, component: &ComponentId) -> Result<Camera, SessionError> {
        let id = self.resolve(component);
        let cam = match self.best_views.get(&id) {
            Some(c) => *c,
            None => {
                let comp = self.bundle.scene.component(&id).expect("resolved");
                let cfg = &self.config.index;
                let cameras = cameras_around(&comp.bounding_sphere, cfg.view_count, &cfg.rig)
                    .map_err(IndexError::View)?;
                let best = select_top_k_views(comp, &cameras, 1).map_err(IndexError::View)?[0].camera;
                self.best_views.insert(id, best);
                best
            }
        };
        Ok(cam.with_resolution(self.state.camera.width, self.state.camera.height))
    }

    /// Apply `cmd` to a copy of `state`. Returns whether the frame changed.
    fn image_path(&self, path: &str) -> Result<std::path::PathBuf, String> {
        use std::path::{Component, Path};
        let p = Path::new(path);
        match &self.config.image_dir {
            None => Ok(p.to_path_buf()),
            Some(dir) => {
                if p.components().all(|c| matches!(c, Component::Normal(_))) {
                    let full = dir.join(p);
                    if let Some(parent) = full.parent() {
                        std::fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
                    }
                    Ok(full)
                } else {
                    Err(format!("image path {path:?} must be relative and stay inside the session directory"))
                }
            }
        }
    }

    fn apply(&mut self, cmd: &Command, state: &mut ViewState) -> Result<bool, String> {
        match cmd {
            Command::SetColor { component, rgb } => {
                edit(state, self.resolve(component)).color_override = Some(*rgb);
            }
            Command::SetOpacity { component, scale } => {
                edit(state, self.resolve(component)).opacity_scale = *scale;
            }
            Command::SetVisibility { component, visible } => {
                edit(state, self.resolve(component)).visible = *visible;
            }
            Command::SetLighting { target, gains, magnitude } => {
                let ids: Vec<ComponentId> = match target {
                    Target::All => self.bundle.scene.components.iter().map(|c| c.id.clone()).collect(),
                    Target::Component(c) => vec![self.resolve(c)],
                };
                if let Some(g) = gains {
                    for id in ids {
                        edit(state, id).light_gains = *g;
                    }
                }
                if let Some(m) = magnitude {
                    state.light.magnitude = *m;
                }
            }
            Command::SetLightDirection { azimuth, polar, mode } => {
                state.light.azimuth = *azimuth;
                state.light.polar = *polar;
                state.light.mode = *mode;
            }
            Command::SetCamera {
                azimuth,
                polar,
                distance,
                fov,
                target,
            } => {
                let center = target.unwrap_or(self.bundle.scene.bounding_sphere().center);
                let cam = Camera::orbit(
                    center,
                    *azimuth,
                    *polar,
                    *distance,
                    *fov,
                    state.camera.width,
                    state.camera.height,
                );
                cam.validate().map_err(|e| e.to_string())?;
                state.camera = cam;
            }
            Command::BestView { component } => {
                state.camera = self.best_view_camera(component).map_err(|e| e.to_string())?;
            }
            Command::SetBackground { rgb } => state.background = *rgb,
            Command::SetRenderMode { mode } => state.mode = *mode,
            Command::SaveImage { path } => {
                let frame = match &state.stylized {
                    Some(s) => s.clone(),
                    None => self.render_base(state).map_err(|e| e.to_string())?,
                };
                save_image(&frame, &self.image_path(path)?).map_err(|e| e.to_string())?;
                return Ok(false);
            }
            Command::Reset { target } => match target {
                Target::All => *state = self.defaults.clone(),
                Target::Component(c) => {
                    let id = self.resolve(c);
                    match self.defaults.edits.get(&id) {
                        Some(e) => state.edits.insert(id.clone(), *e),
                        None => state.edits.remove(&id),
                    };
                    state.annotations.remove(&id);
                }
            },
            Command::Stylize { target, prompt } => {
                let base = self.render_base(state).map_err(|e| e.to_string())?;
                let styled = self
                    .services
                    .stylizer
                    .stylize(&base, prompt)
                    .map_err(|e| format!("stylization failed: {e}"))?;
                if styled.width != base.width || styled.height != base.height {
                    return Err("stylized frame has the wrong size".into());
                }
                let out = match target {
                    Target::All => styled,
                    Target::Component(c) => {
                        let id = self.resolve(c);
                        let solo = compose_scenes(std::slice::from_ref(
                            self.bundle.scene.component(&id).expect("resolved"),
                        ))
                        .map_err(|e| e.to_string())?;
                        let mask = render(&solo, &state.edits, &state.camera, &self.render_options(state))
                            .map_err(|e| e.to_string())?
                            .image;
                        masked_composite(&base, &styled, &mask)
                    }
                };
                state.stylized = Some(out);
                return Ok(true);
            }
            Command::Annotate { component, label } => {
                state.annotations.insert(self.resolve(component), label.clone());
                return Ok(true);
            }
        }
        state.stylized = None;
        Ok(true)
    }

    /// Validate and execute one command. State changes only on success, and
    /// exactly one log entry is appended either way.
    pub fn execute(&mut self, cmd: &Command, origin: Option<&str>) -> CommandResult {
        let canonical = serialize_command(cmd);
        let result = match validate_command(cmd, &self.bundle.scene) {
            Err(reasons) => CommandResult::rejected(reasons),
            Ok(()) => {
                let mut next = self.state.clone();
                match self.apply(cmd, &mut next) {
                    Ok(dirty) => {
                        if dirty
                            && (next.edits != self.state.edits
                                || next.camera != self.state.camera
                                || next.light != self.state.light
                                || next.background != self.state.background
                                || next.mode != self.state.mode)
                        {
                            self.frame_cache = None;
                        }
                        self.state = next;
                        CommandResult::ok(format!("{} applied", cmd.name()), dirty)
                    }
                    Err(e) => CommandResult::failed(e),
                }
            }
        };
        let entry = self.append_log(LogKind::Command, canonical, origin);
        entry.status = Some(result.status);
        entry.detail = Some(result.detail.clone());
        result
    }

    /// Parse then execute. Payloads that do not parse are logged as rejected.
    pub fn execute_payload(&mut self, payload: &str, origin: Option<&str>) -> CommandResult {
        match parse_command(payload) {
            Ok(cmd) => self.execute(&cmd, origin),
            Err(e) => {
                let result = CommandResult::rejected(vec![Rejection {
                    code: RejectionCode::Parse,
                    field: e.class().into(),
                    message: e.to_string(),
                }]);
                let entry = self.append_log(LogKind::Command, payload.trim(), origin);
                entry.status = Some(result.status);
                entry.detail = Some(result.detail.clone());
                result
            }
        }
    }

    /// Embed any component the bundle has no embedding for.
    pub fn ensure_index(&mut self) -> Result<&SemanticIndex, IndexError> {
        let missing: Vec<_> = self
            .bundle
            .scene
            .components
            .iter()
            .filter(|c| {
                !self
                    .index
                    .as_ref()
                    .is_some_and(|ix| ix.components.iter().any(|e| e.component_id == c.id))
            })
            .cloned()
            .collect();
        if !missing.is_empty() {
            let sub = compose_scenes(&missing).map_err(|e| IndexError::Argument(e.to_string()))?;
            let built = build_index(&sub, &self.config.index, self.services.embedder.as_ref())?;
            for (id, views) in built.views {
                if let Some(v) = views.first() {
                    self.best_views.entry(id).or_insert(v.camera);
                }
            }
            let ix = self.index.get_or_insert_with(|| SemanticIndex {
                dimension: built.index.dimension,
                components: Vec::new(),
                partial: false,
            });
            ix.components.extend(built.index.components);
            let order: Vec<_> = self.bundle.scene.components.iter().map(|c| c.id.clone()).collect();
            ix.components
                .sort_by_key(|e| order.iter().position(|id| id == &e.component_id));
            ix.partial = !built.failures.is_empty();
        }
        Ok(self.index.as_ref().expect("index populated"))
    }

    /// Rank every component against `text` and log the similarities.
    pub fn query(&mut self, text: &str, origin: Option<&str>) -> Result<Vec<QueryMatch>, IndexError> {
        let embedder = self.services.embedder.clone();
        let index = self.ensure_index()?;
        let matches = query_components(index, text, embedder.as_ref())?;
        let entry = self.append_log(LogKind::QueryResult, text, origin);
        entry.similarities = matches.clone();
        Ok(matches)
    }

    /// Run one chat request through the agent loop, streaming events.
    pub fn handle_chat(
        &mut self,
        message: &str,
        provider: &dyn ChatProvider,
        sink: &mut dyn FnMut(SessionEvent),
    ) -> ChatOutcome {
        let request_id = uuid::Uuid::new_v4().to_string();
        let start = Instant::now();
        let mut first_token = None;
        sink(SessionEvent::Status("Processing…".into()));
        let config = self.config.vpa.clone();
        let outcome = run_vpa_loop(self, message, provider, &config, &mut |e| {
            if matches!(e, SessionEvent::Token(_)) && first_token.is_none() {
                first_token = Some(start.elapsed());
            }
            sink(e)
        });
        let total = start.elapsed();
        let ttft = first_token.unwrap_or(total);
        let latency = LatencyRecord {
            request_id,
            session_id: self.id.clone(),
            ttft_ms: ttft.as_secs_f64() * 1e3,
            total_ms: total.as_secs_f64() * 1e3,
            user_messages: self.history.iter().filter(|m| m.role == Role::User).count(),
        };
        self.latencies.push(latency.clone());
        sink(SessionEvent::Status(if outcome.error.is_some() {
            "Failed".into()
        } else {
            "Done".into()
        }));
        ChatOutcome { outcome, latency }
    }

    /// Fresh session with the successful commands of `log` re-executed in order.
    pub fn replay(
        id: impl Into<String>,
        log: &[ActionLogEntry],
        bundle: Arc<SceneBundle>,
        services: Services,
        config: SessionConfig,
    ) -> Self {
        let mut s = Self::new(id, bundle, services, config);
        for e in log {
            if e.kind != LogKind::Command || e.status != Some(CommandStatus::Ok) {
                continue;
            }
            let Ok(cmd) = parse_command(&e.payload) else { continue };
            if matches!(cmd, Command::SaveImage { .. }) {
                continue;
            }
            s.execute(&cmd, e.origin.as_deref());
        }
        s
    }
}

fn edit(state: &mut ViewState, id: ComponentId) -> &mut ComponentEdit {
    state.edits.entry(id).or_default()
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("latency record violates 0 <= ttft <= total: ttft {ttft}, total {total}")]
    Ordering { ttft: f64, total: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyGroup {
    pub user_messages: usize,
    pub samples: usize,
    pub ttft_mean_ms: f64,
    pub ttft_std_ms: f64,
    pub total_mean_ms: f64,
    pub total_std_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub requests: usize,
    pub groups: Vec<LatencyGroup>,
}

#[derive(Debug, Clone, Default)]
pub struct MetricsRegistry {
    records: Vec<LatencyRecord>,
}

/// Mean and sample standard deviation; zero spread for a single sample.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsRegistry {
    pub fn record(&mut self, r: LatencyRecord) -> Result<(), MetricsError> {
        if !(r.ttft_ms >= 0.0 && r.ttft_ms <= r.total_ms && r.total_ms.is_finite()) {
            return Err(MetricsError::Ordering {
                ttft: r.ttft_ms,
                total: r.total_ms,
            });
        }
        self.records.push(r);
        Ok(())
    }

    pub fn records(&self) -> &[LatencyRecord] {
        &self.records
    }

    /// Mean and standard deviation per user-message count, optionally for one session.
    pub fn snapshot(&self, session: Option<&str>) -> MetricsSnapshot {
        let mut by_count: BTreeMap<usize, Vec<&LatencyRecord>> = BTreeMap::new();
        let mut requests = 0;
        for r in &self.records {
            if session.is_some_and(|s| s != r.session_id) {
                continue;
            }
            requests += 1;
            by_count.entry(r.user_messages).or_default().push(r);
        }
        let groups = by_count
            .into_iter()
            .map(|(user_messages, rs)| {
                let ttft: Vec<f64> = rs.iter().map(|r| r.ttft_ms).collect();
                let total: Vec<f64> = rs.iter().map(|r| r.total_ms).collect();
                let (ttft_mean_ms, ttft_std_ms) = mean_std(&ttft);
                let (total_mean_ms, total_std_ms) = mean_std(&total);
                LatencyGroup {
                    user_messages,
                    samples: rs.len(),
                    ttft_mean_ms,
                    ttft_std_ms,
                    total_mean_ms,
                    total_std_ms,
                }
            })
            .collect();
        MetricsSnapshot { requests, groups }
    }
}
