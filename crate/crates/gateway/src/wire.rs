//! JSON shapes exchanged with clients.

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use nlvis_core::session::{ActionLogEntry, AnnotationAnchor, FrameEvent, LatencyRecord, SessionEvent};
use nlvis_core::{CommandResult, ComponentId};

/// Server to client event on the session socket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireEvent {
    Token {
        text: String,
    },
    Frame {
        seq: u64,
        width: u32,
        height: u32,
        /// Base64 PNG.
        png: String,
        annotations: Vec<AnnotationAnchor>,
    },
    Status {
        message: String,
    },
    Log {
        entry: ActionLogEntry,
    },
    Error {
        message: String,
    },
}

impl WireEvent {
    pub fn frame(f: &FrameEvent) -> Self {
        Self::Frame {
            seq: f.seq,
            width: f.width,
            height: f.height,
            png: base64::engine::general_purpose::STANDARD.encode(&f.png),
            annotations: f.annotations.clone(),
        }
    }

    /// Decoded PNG bytes of a frame event.
    pub fn png_bytes(&self) -> Option<Vec<u8>> {
        match self {
            Self::Frame { png, .. } => base64::engine::general_purpose::STANDARD.decode(png).ok(),
            _ => None,
        }
    }
}

impl From<SessionEvent> for WireEvent {
    fn from(e: SessionEvent) -> Self {
        match e {
            SessionEvent::Token(text) => Self::Token { text },
            SessionEvent::Frame(f) => Self::frame(&f),
            SessionEvent::Status(message) => Self::Status { message },
            SessionEvent::Log(entry) => Self::Log { entry },
            SessionEvent::Error(message) => Self::Error { message },
        }
    }
}

/// Client to server message on the session socket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Chat { text: String },
    /// A command object in the grammar's JSON form.
    Command { command: Value },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub scene_id: String,
    /// Action log to replay into the new session.
    #[serde(default)]
    pub log: Option<Vec<ActionLogEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneComponentInfo {
    pub id: ComponentId,
    pub label: String,
    pub primitives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub id: String,
    pub components: Vec<SceneComponentInfo>,
    pub knowledge_entries: usize,
    pub indexed: bool,
}

/// One line of the NDJSON response to a command batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandLineResult {
    /// 1-based line number in the request body.
    pub line: usize,
    #[serde(flatten)]
    pub result: CommandResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatSummary {
    pub reply: String,
    pub iterations: usize,
    pub goal_met: bool,
    pub error: Option<String>,
    /// Canonical text of the commands that ran.
    pub executed: Vec<String>,
    pub latency: LatencyRecord,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
