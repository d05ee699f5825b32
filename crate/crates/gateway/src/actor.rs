//! One thread per session. Jobs arrive through a mailbox and run strictly
//! in order, so commands and chat never interleave within a session.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use tokio::sync::{broadcast, mpsc, oneshot};

use nlvis_core::agent::ChatProvider;
use nlvis_core::session::{ActionLogEntry, FrameEvent, MetricsRegistry, SessionEvent};
use nlvis_core::{serialize_command, CommandStatus, Session};

use crate::wire::{ChatSummary, CommandLineResult, WireEvent};

const EVENT_CAPACITY: usize = 1024;

pub enum Job {
    /// Newline-delimited command payloads, executed one by one.
    Commands {
        lines: Vec<(usize, String)>,
        reply: oneshot::Sender<Vec<CommandLineResult>>,
    },
    Chat {
        text: String,
        reply: Option<oneshot::Sender<ChatSummary>>,
    },
    Log {
        reply: oneshot::Sender<Vec<ActionLogEntry>>,
    },
    Frame {
        reply: oneshot::Sender<Result<FrameEvent, String>>,
    },
}

#[derive(Clone)]
pub struct SessionHandle {
    pub id: String,
    pub scene_id: String,
    jobs: mpsc::UnboundedSender<Job>,
    events: broadcast::Sender<WireEvent>,
}

impl SessionHandle {
    pub fn submit(&self, job: Job) -> bool {
        self.jobs.send(job).is_ok()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<WireEvent> {
        self.events.subscribe()
    }
}

pub struct ActorContext {
    pub chat: Arc<dyn ChatProvider>,
    pub metrics: Arc<Mutex<MetricsRegistry>>,
    /// Action log is appended here as JSON lines.
    pub log_path: Option<PathBuf>,
}

/// Start the actor. `build` runs on the actor thread, so replaying a long
/// log does not block the caller.
pub fn spawn(
    id: String,
    scene_id: String,
    build: impl FnOnce() -> Session + Send + 'static,
    ctx: ActorContext,
) -> std::io::Result<SessionHandle> {
    let (jobs, rx) = mpsc::unbounded_channel();
    let (events, _) = broadcast::channel(EVENT_CAPACITY);
    let handle = SessionHandle {
        id: id.clone(),
        scene_id,
        jobs,
        events: events.clone(),
    };
    std::thread::Builder::new()
        .name(format!("session-{id}"))
        .spawn(move || run(build(), rx, events, ctx))?;
    Ok(handle)
}

fn persist(ctx: &ActorContext, entries: &[ActionLogEntry]) {
    let Some(path) = &ctx.log_path else { return };
    if entries.is_empty() {
        return;
    }
    let write = || -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e)?;
            buf.push(b'\n');
        }
        f.write_all(&buf)
    };
    if let Err(e) = write() {
        tracing::warn!(path = %path.display(), error = %e, "could not persist action log");
    }
}

fn run(
    mut session: Session,
    mut rx: mpsc::UnboundedReceiver<Job>,
    events: broadcast::Sender<WireEvent>,
    ctx: ActorContext,
) {
    // a send only fails when nobody is listening, which is fine
    let emit = |e: WireEvent| {
        let _ = events.send(e);
    };
    // a replayed session starts with a non-empty log
    persist(&ctx, session.log());
    let mut persisted = session.log().len();

    while let Some(job) = rx.blocking_recv() {
        match job {
            Job::Commands { lines, reply } => {
                let mut results = Vec::with_capacity(lines.len());
                let mut dirty = false;
                for (line, payload) in lines {
                    let result = session.execute_payload(&payload, None);
                    if let Some(entry) = session.log().last() {
                        emit(WireEvent::Log { entry: entry.clone() });
                    }
                    dirty |= result.status == CommandStatus::Ok && result.frame_dirty;
                    results.push(CommandLineResult { line, result });
                }
                if dirty {
                    match session.stream_frame() {
                        Ok(f) => emit(WireEvent::frame(&f)),
                        Err(e) => emit(WireEvent::Error {
                            message: format!("frame: {e}"),
                        }),
                    }
                }
                let _ = reply.send(results);
            }
            Job::Chat { text, reply } => {
                let out = session.handle_chat(&text, ctx.chat.as_ref(), &mut |e: SessionEvent| emit(e.into()));
                if let Err(e) = ctx.metrics.lock().expect("metrics lock").record(out.latency.clone()) {
                    tracing::warn!(error = %e, "latency record rejected");
                }
                if let Some(reply) = reply {
                    let _ = reply.send(ChatSummary {
                        reply: out.outcome.reply.clone(),
                        iterations: out.outcome.iterations,
                        goal_met: out.outcome.goal_met,
                        error: out.outcome.error.clone(),
                        executed: out.outcome.executed.iter().map(|(_, c)| serialize_command(c)).collect(),
                        latency: out.latency,
                    });
                }
            }
            Job::Log { reply } => {
                let _ = reply.send(session.log().to_vec());
            }
            Job::Frame { reply } => {
                let _ = reply.send(session.stream_frame().map_err(|e| e.to_string()));
            }
        }
        persist(&ctx, &session.log()[persisted..]);
        persisted = session.log().len();
    }
}
