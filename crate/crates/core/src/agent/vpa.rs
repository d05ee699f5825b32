//! The visualize, perceive, act loop and tool dispatch.

use serde_json::{json, Value};

use super::{
    knowledge_lookup, route_hierarchy, tool_registry, validate_schema, AgentMessage, ChatProvider, Decision, Role,
    ToolCall, DEFAULT_MEMORY_CAP,
};
use crate::command::{parse_value, validate_command, Command, CommandStatus, Target};
use crate::session::{LogKind, Session, SessionEvent};
use crate::splat::{ComponentEdit, LightMode};

pub const DEFAULT_MAX_ITERATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct VpaConfig {
    pub max_iterations: usize,
    pub memory_cap: usize,
    /// Longest side of frames attached for vision-capable planners.
    pub perception_size: u32,
    /// Planner calls allowed within one iteration.
    pub max_tool_rounds: usize,
}

impl Default for VpaConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            memory_cap: DEFAULT_MEMORY_CAP,
            perception_size: 512,
            max_tool_rounds: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VpaOutcome {
    /// Last assistant text.
    pub reply: String,
    /// Commands that executed successfully, with the tool call behind each.
    pub executed: Vec<(String, Command)>,
    pub iterations: usize,
    pub goal_met: bool,
    /// Set when the provider failed and the loop stopped early.
    pub error: Option<String>,
}

impl VpaOutcome {
    pub fn incomplete(&self) -> bool {
        !self.goal_met
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolOutput {
    pub text: String,
    pub commands: Vec<Command>,
    pub frame_dirty: bool,
}

fn run_commands(session: &mut Session, call_id: &str, commands: Vec<Command>) -> Result<ToolOutput, String> {
    // nothing runs unless every command validates
    for cmd in &commands {
        if let Err(reasons) = validate_command(cmd, session.scene()) {
            session.execute(cmd, Some(call_id));
            let text = reasons.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("; ");
            return Err(format!("{} rejected: {text}", crate::command::serialize_command(cmd)));
        }
    }
    let mut executed = Vec::new();
    let mut dirty = false;
    let mut lines = Vec::new();
    for cmd in commands {
        let r = session.execute(&cmd, Some(call_id));
        lines.push(format!("{}: {}", cmd.name(), r.detail));
        if r.status != CommandStatus::Ok {
            return Err(lines.join("\n"));
        }
        dirty |= r.frame_dirty;
        executed.push(cmd);
    }
    Ok(ToolOutput {
        text: lines.join("\n"),
        commands: executed,
        frame_dirty: dirty,
    })
}

/// Validate a tool call against its schema and run it. Errors come back as
/// text for the planner.
pub fn dispatch_tool(session: &mut Session, call: &ToolCall) -> Result<ToolOutput, String> {
    let registry = tool_registry();
    let spec = registry
        .iter()
        .find(|t| t.name == call.name)
        .ok_or_else(|| format!("unknown tool {:?}", call.name))?;
    validate_schema(&spec.parameters, &call.arguments, "")?;
    let arg = |k: &str| call.arguments.get(k).and_then(Value::as_str).unwrap_or_default().to_owned();
    match call.name.as_str() {
        "open_vocab_query" => {
            let query = arg("query");
            let matches = session.query(&query, Some(&call.id)).map_err(|e| e.to_string())?;
            Ok(ToolOutput {
                text: json!({"query": query, "matches": matches}).to_string(),
                commands: vec![],
                frame_dirty: false,
            })
        }
        "knowledge_qa" => {
            let question = arg("question");
            let kb = &session.bundle().knowledge;
            let text = if kb.is_empty() {
                "The knowledge base for this scene is empty.".to_owned()
            } else {
                let hits = knowledge_lookup(kb, &question);
                if hits.is_empty() {
                    "No knowledge entries match the question.".to_owned()
                } else {
                    json!({"passages": hits.iter().map(|(e, n)| json!({"title": e.title, "body": e.body, "overlap": n})).collect::<Vec<_>>()})
                        .to_string()
                }
            };
            Ok(ToolOutput {
                text,
                commands: vec![],
                frame_dirty: false,
            })
        }
        "scene_edit" => {
            let commands = call.arguments["commands"]
                .as_array()
                .expect("schema checked")
                .iter()
                .enumerate()
                .map(|(i, v)| parse_value(v).map_err(|e| format!("commands[{i}]: {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            run_commands(session, &call.id, commands)
        }
        "best_view" => run_commands(
            session,
            &call.id,
            vec![Command::BestView {
                component: arg("component").into(),
            }],
        ),
        "stylize_2d" => {
            let target = call.arguments.get("target").and_then(Value::as_str).unwrap_or("all");
            run_commands(
                session,
                &call.id,
                vec![Command::Stylize {
                    target: Target::parse(target),
                    prompt: arg("prompt"),
                }],
            )
        }
        other => Err(format!("tool {other:?} has no handler")),
    }
}

fn screen_direction(azimuth: f64, polar: f64) -> String {
    let right = polar.sin() * azimuth.cos();
    let up = polar.sin() * azimuth.sin();
    let vertical = if up > 0.2 {
        "upper"
    } else if up < -0.2 {
        "lower"
    } else {
        ""
    };
    let horizontal = if right > 0.2 {
        "right"
    } else if right < -0.2 {
        "left"
    } else {
        ""
    };
    match (vertical, horizontal) {
        ("", "") => "front".into(),
        ("upper", "") => "top".into(),
        (_, "") => "bottom".into(),
        ("", h) => h.into(),
        (v, h) => format!("{v} {h}"),
    }
}

/// Plain-text description of the session state for planners without vision.
pub fn scene_digest(session: &Session) -> String {
    let state = session.state();
    let identity = ComponentEdit::default();
    let mut out = String::from("Scene state.\nComponents:\n");
    for c in &session.scene().components {
        let e = state.edits.get(&c.id).unwrap_or(&identity);
        let color = e.color_override.unwrap_or(c.palette_color);
        out.push_str(&format!(
            "- {} ({}): {}, color [{:.2}, {:.2}, {:.2}], opacity x{:.2}, light gains {:?}\n",
            c.id,
            c.label,
            if e.visible { "visible" } else { "hidden" },
            color[0],
            color[1],
            color[2],
            e.opacity_scale,
            e.light_gains,
        ));
    }
    let cam = state.camera;
    out.push_str(&format!(
        "Camera at [{:.2}, {:.2}, {:.2}] looking at [{:.2}, {:.2}, {:.2}], fov {:.2} rad.\n",
        cam.position[0], cam.position[1], cam.position[2], cam.target[0], cam.target[1], cam.target[2], cam.fov_y
    ));
    let l = state.light;
    let from = match l.mode {
        LightMode::Headlight => format!("from the {} of the view", screen_direction(l.azimuth, l.polar)),
        LightMode::Orbital => format!("fixed in world space at azimuth {:.2}, polar {:.2}", l.azimuth, l.polar),
    };
    out.push_str(&format!("Light {from}, magnitude {:.2}.\n", l.magnitude));
    out.push_str(&format!(
        "Background [{:.2}, {:.2}, {:.2}], render mode {}.",
        state.background[0],
        state.background[1],
        state.background[2],
        state.mode.name()
    ));
    if !state.annotations.is_empty() {
        let labels: Vec<_> = state.annotations.iter().map(|(c, l)| format!("{c}: {l}")).collect();
        out.push_str(&format!("\nAnnotations: {}.", labels.join(", ")));
    }
    if state.stylized.is_some() {
        out.push_str("\nA 2D stylization is shown.");
    }
    out
}

fn flush_log(session: &Session, seen: &mut usize, sink: &mut dyn FnMut(SessionEvent)) {
    for e in &session.log()[*seen..] {
        sink(SessionEvent::Log(e.clone()));
    }
    *seen = session.log().len();
}

fn push_frame(session: &mut Session, sink: &mut dyn FnMut(SessionEvent)) {
    match session.stream_frame() {
        Ok(f) => sink(SessionEvent::Frame(f)),
        Err(e) => sink(SessionEvent::Error(format!("frame: {e}"))),
    }
}

/// Run the loop for one utterance. Each iteration renders the frame, gives
/// the planner a perception message and executes the tool calls it plans
/// until it answers without tools. The loop stops on DONE or after
/// `max_iterations`.
pub fn run_vpa_loop(
    session: &mut Session,
    utterance: &str,
    provider: &dyn ChatProvider,
    config: &VpaConfig,
    sink: &mut dyn FnMut(SessionEvent),
) -> VpaOutcome {
    let tools = tool_registry();
    let mut seen = session.log().len();
    let mut outcome = VpaOutcome {
        reply: String::new(),
        executed: Vec::new(),
        iterations: 0,
        goal_met: false,
        error: None,
    };
    session.push_user_message(utterance);

    for iteration in 1..=config.max_iterations.max(1) {
        outcome.iterations = iteration;
        // planners without vision read a text digest, so nothing is rendered for them
        let perception = if provider.vision_capable() {
            let frame = match session.current_frame() {
                Ok(f) => f,
                Err(e) => {
                    outcome.error = Some(format!("render failed: {e}"));
                    sink(SessionEvent::Error(outcome.error.clone().unwrap()));
                    return outcome;
                }
            };
            AgentMessage::system(format!(
                "Perception, iteration {iteration}: the current frame is attached."
            ))
            .with_frame(frame.downscale_to_fit(config.perception_size))
        } else {
            AgentMessage::system(format!("Perception, iteration {iteration}: {}", scene_digest(session)))
        };
        // only the newest frame is kept in memory
        for m in session.history_mut().iter_mut() {
            m.frame = None;
        }
        session.history_mut().push(perception);

        let mut decision = Decision::Continue;
        let mut rounds = 0;
        loop {
            let turn = match provider.complete(session.history(), &tools, &mut |t| {
                sink(SessionEvent::Token(t.to_owned()))
            }) {
                Ok(t) => t,
                Err(e) => {
                    outcome.error = Some(format!("provider failed: {e}"));
                    sink(SessionEvent::Error(outcome.error.clone().unwrap()));
                    flush_log(session, &mut seen, sink);
                    return outcome;
                }
            };
            let mut calls = turn.tool_calls;
            for c in calls.iter_mut() {
                if c.id.is_empty() {
                    c.id = session.next_tool_call_id();
                }
            }
            session
                .history_mut()
                .push(AgentMessage::assistant(turn.content.clone(), calls.clone()));
            if !turn.content.is_empty() {
                session.append_log(LogKind::AgentReply, turn.content.clone(), None);
                outcome.reply = turn.content;
            }
            if calls.is_empty() {
                decision = turn.decision;
                flush_log(session, &mut seen, sink);
                break;
            }
            let mut failed = false;
            match route_hierarchy(&calls) {
                Err(e) => {
                    for c in &calls {
                        session
                            .history_mut()
                            .push(AgentMessage::tool(c.id.clone(), format!("error: planning error: {e}")));
                    }
                    failed = true;
                }
                Ok(ordered) => {
                    for call in &ordered {
                        if failed {
                            session.history_mut().push(AgentMessage::tool(
                                call.id.clone(),
                                "error: skipped after an earlier tool error",
                            ));
                            continue;
                        }
                        let payload = json!({"id": call.id, "name": call.name, "arguments": call.arguments}).to_string();
                        session.append_log(LogKind::ToolCall, payload, Some(&call.id));
                        match dispatch_tool(session, call) {
                            Ok(out) => {
                                session.history_mut().push(AgentMessage::tool(call.id.clone(), out.text));
                                outcome
                                    .executed
                                    .extend(out.commands.into_iter().map(|c| (call.id.clone(), c)));
                                flush_log(session, &mut seen, sink);
                                if out.frame_dirty {
                                    push_frame(session, sink);
                                }
                            }
                            Err(msg) => {
                                session
                                    .history_mut()
                                    .push(AgentMessage::tool(call.id.clone(), format!("error: {msg}")));
                                failed = true;
                            }
                        }
                    }
                }
            }
            flush_log(session, &mut seen, sink);
            rounds += 1;
            if failed || rounds >= config.max_tool_rounds {
                break;
            }
        }
        if decision == Decision::Done {
            outcome.goal_met = true;
            break;
        }
    }
    debug_assert!(session.history().iter().any(|m| m.role == Role::System));
    outcome
}
