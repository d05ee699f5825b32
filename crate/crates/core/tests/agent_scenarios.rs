mod common;

use nlvis_core::agent::{
    AgentMessage, AssistantTurn, ChatProvider, Decision, Role, ScriptedProvider, ToolSpec,
};
use nlvis_core::command::Target;
use nlvis_core::semantic::ProviderError;
use nlvis_core::session::{LogKind, SessionEvent};
use nlvis_core::splat::LightMode;
use nlvis_core::{serialize_command, Command, CommandStatus};

fn chat(s: &mut nlvis_core::Session, p: &dyn ChatProvider, msg: &str) -> (nlvis_core::session::ChatOutcome, Vec<SessionEvent>) {
    let mut events = Vec::new();
    let out = s.handle_chat(msg, p, &mut |e| events.push(e));
    (out, events)
}

#[test]
fn show_only_the_fins() {
    let mut s = common::session("carp", 64);
    let p = common::carp_planner();
    let (out, events) = chat(
        &mut s,
        &p,
        "Show only the fins, highlight the pectoral fin in red and increase the brightness.",
    );
    let o = out.outcome;
    assert!(o.goal_met, "{o:?}");
    assert!(o.iterations <= 3);
    let cmds: Vec<String> = o.executed.iter().map(|(_, c)| serialize_command(c)).collect();
    let expected: Vec<String> = [
        Command::SetVisibility { component: "body".into(), visible: false },
        Command::SetVisibility { component: "head".into(), visible: false },
        Command::SetColor { component: "pectoral_fin".into(), rgb: [1.0, 0.0, 0.0] },
        Command::SetLighting { target: Target::All, gains: None, magnitude: Some(1.4) },
    ]
    .iter()
    .map(serialize_command)
    .collect();
    assert_eq!(cmds, expected);

    // the query step is logged with a similarity table covering every component
    let q = s.log().iter().find(|e| e.kind == LogKind::QueryResult).unwrap();
    assert_eq!(q.similarities.len(), 7);
    assert_eq!(q.similarities[0].component.as_str(), "pectoral_fin");
    assert!(q.similarities.windows(2).all(|w| w[0].similarity >= w[1].similarity));

    assert!(matches!(events.first(), Some(SessionEvent::Status(m)) if m.starts_with("Processing")));
    assert!(matches!(events.last(), Some(SessionEvent::Status(m)) if m == "Done"));
    assert!(events.iter().any(|e| matches!(e, SessionEvent::Frame(_))));
    let reply: String = events
        .iter()
        .filter_map(|e| match e {
            SessionEvent::Token(t) => Some(t.as_str()),
            _ => None,
        })
        .collect();
    assert!(reply.ends_with("DONE"));

    let st = s.state();
    assert!(!st.edits[&"body".into()].visible);
    assert!(!st.edits[&"head".into()].visible);
    assert_eq!(st.edits[&"pectoral_fin".into()].color_override, Some([1.0, 0.0, 0.0]));
    assert_eq!(st.light.magnitude, 1.4);
}

#[test]
fn lighting_correction_takes_two_iterations() {
    let mut s = common::session("carp", 48);
    let p = common::carp_planner();
    let (out, _) = chat(&mut s, &p, "Make the light come from the upper left.");
    let o = out.outcome;
    assert!(o.goal_met);
    assert_eq!(o.iterations, 2);
    assert_eq!(o.executed.len(), 2);
    match o.executed[1].1 {
        Command::SetLightDirection { azimuth, mode, .. } => {
            assert_eq!(mode, LightMode::Headlight);
            assert!((azimuth - 3.0 * std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        }
        ref c => panic!("unexpected {c:?}"),
    }
    // the second perception message describes the wrong direction the agent corrected
    let perceptions: Vec<&AgentMessage> = s
        .history()
        .iter()
        .filter(|m| m.role == Role::System && m.content.starts_with("Perception"))
        .collect();
    assert_eq!(perceptions.len(), 2);
    assert!(perceptions[1].content.contains("lower right"), "{}", perceptions[1].content);
}

#[test]
fn never_done_planner_halts_at_the_cap() {
    let mut s = common::session("carp", 32);
    let p = common::carp_planner();
    let (out, _) = chat(&mut s, &p, "keep tweaking the body");
    assert!(!out.outcome.goal_met);
    assert!(out.outcome.incomplete());
    assert_eq!(out.outcome.iterations, s.config().vpa.max_iterations);
    assert_eq!(out.outcome.iterations, 3);
}

#[test]
fn guided_tour_narrates_components_in_order() {
    let mut s = common::session("carp", 32);
    let p = common::carp_planner();
    let (out, events) = chat(&mut s, &p, "Give me a guided tour");
    assert!(out.outcome.goal_met);
    let highlighted: Vec<String> = out
        .outcome
        .executed
        .iter()
        .filter_map(|(_, c)| match c {
            Command::SetColor { component, .. } => Some(component.to_string()),
            _ => None,
        })
        .collect();
    assert_eq!(highlighted, ["body", "head", "dorsal_fin", "pectoral_fin", "tail_fin"]);
    let replies: Vec<&str> = s
        .log()
        .iter()
        .filter(|e| e.kind == LogKind::AgentReply)
        .map(|e| e.payload.as_str())
        .collect();
    assert_eq!(replies.len(), 6);
    assert!(replies[0].contains("body"));
    let frames = events.iter().filter(|e| matches!(e, SessionEvent::Frame(_))).count();
    assert_eq!(frames, 5);
    // frame sequence numbers only go up
    let seqs: Vec<u64> = events
        .iter()
        .filter_map(|e| match e {
            SessionEvent::Frame(f) => Some(f.seq),
            _ => None,
        })
        .collect();
    assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(s.state().annotations.get(&"tail_fin".into()).map(String::as_str), Some("tail fin"));
}

#[test]
fn knowledge_questions_use_the_bundle_entries() {
    let mut s = common::session("carp", 32);
    let p = common::carp_planner();
    let (out, _) = chat(&mut s, &p, "What are the pectoral fins for?");
    assert!(out.outcome.goal_met);
    let tool_reply = s.history().iter().find(|m| m.role == Role::Tool).unwrap();
    assert!(tool_reply.content.contains("steering"));
}

#[test]
fn memory_is_capped_across_many_turns() {
    let mut s = common::session("two_spheres", 24);
    let p = common::carp_planner();
    for i in 0..15 {
        chat(&mut s, &p, &format!("message number {i}"));
    }
    let users = s.history().iter().filter(|m| m.role == Role::User).count();
    assert!(users <= 10, "{users}");
    assert_eq!(s.history()[0].role, Role::System);
    assert!(s.history()[0].content.starts_with("You are the planner"));
    assert_eq!(s.latencies().len(), 15);
    assert!(s.latencies().iter().all(|l| l.ttft_ms <= l.total_ms));
}

/// Emits one scene edit with an out-of-range value, then stops.
struct BadEdit;

impl ChatProvider for BadEdit {
    fn name(&self) -> &str {
        "bad-edit"
    }
    fn vision_capable(&self) -> bool {
        false
    }
    fn complete(
        &self,
        messages: &[AgentMessage],
        _tools: &[ToolSpec],
        _on_token: &mut dyn FnMut(&str),
    ) -> Result<AssistantTurn, ProviderError> {
        let answered = messages.iter().any(|m| m.role == Role::Tool);
        Ok(AssistantTurn {
            content: if answered { "gave up DONE".into() } else { String::new() },
            tool_calls: if answered {
                vec![]
            } else {
                vec![nlvis_core::agent::ToolCall {
                    id: String::new(),
                    name: "scene_edit".into(),
                    arguments: serde_json::json!({"commands": [
                        {"cmd": "set_color", "component": "red_ball", "rgb": [0.0, 1.0, 0.0]},
                        {"cmd": "set_opacity", "component": "red_ball", "scale": 9.0}
                    ]}),
                }]
            },
            decision: Decision::Done,
        })
    }
}

#[test]
fn rejected_edit_is_reported_to_the_planner_without_partial_effects() {
    let mut s = common::session("two_spheres", 24);
    let before = s.state().clone();
    let (out, _) = chat(&mut s, &BadEdit, "turn the red ball green");
    assert!(out.outcome.executed.is_empty());
    assert_eq!(s.state(), &before);
    let err = s.history().iter().find(|m| m.role == Role::Tool).unwrap();
    assert!(err.content.starts_with("error:"), "{}", err.content);
    assert!(err.content.contains("scale"));
    let rejected = s
        .log()
        .iter()
        .filter(|e| e.kind == LogKind::Command && e.status == Some(CommandStatus::Rejected))
        .count();
    assert_eq!(rejected, 1);
}

struct Failing;

impl ChatProvider for Failing {
    fn name(&self) -> &str {
        "failing"
    }
    fn vision_capable(&self) -> bool {
        false
    }
    fn complete(&self, _: &[AgentMessage], _: &[ToolSpec], _: &mut dyn FnMut(&str)) -> Result<AssistantTurn, ProviderError> {
        Err(ProviderError::Timeout)
    }
}

#[test]
fn provider_failure_emits_error_and_keeps_state() {
    let mut s = common::session("two_spheres", 24);
    let before = s.state().clone();
    let (out, events) = chat(&mut s, &Failing, "anything");
    assert!(out.outcome.error.is_some());
    assert!(events.iter().any(|e| matches!(e, SessionEvent::Error(_))));
    assert!(matches!(events.last(), Some(SessionEvent::Status(m)) if m == "Failed"));
    assert_eq!(s.state(), &before);
    assert!(out.latency.ttft_ms <= out.latency.total_ms);
}

#[test]
fn vision_planner_receives_only_the_latest_frame() {
    let mut scenario: nlvis_core::agent::Scenario =
        serde_json::from_str(&std::fs::read_to_string(common::fixtures().join("scenarios/carp.json")).unwrap())
            .unwrap();
    scenario.vision_capable = true;
    let p = ScriptedProvider::new(scenario).unwrap();
    let mut s = common::session("carp", 32);
    chat(&mut s, &p, "Make the light come from the upper left.");
    let with_frames = s.history().iter().filter(|m| m.frame.is_some()).count();
    assert_eq!(with_frames, 1);
}
