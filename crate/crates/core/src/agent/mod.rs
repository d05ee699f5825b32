//! Planner/tool-agent runtime: message types, the tool registry, rule-based
//! routing, bounded memory and chat providers.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::frame::ImageRGBA;
use crate::semantic::ProviderError;

mod remote;
mod scripted;
mod vpa;

pub use remote::OpenAiChatProvider;
pub use scripted::{Scenario, ScenarioRule, ScenarioStep, ScriptedProvider};
pub use vpa::{dispatch_tool, run_vpa_loop, scene_digest, ToolOutput, VpaConfig, VpaOutcome, DEFAULT_MAX_ITERATIONS};

pub const DEFAULT_MEMORY_CAP: usize = 10;

pub const SYSTEM_PROMPT: &str = "You are the planner of a volume visualization assistant. \
The scene is made of named components. Use open_vocab_query to resolve a phrase to components, \
scene_edit to change colors, opacity, visibility, lighting, camera or background with declarative commands, \
knowledge_qa for dataset facts, best_view to frame a component and stylize_2d for 2D stylization. \
After each round you receive the rendered frame or a scene summary. \
Finish your final message with DONE when the request is satisfied or CONTINUE to take another step.";

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMessage {
    pub role: Role,
    pub content: String,
    #[serde(skip)]
    pub frame: Option<ImageRGBA>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    /// Set on tool messages: the call being answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
    pub timestamp_ms: u64,
}

impl AgentMessage {
    fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            frame: None,
            tool_calls: Vec::new(),
            tool_call_id: None,
            timestamp_ms: now_ms(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>, tool_calls: Vec<ToolCall>) -> Self {
        Self {
            tool_calls,
            ..Self::new(Role::Assistant, content)
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::new(Role::Tool, content)
        }
    }

    pub fn with_frame(mut self, frame: ImageRGBA) -> Self {
        self.frame = Some(frame);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Done,
    Continue,
}

/// One completion from the planner.
#[derive(Debug, Clone, PartialEq)]
pub struct AssistantTurn {
    pub content: String,
    pub tool_calls: Vec<ToolCall>,
    /// Only meaningful when there are no tool calls.
    pub decision: Decision,
}

/// Decision encoded in free text: a trailing CONTINUE asks for another
/// step, anything else ends the loop.
pub fn decision_from_text(content: &str) -> Decision {
    let last = content
        .split(|c: char| !c.is_alphanumeric())
        .rfind(|w| !w.is_empty())
        .unwrap_or("");
    if last.eq_ignore_ascii_case("continue") {
        Decision::Continue
    } else {
        Decision::Done
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub parameters: Value,
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn vision_capable(&self) -> bool;
    /// Produce the next assistant turn, reporting streamed text through `on_token`.
    fn complete(
        &self,
        messages: &[AgentMessage],
        tools: &[ToolSpec],
        on_token: &mut dyn FnMut(&str),
    ) -> Result<AssistantTurn, ProviderError>;
}

pub const TOOL_NAMES: [&str; 5] = ["open_vocab_query", "scene_edit", "knowledge_qa", "best_view", "stylize_2d"];

pub fn tool_registry() -> Vec<ToolSpec> {
    let string = json!({"type": "string", "minLength": 1});
    let spec = |name: &str, description: &str, properties: Value, required: &[&str]| ToolSpec {
        name: name.into(),
        description: description.into(),
        parameters: json!({
            "type": "object",
            "properties": properties,
            "required": required,
            "additionalProperties": false,
        }),
    };
    vec![
        spec(
            "open_vocab_query",
            "Rank scene components by similarity to a free-form phrase.",
            json!({"query": string}),
            &["query"],
        ),
        spec(
            "scene_edit",
            "Apply declarative commands, each a JSON object with a \"cmd\" field.",
            json!({"commands": {"type": "array", "minItems": 1, "items": {"type": "object"}}}),
            &["commands"],
        ),
        spec(
            "knowledge_qa",
            "Look up dataset facts in the scene knowledge base.",
            json!({"question": string}),
            &["question"],
        ),
        spec(
            "best_view",
            "Move the camera to the most informative view of a component.",
            json!({"component": string}),
            &["component"],
        ),
        spec(
            "stylize_2d",
            "Restyle the current frame, or one component of it, from a prompt.",
            json!({"prompt": string, "target": string}),
            &["prompt"],
        ),
    ]
}

/// Check `value` against the schema subset used by the registry: `type`,
/// `properties`, `required`, `additionalProperties: false`, `items`,
/// `minItems`, `minLength` and `enum`.
pub fn validate_schema(schema: &Value, value: &Value, path: &str) -> Result<(), String> {
    let here = if path.is_empty() { "arguments" } else { path };
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        let ok = match t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => value.is_i64() || value.is_u64(),
            "boolean" => value.is_boolean(),
            _ => true,
        };
        if !ok {
            return Err(format!("{here}: expected {t}"));
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            return Err(format!("{here}: not one of {}", Value::Array(options.clone())));
        }
    }
    if let (Some(min), Some(s)) = (schema.get("minLength").and_then(Value::as_u64), value.as_str()) {
        if (s.trim().chars().count() as u64) < min {
            return Err(format!("{here}: must not be empty"));
        }
    }
    if let Some(items) = value.as_array() {
        if let Some(min) = schema.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                return Err(format!("{here}: needs at least {min} item(s)"));
            }
        }
        if let Some(item_schema) = schema.get("items") {
            for (i, item) in items.iter().enumerate() {
                validate_schema(item_schema, item, &format!("{here}[{i}]"))?;
            }
        }
    }
    if let Some(obj) = value.as_object() {
        let props = schema.get("properties").and_then(Value::as_object);
        for req in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let req = req.as_str().unwrap_or_default();
            if !obj.contains_key(req) {
                return Err(format!("{here}: missing required field {req:?}"));
            }
        }
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => validate_schema(s, v, &format!("{here}.{k}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{here}: unknown field {k:?}"));
                }
                None => {}
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanningError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
}

/// Tier of a tool in the hierarchy: queries resolve before edits run.
pub fn tool_tier(name: &str) -> Option<u8> {
    match name {
        "open_vocab_query" | "knowledge_qa" => Some(0),
        "scene_edit" | "best_view" => Some(1),
        "stylize_2d" => Some(2),
        _ => None,
    }
}

/// Stable reordering of a plan by tier.
pub fn route_hierarchy(plan: &[ToolCall]) -> Result<Vec<ToolCall>, PlanningError> {
    let mut tiered = plan
        .iter()
        .map(|c| {
            tool_tier(&c.name)
                .map(|t| (t, c.clone()))
                .ok_or_else(|| PlanningError::UnknownTool(c.name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    tiered.sort_by_key(|(t, _)| *t);
    Ok(tiered.into_iter().map(|(_, c)| c).collect())
}

/// Drop the oldest user turns (each user message with the replies that
/// follow it) until at most `max_user_messages` remain. Messages before the
/// first user message, including the system prompt, are always kept.
pub fn trim_memory(history: &[AgentMessage], max_user_messages: usize) -> Vec<AgentMessage> {
    let max = max_user_messages.max(1);
    let users: Vec<usize> = history
        .iter()
        .enumerate()
        .filter(|(_, m)| m.role == Role::User)
        .map(|(i, _)| i)
        .collect();
    if users.len() <= max {
        return history.to_vec();
    }
    let first_user = users[0];
    let keep_from = users[users.len() - max];
    history[..first_user]
        .iter()
        .chain(&history[keep_from..])
        .cloned()
        .collect()
}

/// Term-overlap retrieval over knowledge entries: entries sharing at least
/// one non-trivial term with the question, most overlapping first.
pub fn knowledge_lookup<'a>(
    entries: &'a [crate::scene_io::KnowledgeEntry],
    question: &str,
) -> Vec<(&'a crate::scene_io::KnowledgeEntry, usize)> {
    use std::collections::BTreeSet;
    const STOP: [&str; 22] = [
        "a", "an", "the", "of", "in", "on", "is", "are", "what", "which", "who", "how", "to", "and", "or", "for",
        "this", "that", "it", "me", "tell", "about",
    ];
    let terms: BTreeSet<String> = crate::semantic::tokenize(question)
        .into_iter()
        .filter(|t| !STOP.contains(&t.as_str()))
        .collect();
    let mut hits: Vec<_> = entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| {
            let words: BTreeSet<String> = crate::semantic::tokenize(&format!("{} {}", e.title, e.body))
                .into_iter()
                .collect();
            let overlap = terms.intersection(&words).count();
            (overlap > 0).then_some((i, e, overlap))
        })
        .collect();
    hits.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    hits.into_iter().map(|(_, e, n)| (e, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::KnowledgeEntry;

    fn call(name: &str) -> ToolCall {
        ToolCall {
            id: format!("id_{name}"),
            name: name.into(),
            arguments: json!({}),
        }
    }

    #[test]
    fn routing_puts_queries_first() {
        let out = route_hierarchy(&[call("scene_edit"), call("open_vocab_query")]).unwrap();
        assert_eq!(out[0].name, "open_vocab_query");
        assert!(route_hierarchy(&[]).unwrap().is_empty());
        assert_eq!(
            route_hierarchy(&[call("teleport")]),
            Err(PlanningError::UnknownTool("teleport".into()))
        );
        let three = route_hierarchy(&[call("stylize_2d"), call("best_view"), call("knowledge_qa")]).unwrap();
        let names: Vec<_> = three.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["knowledge_qa", "best_view", "stylize_2d"]);
    }

    fn history(users: usize) -> Vec<AgentMessage> {
        let mut h = vec![AgentMessage::system("prompt")];
        for i in 0..users {
            h.push(AgentMessage::user(format!("u{i}")));
            h.push(AgentMessage::assistant(format!("a{i}"), vec![]));
        }
        h
    }

    #[test]
    fn trim_examples() {
        let h = history(10);
        assert_eq!(trim_memory(&h, 10), h);
        let t = trim_memory(&history(11), 10);
        assert_eq!(t[0].content, "prompt");
        assert_eq!(t[1].content, "u1");
        assert_eq!(t.iter().filter(|m| m.role == Role::User).count(), 10);
        let t = trim_memory(&history(30), 1);
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].role, Role::System);
    }

    #[test]
    fn schema_validation() {
        let reg = tool_registry();
        let q = &reg[0].parameters;
        assert!(validate_schema(q, &json!({"query": "the box"}), "").is_ok());
        assert!(validate_schema(q, &json!({"query": 3}), "").is_err());
        assert!(validate_schema(q, &json!({"query": "x", "k": 1}), "").is_err());
        assert!(validate_schema(q, &json!({}), "").is_err());
        let e = &reg[1].parameters;
        assert!(validate_schema(e, &json!({"commands": []}), "").is_err());
        assert!(validate_schema(e, &json!({"commands": [1]}), "").is_err());
    }

    #[test]
    fn decision_from_trailing_word() {
        assert_eq!(decision_from_text("Adjusted the light. CONTINUE"), Decision::Continue);
        assert_eq!(decision_from_text("All set. DONE."), Decision::Done);
        assert_eq!(decision_from_text(""), Decision::Done);
    }

    #[test]
    fn knowledge_overlap() {
        let kb = vec![
            KnowledgeEntry {
                title: "Carp".into(),
                body: "A CT scan of a carp fish.".into(),
            },
            KnowledgeEntry {
                title: "Scanner".into(),
                body: "Scanned at 0.5 mm.".into(),
            },
        ];
        let hits = knowledge_lookup(&kb, "What is the carp?");
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0.title, "Carp");
        assert!(knowledge_lookup(&[], "carp").is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn trim_bounds_users_and_keeps_order(roles in prop::collection::vec(0u8..4, 0..60), max in 1usize..12) {
                let mut h = vec![AgentMessage::system("p")];
                for (i, r) in roles.iter().enumerate() {
                    let role = [Role::User, Role::Assistant, Role::Tool, Role::System][*r as usize];
                    h.push(AgentMessage { content: i.to_string(), ..AgentMessage::new(role, "") });
                }
                let t = trim_memory(&h, max);
                prop_assert!(t.iter().filter(|m| m.role == Role::User).count() <= max);
                prop_assert_eq!(&t[0].content, "p");
                // kept messages are a subsequence of the original
                let mut it = h.iter();
                for m in &t {
                    prop_assert!(it.any(|x| x.content == m.content));
                }
            }
        }
    }
}
