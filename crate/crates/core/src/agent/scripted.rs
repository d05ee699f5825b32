//! Deterministic planner driven by a scenario file.
//!
//! A scenario maps utterance regexes to step lists. The step taken is the
//! number of assistant messages since the latest user message, so one
//! scenario drives every round of a loop. Strings inside tool arguments
//! may use `{{top_match}}` or `{{match_N}}`, filled from the most recent
//! `open_vocab_query` result in the conversation.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AgentMessage, AssistantTurn, ChatProvider, Decision, Role, ToolCall, ToolSpec};
use crate::semantic::ProviderError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCall {
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStep {
    #[serde(default)]
    pub reply: String,
    #[serde(default)]
    pub tool_calls: Vec<ScriptedCall>,
    #[serde(default = "default_decision")]
    pub decision: Decision,
}

fn default_decision() -> Decision {
    Decision::Done
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRule {
    pub pattern: String,
    pub steps: Vec<ScenarioStep>,
    /// Keep replaying the last step once the list is exhausted.
    #[serde(default)]
    pub repeat_last: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub rules: Vec<ScenarioRule>,
    /// Used when no rule matches.
    #[serde(default)]
    pub fallback: Option<ScenarioStep>,
    #[serde(default)]
    pub vision_capable: bool,
}

pub struct ScriptedProvider {
    name: String,
    rules: Vec<(Regex, ScenarioRule)>,
    fallback: ScenarioStep,
    vision: bool,
}

impl ScriptedProvider {
    pub fn new(scenario: Scenario) -> Result<Self, ProviderError> {
        let rules = scenario
            .rules
            .into_iter()
            .map(|r| {
                Regex::new(&r.pattern)
                    .map(|re| (re, r.clone()))
                    .map_err(|e| ProviderError::InvalidResponse(format!("bad pattern {:?}: {e}", r.pattern)))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            name: if scenario.name.is_empty() {
                "scripted".into()
            } else {
                scenario.name
            },
            rules,
            fallback: scenario.fallback.unwrap_or(ScenarioStep {
                reply: "I don't have a script for that. DONE".into(),
                tool_calls: vec![],
                decision: Decision::Done,
            }),
            vision: scenario.vision_capable,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| ProviderError::InvalidResponse(format!("scenario: {e}")))?;
        Self::new(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Transport(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn step_for(&self, messages: &[AgentMessage]) -> ScenarioStep {
        let last_user = messages.iter().rposition(|m| m.role == Role::User);
        let utterance = last_user.map(|i| messages[i].content.as_str()).unwrap_or("");
        let index = last_user
            .map(|i| messages[i + 1..].iter().filter(|m| m.role == Role::Assistant).count())
            .unwrap_or(0);
        let Some((_, rule)) = self.rules.iter().find(|(re, _)| re.is_match(utterance)) else {
            return self.fallback.clone();
        };
        match rule.steps.get(index) {
            Some(s) => s.clone(),
            None if rule.repeat_last && !rule.steps.is_empty() => rule.steps[rule.steps.len() - 1].clone(),
            None => ScenarioStep {
                reply: "DONE".into(),
                tool_calls: vec![],
                decision: Decision::Done,
            },
        }
    }
}

fn latest_matches(messages: &[AgentMessage]) -> Vec<String> {
    messages
        .iter()
        .rev()
        .filter(|m| m.role == Role::Tool)
        .find_map(|m| {
            let v: Value = serde_json::from_str(&m.content).ok()?;
            let matches = v.get("matches")?.as_array()?;
            Some(
                matches
                    .iter()
                    .filter_map(|x| x.get("component")?.as_str().map(str::to_owned))
                    .collect(),
            )
        })
        .unwrap_or_default()
}

fn fill(value: &Value, matches: &[String]) -> Value {
    match value {
        Value::String(s) if s.contains("{{") => {
            let mut out = s.replace("{{top_match}}", matches.first().map(String::as_str).unwrap_or(""));
            for (i, m) in matches.iter().enumerate() {
                out = out.replace(&format!("{{{{match_{}}}}}", i + 1), m);
            }
            Value::String(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| fill(v, matches)).collect()),
        Value::Object(obj) => Value::Object(obj.iter().map(|(k, v)| (k.clone(), fill(v, matches))).collect()),
        other => other.clone(),
    }
}

impl ChatProvider for ScriptedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn vision_capable(&self) -> bool {
        self.vision
    }

    fn complete(
        &self,
        messages: &[AgentMessage],
        _tools: &[ToolSpec],
        on_token: &mut dyn FnMut(&str),
    ) -> Result<AssistantTurn, ProviderError> {
        let step = self.step_for(messages);
        for piece in step.reply.split_inclusive(' ') {
            on_token(piece);
        }
        let matches = latest_matches(messages);
        Ok(AssistantTurn {
            content: step.reply,
            tool_calls: step
                .tool_calls
                .iter()
                .map(|c| ToolCall {
                    id: String::new(),
                    name: c.name.clone(),
                    arguments: fill(&c.arguments, &matches),
                })
                .collect(),
            decision: step.decision,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn provider() -> ScriptedProvider {
        ScriptedProvider::from_json(
            &json!({
                "rules": [{
                    "pattern": "(?i)fin",
                    "steps": [
                        {"reply": "looking", "tool_calls": [{"name": "open_vocab_query", "arguments": {"query": "fin"}}]},
                        {"reply": "coloring", "tool_calls": [{"name": "scene_edit", "arguments": {"commands": [{"cmd": "set_color", "component": "{{top_match}}", "rgb": [1, 0, 0]}]}}]},
                        {"reply": "done DONE"}
                    ]
                }]
            })
            .to_string(),
        )
        .unwrap()
    }

    #[test]
    fn steps_follow_assistant_count_and_fill_matches() {
        let p = provider();
        let mut h = vec![AgentMessage::system("s"), AgentMessage::user("red fin please")];
        let mut tokens = String::new();
        let t = p.complete(&h, &[], &mut |s| tokens.push_str(s)).unwrap();
        assert_eq!(tokens, "looking");
        assert_eq!(t.tool_calls[0].name, "open_vocab_query");
        h.push(AgentMessage::assistant(t.content, t.tool_calls));
        h.push(AgentMessage::tool(
            "c1",
            json!({"matches": [{"component": "fin_l", "similarity": 0.9}]}).to_string(),
        ));
        let t = p.complete(&h, &[], &mut |_| {}).unwrap();
        assert_eq!(t.tool_calls[0].arguments["commands"][0]["component"], "fin_l");
        h.push(AgentMessage::assistant(t.content, t.tool_calls));
        let t = p.complete(&h, &[], &mut |_| {}).unwrap();
        assert!(t.tool_calls.is_empty());
        assert_eq!(t.decision, Decision::Done);
    }

    #[test]
    fn unmatched_utterance_uses_fallback() {
        let t = provider()
            .complete(&[AgentMessage::user("hello")], &[], &mut |_| {})
            .unwrap();
        assert_eq!(t.decision, Decision::Done);
        assert!(t.tool_calls.is_empty());
    }
}
