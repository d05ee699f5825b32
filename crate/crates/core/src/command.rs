//! Declarative command grammar: strict JSON parsing, canonical
//! serialization and validation against a scene.
//!
//! Wire form is one JSON object per command with a `"cmd"` discriminator,
//! e.g. `{"cmd":"set_color","component":"pectoral fin","rgb":[1,0,0]}`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::raster::RenderMode;
use crate::splat::{ComponentId, ComposedScene, LightMode, MAX_LIGHT_GAIN, MAX_OPACITY_SCALE};

pub const COMMAND_NAMES: [&str; 13] = [
    "set_color",
    "set_opacity",
    "set_visibility",
    "set_lighting",
    "set_light_direction",
    "set_camera",
    "best_view",
    "set_background",
    "set_render_mode",
    "save_image",
    "reset",
    "stylize",
    "annotate",
];

/// `"all"` or a component reference (id or exact label).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    All,
    Component(ComponentId),
}

impl Target {
    pub fn parse(s: &str) -> Self {
        if s == "all" {
            Target::All
        } else {
            Target::Component(ComponentId::new(s))
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Target::All => "all",
            Target::Component(c) => c.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SetColor { component: ComponentId, rgb: [f64; 3] },
    SetOpacity { component: ComponentId, scale: f64 },
    SetVisibility { component: ComponentId, visible: bool },
    SetLighting { target: Target, gains: Option<[f64; 4]>, magnitude: Option<f64> },
    SetLightDirection { azimuth: f64, polar: f64, mode: LightMode },
    /// Orbit about `target` (the scene center when absent).
    SetCamera { azimuth: f64, polar: f64, distance: f64, fov: f64, target: Option<[f64; 3]> },
    BestView { component: ComponentId },
    SetBackground { rgb: [f64; 3] },
    SetRenderMode { mode: RenderMode },
    SaveImage { path: String },
    Reset { target: Target },
    Stylize { target: Target, prompt: String },
    Annotate { component: ComponentId, label: String },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetColor { .. } => "set_color",
            Command::SetOpacity { .. } => "set_opacity",
            Command::SetVisibility { .. } => "set_visibility",
            Command::SetLighting { .. } => "set_lighting",
            Command::SetLightDirection { .. } => "set_light_direction",
            Command::SetCamera { .. } => "set_camera",
            Command::BestView { .. } => "best_view",
            Command::SetBackground { .. } => "set_background",
            Command::SetRenderMode { .. } => "set_render_mode",
            Command::SaveImage { .. } => "save_image",
            Command::Reset { .. } => "reset",
            Command::Stylize { .. } => "stylize",
            Command::Annotate { .. } => "annotate",
        }
    }

    /// Whether executing the command changes the displayed frame.
    pub fn is_visual(&self) -> bool {
        !matches!(self, Command::SaveImage { .. })
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_command(self))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("payload must be a JSON object")]
    NotAnObject,
    #[error("missing \"cmd\" discriminator")]
    MissingCommand,
    #[error("unknown command {name:?}; valid commands: {}", COMMAND_NAMES.join(", "))]
    UnknownCommand { name: String },
    #[error("field {field:?}: {message}")]
    Field { field: String, message: String },
}

impl ParseError {
    /// Stable class name for reporting.
    pub fn class(&self) -> &'static str {
        match self {
            ParseError::Syntax { .. } => "syntax",
            ParseError::NotAnObject => "not_an_object",
            ParseError::MissingCommand => "missing_command",
            ParseError::UnknownCommand { .. } => "unknown_command",
            ParseError::Field { .. } => "field",
        }
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn parse_command(payload: &str) -> Result<Command, ParseError> {
    let value: Value = serde_json::from_str(payload).map_err(|e| ParseError::Syntax {
        offset: byte_offset(payload, e.line(), e.column()),
        message: e.to_string(),
    })?;
    parse_value(&value)
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    allowed: &'static [&'static str],
}

fn field_err(field: &str, message: impl Into<String>) -> ParseError {
    ParseError::Field {
        field: field.to_owned(),
        message: message.into(),
    }
}

impl<'a> Fields<'a> {
    fn get(&self, name: &str) -> Option<&'a Value> {
        self.obj.get(name).filter(|v| !v.is_null())
    }

    fn required(&self, name: &str) -> Result<&'a Value, ParseError> {
        self.get(name).ok_or_else(|| field_err(name, "missing required field"))
    }

    fn string(&self, name: &str) -> Result<String, ParseError> {
        self.required(name)?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| field_err(name, "expected a string"))
    }

    fn number(&self, name: &str) -> Result<f64, ParseError> {
        as_number(name, self.required(name)?)
    }

    fn opt_number(&self, name: &str) -> Result<Option<f64>, ParseError> {
        self.get(name).map(|v| as_number(name, v)).transpose()
    }

    fn boolean(&self, name: &str) -> Result<bool, ParseError> {
        self.required(name)?
            .as_bool()
            .ok_or_else(|| field_err(name, "expected a boolean"))
    }

    fn array<const N: usize>(&self, name: &str) -> Result<[f64; N], ParseError> {
        as_array(name, self.required(name)?)
    }

    fn opt_array<const N: usize>(&self, name: &str) -> Result<Option<[f64; N]>, ParseError> {
        self.get(name).map(|v| as_array(name, v)).transpose()
    }

    fn component(&self, name: &str) -> Result<ComponentId, ParseError> {
        self.string(name).map(ComponentId)
    }

    fn target(&self, name: &str) -> Result<Target, ParseError> {
        self.string(name).map(|s| Target::parse(&s))
    }
}

fn as_number(name: &str, v: &Value) -> Result<f64, ParseError> {
    v.as_f64().ok_or_else(|| field_err(name, "expected a number"))
}

fn as_array<const N: usize>(name: &str, v: &Value) -> Result<[f64; N], ParseError> {
    let items = v
        .as_array()
        .ok_or_else(|| field_err(name, format!("expected an array of {N} numbers")))?;
    if items.len() != N {
        return Err(field_err(name, format!("expected {N} numbers, got {}", items.len())));
    }
    let mut out = [0.0; N];
    for (o, item) in out.iter_mut().zip(items) {
        *o = as_number(name, item)?;
    }
    Ok(out)
}

fn allowed_fields(name: &str) -> &'static [&'static str] {
    match name {
        "set_color" => &["component", "rgb"],
        "set_opacity" => &["component", "scale"],
        "set_visibility" => &["component", "visible"],
        "set_lighting" => &["target", "gains", "magnitude"],
        "set_light_direction" => &["azimuth", "polar", "mode"],
        "set_camera" => &["azimuth", "polar", "distance", "fov", "target"],
        "best_view" => &["component"],
        "set_background" => &["rgb"],
        "set_render_mode" => &["mode"],
        "save_image" => &["path"],
        "reset" => &["target"],
        "stylize" => &["target", "prompt"],
        "annotate" => &["component", "label"],
        _ => &[],
    }
}

/// Parse an already-decoded JSON value.
pub fn parse_value(value: &Value) -> Result<Command, ParseError> {
    let obj = value.as_object().ok_or(ParseError::NotAnObject)?;
    let name = match obj.get("cmd") {
        None | Some(Value::Null) => return Err(ParseError::MissingCommand),
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err(field_err("cmd", "expected a string")),
    };
    if !COMMAND_NAMES.contains(&name) {
        return Err(ParseError::UnknownCommand { name: name.to_owned() });
    }
    let f = Fields {
        obj,
        allowed: allowed_fields(name),
    };
    if let Some(extra) = obj.keys().find(|k| *k != "cmd" && !f.allowed.contains(&k.as_str())) {
        return Err(field_err(extra, format!("unknown field for {name}")));
    }
    let cmd = match name {
        "set_color" => Command::SetColor {
            component: f.component("component")?,
            rgb: f.array("rgb")?,
        },
        "set_opacity" => Command::SetOpacity {
            component: f.component("component")?,
            scale: f.number("scale")?,
        },
        "set_visibility" => Command::SetVisibility {
            component: f.component("component")?,
            visible: f.boolean("visible")?,
        },
        "set_lighting" => Command::SetLighting {
            target: f.target("target")?,
            gains: f.opt_array("gains")?,
            magnitude: f.opt_number("magnitude")?,
        },
        "set_light_direction" => Command::SetLightDirection {
            azimuth: f.number("azimuth")?,
            polar: f.number("polar")?,
            mode: match f.string("mode")?.as_str() {
                "headlight" => LightMode::Headlight,
                "orbital" => LightMode::Orbital,
                other => return Err(field_err("mode", format!("unknown light mode {other:?}"))),
            },
        },
        "set_camera" => Command::SetCamera {
            azimuth: f.number("azimuth")?,
            polar: f.number("polar")?,
            distance: f.number("distance")?,
            fov: f.number("fov")?,
            target: f.opt_array("target")?,
        },
        "best_view" => Command::BestView {
            component: f.component("component")?,
        },
        "set_background" => Command::SetBackground { rgb: f.array("rgb")? },
        "set_render_mode" => {
            let m = f.string("mode")?;
            Command::SetRenderMode {
                mode: RenderMode::from_name(&m)
                    .ok_or_else(|| field_err("mode", format!("unknown render mode {m:?}")))?,
            }
        }
        "save_image" => Command::SaveImage { path: f.string("path")? },
        "reset" => Command::Reset { target: f.target("target")? },
        "stylize" => Command::Stylize {
            target: f.target("target")?,
            prompt: f.string("prompt")?,
        },
        "annotate" => Command::Annotate {
            component: f.component("component")?,
            label: f.string("label")?,
        },
        _ => unreachable!("checked against COMMAND_NAMES"),
    };
    Ok(cmd)
}

fn num(x: f64) -> Value {
    Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn arr(xs: &[f64]) -> Value {
    Value::Array(xs.iter().copied().map(num).collect())
}

fn s(x: &str) -> Value {
    Value::String(x.to_owned())
}

/// JSON value with keys in sorted order.
pub fn command_to_value(cmd: &Command) -> BTreeMap<&'static str, Value> {
    let mut m = BTreeMap::new();
    m.insert("cmd", s(cmd.name()));
    match cmd {
        Command::SetColor { component, rgb } => {
            m.insert("component", s(component.as_str()));
            m.insert("rgb", arr(rgb));
        }
        Command::SetOpacity { component, scale } => {
            m.insert("component", s(component.as_str()));
            m.insert("scale", num(*scale));
        }
        Command::SetVisibility { component, visible } => {
            m.insert("component", s(component.as_str()));
            m.insert("visible", Value::Bool(*visible));
        }
        Command::SetLighting { target, gains, magnitude } => {
            m.insert("target", s(target.as_str()));
            if let Some(g) = gains {
                m.insert("gains", arr(g));
            }
            if let Some(mag) = magnitude {
                m.insert("magnitude", num(*mag));
            }
        }
        Command::SetLightDirection { azimuth, polar, mode } => {
            m.insert("azimuth", num(*azimuth));
            m.insert("polar", num(*polar));
            m.insert(
                "mode",
                s(match mode {
                    LightMode::Headlight => "headlight",
                    LightMode::Orbital => "orbital",
                }),
            );
        }
        Command::SetCamera { azimuth, polar, distance, fov, target } => {
            m.insert("azimuth", num(*azimuth));
            m.insert("polar", num(*polar));
            m.insert("distance", num(*distance));
            m.insert("fov", num(*fov));
            if let Some(t) = target {
                m.insert("target", arr(t));
            }
        }
        Command::BestView { component } => {
            m.insert("component", s(component.as_str()));
        }
        Command::SetBackground { rgb } => {
            m.insert("rgb", arr(rgb));
        }
        Command::SetRenderMode { mode } => {
            m.insert("mode", s(mode.name()));
        }
        Command::SaveImage { path } => {
            m.insert("path", s(path));
        }
        Command::Reset { target } => {
            m.insert("target", s(target.as_str()));
        }
        Command::Stylize { target, prompt } => {
            m.insert("target", s(target.as_str()));
            m.insert("prompt", s(prompt));
        }
        Command::Annotate { component, label } => {
            m.insert("component", s(component.as_str()));
            m.insert("label", s(label));
        }
    }
    m
}

/// Canonical form: sorted keys, no insignificant whitespace.
pub fn serialize_command(cmd: &Command) -> String {
    serde_json::to_string(&command_to_value(cmd)).expect("json values serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionCode {
    /// The payload did not parse.
    Parse,
    Range,
    UnresolvedComponent,
    Empty,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub code: RejectionCode,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

struct Checker<'a> {
    scene: &'a ComposedScene,
    out: Vec<Rejection>,
}

impl Checker<'_> {
    fn reject(&mut self, code: RejectionCode, field: &str, message: String) {
        self.out.push(Rejection {
            code,
            field: field.to_owned(),
            message,
        });
    }

    fn in_range(&mut self, field: &str, x: f64, lo: f64, hi: f64) {
        if !(x.is_finite() && x >= lo && x <= hi) {
            self.reject(RejectionCode::Range, field, format!("{x} outside [{lo}, {hi}]"));
        }
    }

    fn finite(&mut self, field: &str, x: f64) {
        if !x.is_finite() {
            self.reject(RejectionCode::Range, field, format!("{x} is not finite"));
        }
    }

    fn non_empty(&mut self, field: &str, x: &str) {
        if x.trim().is_empty() {
            self.reject(RejectionCode::Empty, field, "must not be empty".into());
        }
    }

    fn component(&mut self, field: &str, c: &ComponentId) {
        if c.as_str().trim().is_empty() {
            self.non_empty(field, c.as_str());
        } else if self.scene.resolve(c.as_str()).is_none() {
            self.reject(
                RejectionCode::UnresolvedComponent,
                field,
                format!("no component with id or label {:?}", c.as_str()),
            );
        }
    }

    fn target(&mut self, field: &str, t: &Target) {
        if let Target::Component(c) = t {
            self.component(field, c);
        }
    }

    fn rgb(&mut self, field: &str, rgb: &[f64; 3]) {
        for &c in rgb {
            self.in_range(field, c, 0.0, 1.0);
        }
    }
}

/// Range checks and component resolution. Never panics.
pub fn validate_command(cmd: &Command, scene: &ComposedScene) -> Result<(), Vec<Rejection>> {
    let mut c = Checker { scene, out: Vec::new() };
    match cmd {
        Command::SetColor { component, rgb } => {
            c.component("component", component);
            c.rgb("rgb", rgb);
        }
        Command::SetOpacity { component, scale } => {
            c.component("component", component);
            c.in_range("scale", *scale, 0.0, MAX_OPACITY_SCALE);
        }
        Command::SetVisibility { component, .. } => c.component("component", component),
        Command::SetLighting { target, gains, magnitude } => {
            c.target("target", target);
            if gains.is_none() && magnitude.is_none() {
                c.reject(RejectionCode::Empty, "gains", "set_lighting needs gains or magnitude".into());
            }
            for g in gains.iter().flatten() {
                c.in_range("gains", *g, 0.0, MAX_LIGHT_GAIN);
            }
            if let Some(m) = magnitude {
                if matches!(target, Target::Component(_)) {
                    c.reject(
                        RejectionCode::Conflict,
                        "magnitude",
                        "magnitude applies to the global light; use target \"all\"".into(),
                    );
                }
                c.in_range("magnitude", *m, 0.0, f64::MAX);
            }
        }
        Command::SetLightDirection { azimuth, polar, .. } => {
            c.finite("azimuth", *azimuth);
            c.in_range("polar", *polar, 0.0, PI);
        }
        Command::SetCamera { azimuth, polar, distance, fov, target } => {
            c.finite("azimuth", *azimuth);
            c.in_range("polar", *polar, 0.0, PI);
            if !(distance.is_finite() && *distance > 0.0) {
                c.reject(RejectionCode::Range, "distance", format!("{distance} must be positive"));
            }
            if !(fov.is_finite() && *fov > 0.0 && *fov < PI) {
                c.reject(RejectionCode::Range, "fov", format!("{fov} outside (0, pi)"));
            }
            for t in target.iter().flatten() {
                c.finite("target", *t);
            }
        }
        Command::BestView { component } => c.component("component", component),
        Command::SetBackground { rgb } => c.rgb("rgb", rgb),
        Command::SetRenderMode { .. } => {}
        Command::SaveImage { path } => c.non_empty("path", path),
        Command::Reset { target } => c.target("target", target),
        Command::Stylize { target, prompt } => {
            c.target("target", target);
            c.non_empty("prompt", prompt);
        }
        Command::Annotate { component, label } => {
            c.component("component", component);
            c.non_empty("label", label);
        }
    }
    if c.out.is_empty() {
        Ok(())
    } else {
        Err(c.out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandStatus {
    Ok,
    Rejected,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandResult {
    pub status: CommandStatus,
    pub detail: String,
    pub frame_dirty: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<Rejection>,
}

impl CommandResult {
    pub fn ok(detail: impl Into<String>, frame_dirty: bool) -> Self {
        Self {
            status: CommandStatus::Ok,
            detail: detail.into(),
            frame_dirty,
            reasons: Vec::new(),
        }
    }

    pub fn rejected(reasons: Vec<Rejection>) -> Self {
        let detail = reasons.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("; ");
        Self {
            status: CommandStatus::Rejected,
            detail,
            frame_dirty: false,
            reasons,
        }
    }

    pub fn failed(detail: impl Into<String>) -> Self {
        Self {
            status: CommandStatus::Failed,
            detail: detail.into(),
            frame_dirty: false,
            reasons: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == CommandStatus::Ok
    }
}
