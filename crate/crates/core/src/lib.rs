//! Editable Gaussian-splat scenes driven by natural language.
//!
//! Scenes are sets of labelled components that render by front-to-back
//! splatting. Components are found by open-vocabulary queries, edited with a
//! declarative command grammar and steered by a planner agent that looks at
//! its own output.

pub mod agent;
pub mod command;
pub mod config;
pub mod frame;
pub mod raster;
pub mod scene_io;
pub mod semantic;
pub mod session;
pub mod splat;
pub mod stylize;
pub mod views;

pub use command::{parse_command, serialize_command, validate_command, Command, CommandResult, CommandStatus};
pub use frame::ImageRGBA;
pub use raster::{render, Camera, RenderMode, RenderOptions};
pub use scene_io::{load_scene_bundle, save_scene_bundle, SceneBundle};
pub use semantic::{EmbeddingProvider, EmbeddingVector, HashEmbedder, SemanticIndex};
pub use session::{ActionLogEntry, Session, SessionConfig, SessionEvent, Services};
pub use splat::{
    compose_scenes, BasicScene, ComponentEdit, ComponentId, ComposedScene, GaussianPrimitive, LightMode, LightState,
};
