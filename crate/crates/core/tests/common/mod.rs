#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use nlvis_core::agent::ScriptedProvider;
use nlvis_core::scene_io::{generate_synthetic_scene, SynthSpec};
use nlvis_core::session::{Services, SessionConfig};
use nlvis_core::stylize::TintStylizer;
use nlvis_core::{HashEmbedder, SceneBundle, Session};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Synthesize a fixture scene at a reduced resolution.
pub fn scene(name: &str, resolution: u32) -> Arc<SceneBundle> {
    let text = std::fs::read_to_string(fixtures().join("scenes").join(format!("{name}.json"))).unwrap();
    let mut spec: SynthSpec = serde_json::from_str(&text).unwrap();
    spec.resolution = resolution;
    spec.golden = false;
    Arc::new(generate_synthetic_scene(&spec, 11).unwrap())
}

pub fn services(bundle: &SceneBundle) -> Services {
    Services {
        embedder: Arc::new(HashEmbedder::captioning_scene(0, 64, &bundle.scene)),
        stylizer: Arc::new(TintStylizer),
    }
}

pub fn small_config() -> SessionConfig {
    let mut c = SessionConfig::default();
    c.index.view_count = 20;
    c.index.k = 3;
    c.index.rig.width = 48;
    c.index.rig.height = 48;
    c
}

pub fn session(name: &str, resolution: u32) -> Session {
    let b = scene(name, resolution);
    Session::new(format!("{name}-test"), b.clone(), services(&b), small_config())
}

pub fn carp_planner() -> ScriptedProvider {
    ScriptedProvider::from_file(&fixtures().join("scenarios/carp.json")).unwrap()
}
