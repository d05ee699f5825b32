//! Service configuration, read from TOML.
//!
//! Relative paths are resolved against the directory of the config file.
//! Credentials never live in the file; `api_key_env` names the variable
//! that holds them.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ChatProvider, OpenAiChatProvider, Scenario, ScriptedProvider, VpaConfig, DEFAULT_MEMORY_CAP};
use crate::semantic::{EmbeddingProvider, HashEmbedder, IndexConfig, ProviderError, RemoteEmbedder, DEFAULT_DIMENSION};
use crate::session::{Services, SessionConfig};
use crate::splat::ComposedScene;
use crate::stylize::{RemoteStylizer, Stylizer, TintStylizer};
use crate::views::{ViewRig, DEFAULT_TOP_K, REFERENCE_VIEW_COUNT};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Directory of scene bundles, one subdirectory per scene.
    pub scenes_dir: PathBuf,
    /// Action logs and saved images go here.
    pub data_dir: PathBuf,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            scenes_dir: "scenes".into(),
            data_dir: "data".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub max_iterations: usize,
    pub memory_cap: usize,
    pub max_tool_rounds: usize,
    pub perception_size: u32,
}

impl Default for AgentSection {
    fn default() -> Self {
        let v = VpaConfig::default();
        Self {
            max_iterations: v.max_iterations,
            memory_cap: DEFAULT_MEMORY_CAP,
            max_tool_rounds: v.max_tool_rounds,
            perception_size: v.perception_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexSection {
    pub k: usize,
    pub view_count: usize,
    pub view_resolution: u32,
    pub normalize_before_fusion: bool,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            view_count: REFERENCE_VIEW_COUNT,
            view_resolution: ViewRig::default().width,
            normalize_before_fusion: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    /// Square session resolution; the bundle's camera when unset.
    pub resolution: Option<u32>,
    pub parallel: bool,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            resolution: None,
            parallel: true,
        }
    }
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChatConfig {
    Scripted {
        /// Scenario JSON; without one every message gets the fallback reply.
        #[serde(default)]
        scenario: Option<PathBuf>,
    },
    Openai {
        endpoint: String,
        model: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        vision: bool,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self::Scripted { scenario: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingConfig {
    Hash {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_dimension")]
        dimension: usize,
        /// Caption frames with the nearest component label.
        #[serde(default = "yes")]
        captions: bool,
    },
    Remote {
        endpoint: String,
        dimension: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default)]
        cache_dir: Option<PathBuf>,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

fn default_in_flight() -> usize {
    4
}

fn yes() -> bool {
    true
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self::Hash {
            seed: 0,
            dimension: DEFAULT_DIMENSION,
            captions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StylizerConfig {
    #[default]
    Tint,
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub chat: ChatConfig,
    pub embedding: EmbeddingConfig,
    pub stylizer: StylizerConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub server: ServerConfig,
    pub agent: AgentSection,
    pub index: IndexSection,
    pub render: RenderSection,
    pub providers: ProvidersConfig,
}

fn timeout(secs: f64) -> Result<Duration, ConfigError> {
    Duration::try_from_secs_f64(secs)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| ConfigError::Invalid(format!("timeout_secs {secs} must be positive")))
}

impl AppConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        c.resolve_paths(base);
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.server.scenes_dir);
        fix(&mut self.server.data_dir);
        if let ChatConfig::Scripted { scenario: Some(p) } = &mut self.providers.chat {
            fix(p);
        }
        if let EmbeddingConfig::Remote { cache_dir: Some(p), .. } = &mut self.providers.embedding {
            fix(p);
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.agent.max_iterations == 0 {
            return bad("agent.max_iterations must be at least 1");
        }
        if self.agent.memory_cap == 0 {
            return bad("agent.memory_cap must be at least 1");
        }
        if self.agent.max_tool_rounds == 0 {
            return bad("agent.max_tool_rounds must be at least 1");
        }
        if self.index.k == 0 || self.index.view_count == 0 || self.index.k > self.index.view_count {
            return bad("index needs 1 <= k <= view_count");
        }
        if self.index.view_resolution == 0 || self.render.resolution == Some(0) {
            return bad("resolutions must be positive");
        }
        match &self.providers.embedding {
            EmbeddingConfig::Hash { dimension: 0, .. } | EmbeddingConfig::Remote { dimension: 0, .. } => {
                return bad("embedding dimension must be positive")
            }
            EmbeddingConfig::Remote { timeout_secs, .. } => {
                timeout(*timeout_secs)?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            index: IndexConfig {
                k: self.index.k,
                view_count: self.index.view_count,
                rig: ViewRig {
                    width: self.index.view_resolution,
                    height: self.index.view_resolution,
                    ..ViewRig::default()
                },
                normalize_before_fusion: self.index.normalize_before_fusion,
            },
            vpa: VpaConfig {
                max_iterations: self.agent.max_iterations,
                memory_cap: self.agent.memory_cap,
                perception_size: self.agent.perception_size,
                max_tool_rounds: self.agent.max_tool_rounds,
            },
            resolution: self.render.resolution,
            parallel_render: self.render.parallel,
            image_dir: None,
        }
    }

    pub fn embedding_name(&self) -> String {
        match &self.providers.embedding {
            EmbeddingConfig::Hash { seed, .. } => format!("hash:{seed}"),
            EmbeddingConfig::Remote { endpoint, .. } => endpoint.clone(),
        }
    }

    /// Embedder for one scene. The hash stub captions against that scene's labels.
    pub fn build_embedder(&self, scene: &ComposedScene) -> Arc<dyn EmbeddingProvider> {
        match &self.providers.embedding {
            EmbeddingConfig::Hash {
                seed,
                dimension,
                captions,
            } => Arc::new(if *captions {
                HashEmbedder::captioning_scene(*seed, *dimension, scene)
            } else {
                HashEmbedder::new(*seed, *dimension)
            }),
            EmbeddingConfig::Remote {
                endpoint,
                dimension,
                timeout_secs,
                cache_dir,
                max_in_flight,
            } => {
                let mut e = RemoteEmbedder::new(endpoint.clone(), *dimension, timeout(*timeout_secs).expect("checked"))
                    .with_max_in_flight(*max_in_flight);
                if let Some(dir) = cache_dir {
                    e = e.with_cache_dir(dir.clone());
                }
                Arc::new(e)
            }
        }
    }

    pub fn build_stylizer(&self) -> Result<Arc<dyn Stylizer>, ConfigError> {
        Ok(match &self.providers.stylizer {
            StylizerConfig::Tint => Arc::new(TintStylizer),
            StylizerConfig::Remote { endpoint, timeout_secs } => {
                Arc::new(RemoteStylizer::new(endpoint.clone(), timeout(*timeout_secs)?))
            }
        })
    }

    pub fn build_services(&self, scene: &ComposedScene) -> Result<Services, ConfigError> {
        Ok(Services {
            embedder: self.build_embedder(scene),
            stylizer: self.build_stylizer()?,
        })
    }

    /// Chat provider; reads credentials from the environment.
    pub fn build_chat_provider(&self) -> Result<Arc<dyn ChatProvider>, ConfigError> {
        Ok(match &self.providers.chat {
            ChatConfig::Scripted { scenario: Some(path) } => Arc::new(ScriptedProvider::from_file(path)?),
            ChatConfig::Scripted { scenario: None } => Arc::new(ScriptedProvider::new(Scenario {
                name: "scripted".into(),
                rules: vec![],
                fallback: None,
                vision_capable: false,
            })?),
            ChatConfig::Openai {
                endpoint,
                model,
                api_key_env,
                vision,
                timeout_secs,
            } => {
                let key = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| ConfigError::MissingEnv(var.clone()))?),
                    None => None,
                };
                Arc::new(OpenAiChatProvider::new(
                    endpoint.clone(),
                    model.clone(),
                    key,
                    *vision,
                    timeout(*timeout_secs)?,
                ))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = AppConfig::from_toml("", Path::new("/etc/nlvis")).unwrap();
        assert_eq!(c.agent.max_iterations, 3);
        assert_eq!(c.agent.memory_cap, 10);
        assert_eq!(c.index.k, 5);
        assert_eq!(c.index.view_count, 92);
        assert_eq!(c.server.scenes_dir, Path::new("/etc/nlvis/scenes"));
        assert_eq!(c.session_config(), SessionConfig::default());
    }

    #[test]
    fn providers_are_selected_by_kind() {
        let c = AppConfig::from_toml(
            r#"
            [agent]
            max_iterations = 5
            [providers.chat]
            kind = "openai"
            endpoint = "http://localhost:9/v1/chat/completions"
            model = "m"
            [providers.embedding]
            kind = "hash"
            seed = 3
            dimension = 64
            [providers.stylizer]
            kind = "remote"
            endpoint = "http://localhost:9/stylize"
            "#,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.session_config().vpa.max_iterations, 5);
        assert_eq!(c.build_chat_provider().unwrap().name(), "m");
        let scene = ComposedScene {
            components: vec![],
            global_light: Default::default(),
            background: [0.0; 3],
        };
        assert_eq!(c.build_embedder(&scene).dimension(), 64);
    }

    #[test]
    fn bad_values_rejected() {
        for text in [
            "[agent]\nmax_iterations = 0",
            "[index]\nk = 10\nview_count = 4",
            "[providers.embedding]\nkind = \"hash\"\ndimension = 0",
            "[server]\nport = 3",
        ] {
            assert!(AppConfig::from_toml(text, Path::new(".")).is_err(), "{text}");
        }
    }

    #[test]
    fn missing_credential_variable_is_reported() {
        let c = AppConfig::from_toml(
            r#"
            [providers.chat]
            kind = "openai"
            endpoint = "http://localhost:9/"
            model = "m"
            api_key_env = "NLVIS_TEST_KEY_THAT_IS_NOT_SET"
            "#,
            Path::new("."),
        )
        .unwrap();
        assert!(matches!(c.build_chat_provider(), Err(ConfigError::MissingEnv(_))));
    }
}
