use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::frame::{decode_png, write_atomic, ImageRGBA};
use crate::raster::{Camera, RenderMode, DEFAULT_RESOLUTION};
use crate::semantic::{
    build_index, EmbeddingProvider, EmbeddingSource, IndexConfig, RankedView, SemanticComponent, SemanticIndex,
};
use crate::splat::{compose_scenes, BasicScene, BoundingSphere, ComponentId, ComposedScene, EditMap, LightState};
use crate::views::ViewRig;

use super::format::{decode_embedding, decode_primitives, encode_embedding, encode_primitives, FORMAT_VERSION};
use super::{check_file_stem, json_error, BundleError};

pub const MANIFEST_FILE: &str = "manifest.json";
const KNOWLEDGE_FILE: &str = "knowledge.json";
const GOLDEN_FILE: &str = "golden.png";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestComponent {
    pub id: ComponentId,
    pub label: String,
    pub palette_color: [f64; 3],
    pub primitive_count: usize,
    pub primitives: FileRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<FileRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_source: Option<EmbeddingSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleDefaults {
    pub camera: Camera,
    pub light: LightState,
    pub background: [f64; 3],
    #[serde(default)]
    pub render_mode: RenderMode,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub edits: EditMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingMeta {
    pub dimension: usize,
    pub provider: String,
    pub k: usize,
    pub view_count: usize,
    #[serde(default)]
    pub normalize_before_fusion: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeEntry {
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub scene_id: String,
    pub components: Vec<ManifestComponent>,
    pub defaults: BundleDefaults,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<FileRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingMeta>,
    /// Entropy-ranked views per component, best first.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub views: BTreeMap<ComponentId, Vec<RankedView>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden: Option<FileRef>,
}

/// A validated, in-memory scene bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub scene_id: String,
    /// Global light and background are the bundle defaults.
    pub scene: ComposedScene,
    pub defaults: BundleDefaults,
    pub knowledge: Vec<KnowledgeEntry>,
    /// Present when at least one component has an embedding.
    pub index: Option<SemanticIndex>,
    pub embedding: Option<EmbeddingMeta>,
    pub views: BTreeMap<ComponentId, Vec<RankedView>>,
    pub golden: Option<ImageRGBA>,
}

impl SceneBundle {
    pub fn new(scene_id: impl Into<String>, components: Vec<BasicScene>, defaults: BundleDefaults) -> Result<Self, BundleError> {
        let mut scene = compose_scenes(&components)?;
        scene.global_light = defaults.light;
        scene.background = defaults.background;
        for c in &components {
            check_file_stem(c.id.as_str())?;
        }
        Ok(Self {
            scene_id: scene_id.into(),
            scene,
            defaults,
            knowledge: Vec::new(),
            index: None,
            embedding: None,
            views: BTreeMap::new(),
            golden: None,
        })
    }

    /// Components that have no embedding yet.
    pub fn missing_embeddings(&self) -> Vec<ComponentId> {
        self.scene
            .components
            .iter()
            .filter(|c| {
                !self
                    .index
                    .as_ref()
                    .is_some_and(|ix| ix.components.iter().any(|e| e.component_id == c.id))
            })
            .map(|c| c.id.clone())
            .collect()
    }
}

/// Camera framing `sphere` from a three-quarter view.
pub fn default_camera(sphere: &BoundingSphere, resolution: u32) -> Camera {
    let rig = ViewRig::default();
    Camera::orbit(
        sphere.center,
        0.6,
        1.1,
        rig.framing_distance(sphere.radius),
        rig.fov_y,
        resolution,
        resolution,
    )
}

impl BundleDefaults {
    pub fn framing(scene: &ComposedScene) -> Self {
        Self {
            camera: default_camera(&scene.bounding_sphere(), DEFAULT_RESOLUTION),
            light: LightState::default(),
            background: [0.0; 3],
            render_mode: RenderMode::Shaded,
            edits: EditMap::new(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<FileRef, BundleError> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_atomic(&path, bytes)?;
    Ok(FileRef {
        path: rel.to_owned(),
        sha256: sha256_hex(bytes),
    })
}

/// Write every file through a temporary and rename; the manifest goes last.
pub fn save_scene_bundle(bundle: &SceneBundle, dir: &Path) -> Result<Manifest, BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let embeddings: BTreeMap<&ComponentId, &SemanticComponent> = bundle
        .index
        .iter()
        .flat_map(|ix| ix.components.iter())
        .map(|c| (&c.component_id, c))
        .collect();
    let mut components = Vec::new();
    let mut keep = BTreeSet::new();
    for c in &bundle.scene.components {
        check_file_stem(c.id.as_str())?;
        let rel = format!("components/{}.gsplat", c.id);
        keep.insert(format!("{}.gsplat", c.id));
        let primitives = write_file(dir, &rel, &encode_primitives(&c.primitives))?;
        let (embedding, embedding_source) = match embeddings.get(&c.id) {
            Some(e) => (
                Some(write_file(
                    dir,
                    &format!("embeddings/{}.vec", c.id),
                    &encode_embedding(&e.object_embedding),
                )?),
                Some(e.source),
            ),
            None => (None, None),
        };
        components.push(ManifestComponent {
            id: c.id.clone(),
            label: c.label.clone(),
            palette_color: c.palette_color,
            primitive_count: c.primitives.len(),
            primitives,
            embedding,
            embedding_source,
        });
    }
    // drop primitive files left over from an earlier save
    if let Ok(entries) = fs::read_dir(dir.join("components")) {
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            if name.ends_with(".gsplat") && !keep.contains(&name) {
                fs::remove_file(e.path()).map_err(io_err(&e.path()))?;
            }
        }
    }
    let knowledge = if bundle.knowledge.is_empty() {
        None
    } else {
        let text = serde_json::to_string_pretty(&bundle.knowledge).expect("serializable");
        Some(write_file(dir, KNOWLEDGE_FILE, text.as_bytes())?)
    };
    let golden = match &bundle.golden {
        Some(g) => Some(write_file(dir, GOLDEN_FILE, &g.encode_png()?)?),
        None => None,
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        scene_id: bundle.scene_id.clone(),
        components,
        defaults: bundle.defaults.clone(),
        knowledge,
        embedding: bundle.embedding.clone(),
        views: bundle.views.clone(),
        golden,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("serializable");
    write_file(dir, MANIFEST_FILE, text.as_bytes())?;
    Ok(manifest)
}

fn read_checked(root: &Path, file: &FileRef) -> Result<Vec<u8>, BundleError> {
    if file.path.contains("..") || Path::new(&file.path).is_absolute() {
        return Err(BundleError::Manifest {
            file: MANIFEST_FILE.into(),
            message: format!("path {:?} escapes the bundle", file.path),
        });
    }
    let path = root.join(&file.path);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let actual = sha256_hex(&bytes);
    if actual != file.sha256 {
        return Err(BundleError::Checksum {
            file: file.path.clone(),
            expected: file.sha256.clone(),
            actual,
        });
    }
    Ok(bytes)
}

fn manifest_err(message: String) -> BundleError {
    BundleError::Manifest {
        file: MANIFEST_FILE.into(),
        message,
    }
}

pub(crate) fn read_manifest<T: serde::de::DeserializeOwned>(dir: &Path) -> Result<T, BundleError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| json_error(MANIFEST_FILE, &text, e))
}

/// Load and fully validate a bundle. Nothing is returned unless every file
/// checks out.
pub fn load_scene_bundle(dir: &Path) -> Result<SceneBundle, BundleError> {
    let manifest: Manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(manifest_err(format!("unsupported format version {}", manifest.format_version)));
    }
    if manifest.components.is_empty() {
        return Err(manifest_err("bundle has no components".into()));
    }
    // components/ must hold exactly the referenced primitive files
    let mut referenced = BTreeSet::new();
    for c in &manifest.components {
        check_file_stem(c.id.as_str())?;
        let expected = format!("components/{}.gsplat", c.id);
        if c.primitives.path != expected {
            return Err(manifest_err(format!(
                "component {} primitive file must be {expected}, found {}",
                c.id, c.primitives.path
            )));
        }
        if !referenced.insert(format!("{}.gsplat", c.id)) {
            return Err(manifest_err(format!("component {} listed twice", c.id)));
        }
    }
    let comp_dir = dir.join("components");
    let on_disk: BTreeSet<String> = fs::read_dir(&comp_dir)
        .map_err(io_err(&comp_dir))?
        .flatten()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".gsplat"))
        .collect();
    if let Some(extra) = on_disk.difference(&referenced).next() {
        return Err(manifest_err(format!("components/{extra} is not listed in the manifest")));
    }

    let mut components = Vec::with_capacity(manifest.components.len());
    let mut embedded = Vec::new();
    for c in &manifest.components {
        let bytes = read_checked(dir, &c.primitives)?;
        let primitives = decode_primitives(&bytes, &c.primitives.path)?;
        if primitives.len() != c.primitive_count {
            return Err(BundleError::Format {
                file: c.primitives.path.clone(),
                offset: 8,
                message: format!(
                    "file holds {} primitives, manifest says {}",
                    primitives.len(),
                    c.primitive_count
                ),
            });
        }
        components.push(BasicScene::new(c.id.clone(), c.label.clone(), c.palette_color, primitives)?);
        if let Some(e) = &c.embedding {
            let v = decode_embedding(&read_checked(dir, e)?, &e.path)?;
            if let Some(meta) = &manifest.embedding {
                if v.dim() != meta.dimension {
                    return Err(BundleError::Format {
                        file: e.path.clone(),
                        offset: 8,
                        message: format!("dimension {} differs from manifest {}", v.dim(), meta.dimension),
                    });
                }
            }
            embedded.push(SemanticComponent {
                component_id: c.id.clone(),
                label: c.label.clone(),
                object_embedding: v,
                source: c.embedding_source.unwrap_or(EmbeddingSource::VisionOnly),
            });
        }
    }
    for id in manifest.views.keys() {
        if !manifest.components.iter().any(|c| &c.id == id) {
            return Err(manifest_err(format!("views listed for unknown component {id}")));
        }
    }
    let knowledge = match &manifest.knowledge {
        Some(f) => {
            let bytes = read_checked(dir, f)?;
            let text = String::from_utf8_lossy(&bytes);
            serde_json::from_str(&text).map_err(|e| json_error(&f.path, &text, e))?
        }
        None => Vec::new(),
    };
    let golden = match &manifest.golden {
        Some(f) => Some(ImageRGBA::from_rgba8(&decode_png(&read_checked(dir, f)?)?)),
        None => None,
    };
    manifest
        .defaults
        .camera
        .validate()
        .map_err(|e| manifest_err(format!("default camera: {e}")))?;
    manifest
        .defaults
        .light
        .validate()
        .map_err(|e| manifest_err(format!("default light: {e}")))?;
    for (id, e) in &manifest.defaults.edits {
        e.validate().map_err(|err| manifest_err(format!("default edit for {id}: {err}")))?;
    }

    let mut bundle = SceneBundle::new(manifest.scene_id.clone(), components, manifest.defaults.clone())?;
    bundle.knowledge = knowledge;
    bundle.embedding = manifest.embedding.clone();
    bundle.views = manifest.views;
    bundle.golden = golden;
    if !embedded.is_empty() {
        let partial = embedded.len() < bundle.scene.components.len();
        bundle.index = Some(SemanticIndex {
            dimension: embedded[0].object_embedding.dim(),
            components: embedded,
            partial,
        });
    }
    Ok(bundle)
}

/// Run entropy-guided view selection and embedding over every component
/// and store the result in the bundle.
pub fn index_bundle(
    bundle: &mut SceneBundle,
    config: &IndexConfig,
    provider: &dyn EmbeddingProvider,
    provider_name: &str,
) -> Result<Vec<(ComponentId, String)>, BundleError> {
    let built = build_index(&bundle.scene, config, provider)?;
    bundle.index = (!built.index.components.is_empty()).then_some(built.index);
    bundle.views = built.views;
    bundle.embedding = Some(EmbeddingMeta {
        dimension: provider.dimension(),
        provider: provider_name.to_owned(),
        k: config.k,
        view_count: config.view_count,
        normalize_before_fusion: config.normalize_before_fusion,
    });
    Ok(built
        .failures
        .into_iter()
        .map(|(id, e)| (id, e.to_string()))
        .collect())
}
