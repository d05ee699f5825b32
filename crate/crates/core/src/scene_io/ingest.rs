use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::frame::ImageRGBA;
use crate::raster::Camera;
use crate::semantic::{embed_component, EmbeddingProvider, RankedView, SemanticIndex};
use crate::splat::ComponentId;
use crate::views::{image_alpha_entropy, rank_by_entropy};

use super::bundle::{read_manifest, EmbeddingMeta, FileRef, MANIFEST_FILE};
use super::format::{decode_embedding, encode_embedding, FORMAT_VERSION};
use super::{check_file_stem, BundleError};

/// Pre-rendered, pre-segmented views of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCapture {
    pub id: ComponentId,
    pub label: String,
    pub frames: Vec<ImageRGBA>,
    pub cameras: Vec<Camera>,
}

/// Views, labels and embeddings without primitives; enough for querying.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBundle {
    pub scene_id: String,
    pub labels: BTreeMap<ComponentId, String>,
    pub views: BTreeMap<ComponentId, Vec<RankedView>>,
    pub index: SemanticIndex,
    pub embedding: EmbeddingMeta,
}

/// Entropy-rank the supplied frames of every component and embed the top `k`.
pub fn ingest_multiview(
    scene_id: &str,
    captures: &[ComponentCapture],
    k: usize,
    provider: &dyn EmbeddingProvider,
    provider_name: &str,
) -> Result<QueryBundle, BundleError> {
    if k < 1 {
        return Err(BundleError::Argument("k must be at least 1".into()));
    }
    if captures.is_empty() {
        return Err(BundleError::Argument("no components to ingest".into()));
    }
    let mut labels = BTreeMap::new();
    let mut views = BTreeMap::new();
    let mut components = Vec::new();
    for c in captures {
        check_file_stem(c.id.as_str())?;
        if c.frames.is_empty() {
            return Err(BundleError::Argument(format!("component {} has no frames", c.id)));
        }
        if c.frames.len() != c.cameras.len() {
            return Err(BundleError::Argument(format!(
                "component {}: {} frames but {} camera poses",
                c.id,
                c.frames.len(),
                c.cameras.len()
            )));
        }
        for (i, cam) in c.cameras.iter().enumerate() {
            cam.validate()
                .map_err(|e| BundleError::Argument(format!("component {} pose {i}: {e}", c.id)))?;
        }
        if labels.insert(c.id.clone(), c.label.clone()).is_some() {
            return Err(BundleError::Argument(format!("component {} ingested twice", c.id)));
        }
        let entropies: Vec<f64> = c.frames.iter().map(image_alpha_entropy).collect();
        let order = rank_by_entropy(&entropies, k);
        let top: Vec<ImageRGBA> = order.iter().map(|&i| c.frames[i].clone()).collect();
        components.push(embed_component(&c.id, &c.label, &top, provider, false)?);
        views.insert(
            c.id.clone(),
            order
                .iter()
                .map(|&i| RankedView {
                    camera: c.cameras[i],
                    entropy: entropies[i],
                    frame_index: i,
                })
                .collect(),
        );
    }
    Ok(QueryBundle {
        scene_id: scene_id.to_owned(),
        labels,
        views,
        index: SemanticIndex {
            dimension: provider.dimension(),
            components,
            partial: false,
        },
        embedding: EmbeddingMeta {
            dimension: provider.dimension(),
            provider: provider_name.to_owned(),
            k,
            view_count: captures.iter().map(|c| c.frames.len()).max().unwrap_or(0),
            normalize_before_fusion: false,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryManifest {
    format_version: u32,
    kind: String,
    scene_id: String,
    components: Vec<QueryComponent>,
    embedding: EmbeddingMeta,
    views: BTreeMap<ComponentId, Vec<RankedView>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryComponent {
    id: ComponentId,
    label: String,
    embedding: FileRef,
    embedding_source: crate::semantic::EmbeddingSource,
}

const QUERY_KIND: &str = "query_only";

pub fn save_query_bundle(bundle: &QueryBundle, dir: &Path) -> Result<(), BundleError> {
    let emb_dir = dir.join("embeddings");
    fs::create_dir_all(&emb_dir).map_err(|source| BundleError::Io {
        path: emb_dir.display().to_string(),
        source,
    })?;
    let mut components = Vec::new();
    for c in &bundle.index.components {
        let rel = format!("embeddings/{}.vec", c.component_id);
        let bytes = encode_embedding(&c.object_embedding);
        crate::frame::write_atomic(&dir.join(&rel), &bytes)?;
        components.push(QueryComponent {
            id: c.component_id.clone(),
            label: c.label.clone(),
            embedding: FileRef {
                path: rel,
                sha256: hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes)),
            },
            embedding_source: c.source,
        });
    }
    let manifest = QueryManifest {
        format_version: FORMAT_VERSION,
        kind: QUERY_KIND.into(),
        scene_id: bundle.scene_id.clone(),
        components,
        embedding: bundle.embedding.clone(),
        views: bundle.views.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("serializable");
    crate::frame::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(())
}

pub fn load_query_bundle(dir: &Path) -> Result<QueryBundle, BundleError> {
    let m: QueryManifest = read_manifest(dir)?;
    if m.kind != QUERY_KIND || m.format_version != FORMAT_VERSION {
        return Err(BundleError::Manifest {
            file: MANIFEST_FILE.into(),
            message: format!("not a version {FORMAT_VERSION} query-only bundle"),
        });
    }
    let mut labels = BTreeMap::new();
    let mut components = Vec::new();
    for c in &m.components {
        check_file_stem(c.id.as_str())?;
        let path = dir.join(&c.embedding.path);
        let bytes = fs::read(&path).map_err(|source| BundleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let actual = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes));
        if actual != c.embedding.sha256 {
            return Err(BundleError::Checksum {
                file: c.embedding.path.clone(),
                expected: c.embedding.sha256.clone(),
                actual,
            });
        }
        labels.insert(c.id.clone(), c.label.clone());
        components.push(crate::semantic::SemanticComponent {
            component_id: c.id.clone(),
            label: c.label.clone(),
            object_embedding: decode_embedding(&bytes, &c.embedding.path)?,
            source: c.embedding_source,
        });
    }
    Ok(QueryBundle {
        scene_id: m.scene_id,
        labels,
        views: m.views,
        index: SemanticIndex {
            dimension: m.embedding.dimension,
            components,
            partial: false,
        },
        embedding: m.embedding,
    })
}
