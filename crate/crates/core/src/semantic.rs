//! Open-vocabulary component index.
//!
//! Each component gets an object embedding: the mean of its top-entropy
//! frame embeddings, averaged with the embedding of its text label when one
//! exists. Queries are ranked by cosine similarity against every component.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::frame::ImageRGBA;
use crate::raster::Camera;
use crate::splat::{ComponentId, ComposedScene};
use crate::views::{cameras_around, select_top_k_views, ViewError, ViewRig, DEFAULT_TOP_K, NEUTRAL_GRAY, REFERENCE_VIEW_COUNT};

pub const DEFAULT_DIMENSION: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cosine similarity undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("index is empty")]
    EmptyIndex,
    #[error("embedding provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    View(#[from] ViewError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider request timed out")]
    Timeout,
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider returned an invalid response: {0}")]
    InvalidResponse(String),
}

/// A fixed-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self(self.0.iter().map(|v| v / n).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }
}

/// Abstracts a vision-language encoder whose image and text embeddings
/// share one space. Implementations must be deterministic per input.
pub trait EmbeddingProvider: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed_images(&self, frames: &[ImageRGBA]) -> Result<Vec<EmbeddingVector>, ProviderError>;
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

/// Componentwise mean of frame embeddings.
pub fn vision_embedding(frames: &[EmbeddingVector]) -> Result<EmbeddingVector, IndexError> {
    let first = frames
        .first()
        .ok_or_else(|| IndexError::Argument("no frame embeddings".into()))?;
    let dim = first.dim();
    let mut sum = vec![0.0; dim];
    for f in frames {
        if f.dim() != dim {
            return Err(IndexError::DimensionMismatch {
                expected: dim,
                actual: f.dim(),
            });
        }
        for (s, v) in sum.iter_mut().zip(&f.0) {
            *s += v;
        }
    }
    let k = frames.len() as f64;
    Ok(EmbeddingVector(sum.into_iter().map(|s| s / k).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    VisionOnly,
    VisionPlusText,
}

/// `(E_vision + E_text) / 2` when a text embedding exists, else `E_vision`.
pub fn object_embedding(
    vision: &EmbeddingVector,
    text: Option<&EmbeddingVector>,
) -> Result<(EmbeddingVector, EmbeddingSource), IndexError> {
    match text {
        None => Ok((vision.clone(), EmbeddingSource::VisionOnly)),
        Some(t) => {
            if t.dim() != vision.dim() {
                return Err(IndexError::DimensionMismatch {
                    expected: vision.dim(),
                    actual: t.dim(),
                });
            }
            let fused = vision.0.iter().zip(&t.0).map(|(v, t)| (v + t) / 2.0).collect();
            Ok((EmbeddingVector(fused), EmbeddingSource::VisionPlusText))
        }
    }
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, IndexError> {
    if a.dim() != b.dim() {
        return Err(IndexError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(IndexError::ZeroNorm);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticComponent {
    pub component_id: ComponentId,
    pub label: String,
    pub object_embedding: EmbeddingVector,
    pub source: EmbeddingSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticIndex {
    pub dimension: usize,
    pub components: Vec<SemanticComponent>,
    /// Set when some component failed to index.
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMatch {
    pub component: ComponentId,
    pub label: String,
    pub similarity: f64,
}

/// Score every component against `query_text`, highest first, ties by id.
/// Nothing is filtered out.
pub fn query_components(
    index: &SemanticIndex,
    query_text: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<QueryMatch>, IndexError> {
    if index.components.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    let query = provider.embed_text(query_text)?;
    rank_against(index, &query)
}

pub fn rank_against(index: &SemanticIndex, query: &EmbeddingVector) -> Result<Vec<QueryMatch>, IndexError> {
    let mut out = index
        .components
        .iter()
        .map(|c| {
            Ok(QueryMatch {
                component: c.component_id.clone(),
                label: c.label.clone(),
                similarity: cosine_similarity(query, &c.object_embedding)?,
            })
        })
        .collect::<Result<Vec<_>, IndexError>>()?;
    out.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.component.cmp(&b.component))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub k: usize,
    pub view_count: usize,
    pub rig: ViewRig,
    /// L2-normalize vision and text embeddings before fusing them.
    pub normalize_before_fusion: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            view_count: REFERENCE_VIEW_COUNT,
            rig: ViewRig::default(),
            normalize_before_fusion: false,
        }
    }
}

/// A ranked view kept for a component: rank 0 is its best view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedView {
    pub camera: Camera,
    pub entropy: f64,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexBuild {
    pub index: SemanticIndex,
    pub views: BTreeMap<ComponentId, Vec<RankedView>>,
    pub failures: Vec<(ComponentId, IndexError)>,
}

/// Embed a component from already-selected frames and its label.
pub fn embed_component(
    id: &ComponentId,
    label: &str,
    frames: &[ImageRGBA],
    provider: &dyn EmbeddingProvider,
    normalize: bool,
) -> Result<SemanticComponent, IndexError> {
    let frame_embeddings = provider.embed_images(frames)?;
    let mut vision = vision_embedding(&frame_embeddings)?;
    let mut text = if label.trim().is_empty() {
        None
    } else {
        Some(provider.embed_text(label)?)
    };
    if normalize {
        vision = vision.normalized();
        text = text.map(|t| t.normalized());
    }
    let (object_embedding, source) = object_embedding(&vision, text.as_ref())?;
    if object_embedding.dim() != provider.dimension() {
        return Err(IndexError::DimensionMismatch {
            expected: provider.dimension(),
            actual: object_embedding.dim(),
        });
    }
    Ok(SemanticComponent {
        component_id: id.clone(),
        label: label.to_owned(),
        object_embedding,
        source,
    })
}

/// Entropy-guided view selection followed by embedding, per component.
/// A failing component is recorded and skipped; the index is then partial.
pub fn build_index(
    scene: &ComposedScene,
    config: &IndexConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<IndexBuild, IndexError> {
    if config.k < 1 {
        return Err(IndexError::Argument("k must be at least 1".into()));
    }
    let mut components = Vec::new();
    let mut views = BTreeMap::new();
    let mut failures = Vec::new();
    for comp in &scene.components {
        let result = (|| {
            let cameras = cameras_around(&comp.bounding_sphere, config.view_count, &config.rig)?;
            let samples = select_top_k_views(comp, &cameras, config.k)?;
            let frames: Vec<ImageRGBA> = samples.iter().map(|s| s.frame.clone()).collect();
            let entry = embed_component(&comp.id, &comp.label, &frames, provider, config.normalize_before_fusion)?;
            let ranked = samples
                .iter()
                .map(|s| RankedView {
                    camera: s.camera,
                    entropy: s.entropy,
                    frame_index: s.frame_index,
                })
                .collect::<Vec<_>>();
            Ok::<_, IndexError>((entry, ranked))
        })();
        match result {
            Ok((entry, ranked)) => {
                components.push(entry);
                views.insert(comp.id.clone(), ranked);
            }
            Err(e) => failures.push((comp.id.clone(), e)),
        }
    }
    Ok(IndexBuild {
        index: SemanticIndex {
            dimension: provider.dimension(),
            components,
            partial: !failures.is_empty(),
        },
        views,
        failures,
    })
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Deterministic stand-in for a vision-language encoder.
///
/// Text embeds to a Gaussian vector seeded by a hash of its sorted token
/// multiset, L2-normalized. Images embed as the caption whose reference
/// color is closest (by direction) to the frame's mean splat color, which
/// puts images and text in one space the way a real encoder would. With no
/// captions registered, images embed from a hash of their quantized pixels.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub seed: u64,
    pub dimension: usize,
    captions: Vec<([f64; 3], String)>,
}

impl HashEmbedder {
    pub fn new(seed: u64, dimension: usize) -> Self {
        Self {
            seed,
            dimension,
            captions: Vec::new(),
        }
    }

    /// Register captions keyed by reference color.
    pub fn with_captions(mut self, captions: impl IntoIterator<Item = ([f64; 3], String)>) -> Self {
        self.captions.extend(captions);
        self
    }

    /// Captions from every labelled component's palette color.
    pub fn captioning_scene(seed: u64, dimension: usize, scene: &ComposedScene) -> Self {
        Self::new(seed, dimension).with_captions(
            scene
                .components
                .iter()
                .filter(|c| !c.label.trim().is_empty())
                .map(|c| (c.palette_color, c.label.clone())),
        )
    }

    fn vector_from_digest(&self, digest: &[u8]) -> EmbeddingVector {
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        let mut rng = rand_chacha::ChaCha8Rng::from_seed(seed);
        let v: Vec<f64> = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        EmbeddingVector(v).normalized()
    }

    fn hash(&self, kind: &str, payload: &[u8]) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(kind.as_bytes());
        h.update(payload);
        h.finalize().to_vec()
    }

    /// Mean splat color of a frame rendered over [`NEUTRAL_GRAY`].
    fn mean_splat_color(frame: &ImageRGBA) -> Option<[f64; 3]> {
        let mut sum = [0.0; 3];
        let mut coverage = 0.0;
        for p in &frame.pixels {
            let a = p[3] as f64;
            for k in 0..3 {
                sum[k] += p[k] as f64 - (1.0 - a) * NEUTRAL_GRAY[k];
            }
            coverage += a;
        }
        (coverage > 0.0).then(|| sum.map(|s| s / coverage))
    }

    fn caption_for(&self, frame: &ImageRGBA) -> Option<&str> {
        let color = Self::mean_splat_color(frame)?;
        let cn = color.iter().map(|c| c * c).sum::<f64>().sqrt();
        if cn == 0.0 {
            return None;
        }
        self.captions
            .iter()
            .map(|(ref_color, caption)| {
                let rn = ref_color.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
                let cos = (0..3).map(|k| color[k] * ref_color[k]).sum::<f64>() / (cn * rn);
                (cos, caption.as_str())
            })
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, c)| c)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_images(&self, frames: &[ImageRGBA]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        frames
            .iter()
            .map(|f| match self.caption_for(f) {
                Some(caption) => self.embed_text(caption),
                None => Ok(self.vector_from_digest(&self.hash("image", f.to_rgba8().as_raw()))),
            })
            .collect()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut tokens = tokenize(text);
        tokens.sort();
        Ok(self.vector_from_digest(&self.hash("text", tokens.join("\u{0}").as_bytes())))
    }
}

/// Client for a remote embedding endpoint.
///
/// Request: `POST {endpoint}` with `{"kind": "image" | "text", "inputs": [...]}`
/// where images are base64 PNG strings. Response: `{"embeddings": [[f32, ...], ...]}`.
/// Responses are cached on disk keyed by a hash of the request.
pub struct RemoteEmbedder {
    endpoint: String,
    dimension: usize,
    cache_dir: Option<PathBuf>,
    agent: ureq::Agent,
    max_in_flight: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    kind: &'a str,
    inputs: Vec<String>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            dimension,
            cache_dir: None,
            agent,
            max_in_flight: 4,
        }
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    fn request(&self, kind: &str, inputs: Vec<String>) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body = EmbedRequest { kind, inputs };
        let key = {
            let json = serde_json::to_vec(&body).expect("serializable");
            hex::encode(Sha256::digest(&json))
        };
        let cache_path = self.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")));
        if let Some(p) = &cache_path {
            if let Ok(bytes) = std::fs::read(p) {
                if let Ok(resp) = serde_json::from_slice::<EmbedResponse>(&bytes) {
                    return self.check(resp, body.inputs.len());
                }
            }
        }
        let resp = self.agent.post(&self.endpoint).send_json(&body).map_err(map_ureq_error)?;
        let text = resp
            .into_body()
            .read_to_string()
            .map_err(map_ureq_error)?;
        let parsed: EmbedResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        let out = self.check(parsed, body.inputs.len())?;
        if let Some(p) = cache_path {
            if let Some(dir) = p.parent() {
                let _ = std::fs::create_dir_all(dir);
            }
            let _ = crate::frame::write_atomic(&p, text.as_bytes());
        }
        Ok(out)
    }

    fn check(&self, resp: EmbedResponse, expected: usize) -> Result<Vec<EmbeddingVector>, ProviderError> {
        if resp.embeddings.len() != expected {
            return Err(ProviderError::InvalidResponse(format!(
                "expected {expected} embeddings, got {}",
                resp.embeddings.len()
            )));
        }
        resp.embeddings
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    Err(ProviderError::InvalidResponse(format!(
                        "embedding has dimension {}, expected {}",
                        v.len(),
                        self.dimension
                    )))
                } else if v.iter().any(|x| !x.is_finite()) {
                    Err(ProviderError::InvalidResponse("non-finite embedding value".into()))
                } else {
                    Ok(EmbeddingVector(v))
                }
            })
            .collect()
    }
}

pub(crate) fn map_ureq_error(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_images(&self, frames: &[ImageRGBA]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let encoded = frames
            .iter()
            .map(|f| {
                f.encode_png()
                    .map(|png| base64::engine::general_purpose::STANDARD.encode(png))
                    .map_err(|e| ProviderError::InvalidResponse(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        // one image per request, at most `max_in_flight` concurrent
        let mut out = Vec::with_capacity(encoded.len());
        for chunk in encoded.chunks(self.max_in_flight) {
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|img| s.spawn(move || self.request("image", vec![img.clone()])))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("request thread")).collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        Ok(self
            .request("text", vec![text.to_owned()])?
            .pop()
            .expect("checked length"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector(x.to_vec())
    }

    #[test]
    fn vision_embedding_examples() {
        assert_eq!(vision_embedding(&[v(&[1.0, 2.0])]).unwrap(), v(&[1.0, 2.0]));
        assert_eq!(vision_embedding(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap(), v(&[0.5, 0.5]));
        assert!(vision_embedding(&[]).is_err());
        assert!(matches!(
            vision_embedding(&[v(&[1.0]), v(&[1.0, 2.0])]),
            Err(IndexError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn vision_embedding_matches_summation_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vs: Vec<EmbeddingVector> = (0..5)
            .map(|_| EmbeddingVector((0..16).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let mean = vision_embedding(&vs).unwrap();
        for i in 0..16 {
            let mut s = 0.0;
            for x in &vs {
                s += x.0[i];
            }
            assert!((mean.0[i] - s / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn object_embedding_examples() {
        let vis = v(&[1.0, 0.0]);
        assert_eq!(object_embedding(&vis, None).unwrap(), (vis.clone(), EmbeddingSource::VisionOnly));
        let text = v(&[0.0, 1.0]);
        let (fused, src) = object_embedding(&vis, Some(&text)).unwrap();
        assert_eq!(fused, v(&[0.5, 0.5]));
        assert_eq!(src, EmbeddingSource::VisionPlusText);
        assert_eq!(fused, vision_embedding(&[vis.clone(), text]).unwrap());
        assert!(object_embedding(&vis, Some(&v(&[1.0]))).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -1.2, 2.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[2.0, 4.0, 6.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(IndexError::ZeroNorm));
    }

    fn index_of(entries: &[(&str, EmbeddingVector)]) -> SemanticIndex {
        SemanticIndex {
            dimension: entries[0].1.dim(),
            components: entries
                .iter()
                .map(|(id, e)| SemanticComponent {
                    component_id: ComponentId::new(*id),
                    label: id.to_string(),
                    object_embedding: e.clone(),
                    source: EmbeddingSource::VisionOnly,
                })
                .collect(),
            partial: false,
        }
    }

    #[test]
    fn query_ranks_exact_label_first() {
        let p = HashEmbedder::new(11, 64);
        let labels = ["red ball", "blue ball", "storage container"];
        let entries: Vec<_> = labels
            .iter()
            .map(|l| (*l, p.embed_text(l).unwrap()))
            .collect();
        let index = index_of(&entries);
        let ranked = query_components(&index, "storage container", &p).unwrap();
        assert_eq!(ranked.len(), 3);
        assert_eq!(ranked[0].component.as_str(), "storage container");
        assert!((ranked[0].similarity - 1.0).abs() < 1e-12);
        assert!(ranked.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    }

    #[test]
    fn query_ties_break_by_id() {
        let e = v(&[1.0, 0.0]);
        let index = index_of(&[("b", e.clone()), ("a", e.clone())]);
        let ranked = rank_against(&index, &e).unwrap();
        assert_eq!(ranked[0].component.as_str(), "a");
    }

    #[test]
    fn empty_index_rejected() {
        let index = SemanticIndex {
            dimension: 4,
            components: vec![],
            partial: false,
        };
        assert_eq!(query_components(&index, "x", &HashEmbedder::new(0, 4)), Err(IndexError::EmptyIndex));
    }

    #[test]
    fn hash_embedder_is_deterministic_and_token_order_free() {
        let p = HashEmbedder::new(5, 32);
        let a = p.embed_text("Pectoral Fin").unwrap();
        assert_eq!(a, p.embed_text("fin pectoral").unwrap());
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert_ne!(a, HashEmbedder::new(6, 32).embed_text("pectoral fin").unwrap());
    }

    #[test]
    fn captioning_maps_frames_to_nearest_caption() {
        let p = HashEmbedder::new(1, 16)
            .with_captions([([1.0, 0.0, 0.0], "red".to_string()), ([0.0, 0.0, 1.0], "blue".to_string())]);
        // a half-covered reddish pixel over neutral gray
        let a = 0.8f32;
        let px = [0.7 * a + 0.5 * (1.0 - a), 0.1 * a + 0.5 * (1.0 - a), 0.1 * a + 0.5 * (1.0 - a), a];
        let frame = ImageRGBA::from_pixels(1, 1, vec![px]).unwrap();
        let got = p.embed_images(&[frame]).unwrap();
        assert_eq!(got[0], p.embed_text("red").unwrap());
        // transparent frames fall back to pixel hashing
        let empty = ImageRGBA::new(2, 2, [0.5, 0.5, 0.5, 0.0]);
        assert_ne!(p.embed_images(&[empty]).unwrap()[0], p.embed_text("red").unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ranking_is_invariant_to_positive_rescaling(
                vecs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 2..6),
                query in prop::collection::vec(-1.0f64..1.0, 8),
                scales in prop::collection::vec(0.01f64..100.0, 6),
            ) {
                prop_assume!(vecs.iter().all(|v| v.iter().any(|x| x.abs() > 1e-3)));
                prop_assume!(query.iter().any(|x| x.abs() > 1e-3));
                let ids: Vec<String> = (0..vecs.len()).map(|i| format!("c{i}")).collect();
                let entries: Vec<(&str, EmbeddingVector)> = ids.iter().zip(&vecs).map(|(id, v)| (id.as_str(), EmbeddingVector(v.clone()))).collect();
                let scaled: Vec<(&str, EmbeddingVector)> = entries.iter().zip(&scales).map(|((id, v), s)| (*id, v.scaled(*s))).collect();
                let q = EmbeddingVector(query);
                let a = rank_against(&index_of(&entries), &q).unwrap();
                let b = rank_against(&index_of(&scaled), &q).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x.similarity - y.similarity).abs() < 1e-9);
                    prop_assert!((-1.0..=1.0).contains(&x.similarity));
                }
                // same order unless two scores are within rounding of each other
                let distinct = a.windows(2).all(|w| (w[0].similarity - w[1].similarity).abs() > 1e-9);
                if distinct {
                    let ia: Vec<_> = a.iter().map(|m| &m.component).collect();
                    let ib: Vec<_> = b.iter().map(|m| &m.component).collect();
                    prop_assert_eq!(ia, ib);
                }
            }
        }
    }
}
