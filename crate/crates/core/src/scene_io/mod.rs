//! Scene bundles on disk, synthetic fixtures and multi-view ingestion.
//!
//! Layout of a bundle directory:
//!
//! ```text
//! manifest.json
//! components/<id>.gsplat
//! embeddings/<id>.vec      (optional)
//! knowledge.json           (optional)
//! golden.png               (optional)
//! ```

use std::io;

use thiserror::Error;

use crate::frame::FrameError;
use crate::raster::RenderError;
use crate::semantic::IndexError;
use crate::splat::SceneError;

mod bundle;
pub mod format;
mod ingest;
mod synth;

pub use bundle::{
    default_camera, index_bundle, load_scene_bundle, save_scene_bundle, BundleDefaults, EmbeddingMeta, FileRef,
    KnowledgeEntry, Manifest, ManifestComponent, SceneBundle, MANIFEST_FILE,
};
pub use ingest::{ingest_multiview, load_query_bundle, save_query_bundle, ComponentCapture, QueryBundle};
pub use synth::{generate_synthetic_scene, sample_shape, Shape, ShadingSpec, ShapeSpec, SynthSpec};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{file} at byte {offset}: {message}")]
    Format { file: String, offset: u64, message: String },
    #[error("{file}: checksum mismatch (manifest {expected}, actual {actual})")]
    Checksum { file: String, expected: String, actual: String },
    #[error("{file}: {message}")]
    Manifest { file: String, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

pub(crate) fn json_error(file: &str, text: &str, e: serde_json::Error) -> BundleError {
    let line_start: usize = text.split_inclusive('\n').take(e.line().saturating_sub(1)).map(str::len).sum();
    BundleError::Format {
        file: file.to_owned(),
        offset: (line_start + e.column().saturating_sub(1)).min(text.len()) as u64,
        message: e.to_string(),
    }
}

/// Component ids double as file stems.
pub(crate) fn check_file_stem(id: &str) -> Result<(), BundleError> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && !id.chars().any(|c| matches!(c, '/' | '\\' | '\0') || c.is_control());
    if ok {
        Ok(())
    } else {
        Err(BundleError::Argument(format!("component id {id:?} is not usable as a file name")))
    }
}
