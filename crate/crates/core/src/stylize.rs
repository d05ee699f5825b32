//! 2D stylization of rendered frames.

use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::frame::{decode_png, ImageRGBA};
use crate::semantic::{map_ureq_error, ProviderError};

pub trait Stylizer: Send + Sync {
    /// Return an image of the same size as `frame`.
    fn stylize(&self, frame: &ImageRGBA, prompt: &str) -> Result<ImageRGBA, ProviderError>;
}

/// Deterministic stand-in: blends color toward a tint derived from the
/// prompt and posterizes to a few levels. Alpha is kept.
#[derive(Debug, Clone, Copy, Default)]
pub struct TintStylizer;

impl TintStylizer {
    pub fn tint(prompt: &str) -> [f32; 3] {
        let d = Sha256::digest(prompt.trim().to_lowercase().as_bytes());
        [d[0], d[1], d[2]].map(|b| b as f32 / 255.0)
    }
}

impl Stylizer for TintStylizer {
    fn stylize(&self, frame: &ImageRGBA, prompt: &str) -> Result<ImageRGBA, ProviderError> {
        let tint = Self::tint(prompt);
        let levels = 4.0f32;
        let pixels = frame
            .pixels
            .iter()
            .map(|p| {
                let mut out = *p;
                for k in 0..3 {
                    let mixed = 0.5 * p[k] + 0.5 * tint[k];
                    out[k] = (mixed * levels).round() / levels;
                }
                out
            })
            .collect();
        Ok(ImageRGBA {
            width: frame.width,
            height: frame.height,
            pixels,
        })
    }
}

/// Client for an image-edit endpoint: `POST {"image": <base64 png>, "prompt": ...}`
/// answered by `{"image": <base64 png>}`.
pub struct RemoteStylizer {
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct StylizeRequest<'a> {
    image: String,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct StylizeResponse {
    image: String,
}

impl RemoteStylizer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(true)
                .build()
                .into(),
        }
    }
}

impl Stylizer for RemoteStylizer {
    fn stylize(&self, frame: &ImageRGBA, prompt: &str) -> Result<ImageRGBA, ProviderError> {
        let b64 = base64::engine::general_purpose::STANDARD;
        let png = frame
            .encode_png()
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        let body = StylizeRequest {
            image: b64.encode(png),
            prompt,
        };
        let resp: StylizeResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(map_ureq_error)?
            .into_body()
            .read_json()
            .map_err(map_ureq_error)?;
        let bytes = b64
            .decode(resp.image.as_bytes())
            .map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        let img = decode_png(&bytes).map_err(|e| ProviderError::InvalidResponse(e.to_string()))?;
        if img.width() != frame.width || img.height() != frame.height {
            return Err(ProviderError::InvalidResponse(format!(
                "stylized image is {}x{}, expected {}x{}",
                img.width(),
                img.height(),
                frame.width,
                frame.height
            )));
        }
        Ok(ImageRGBA::from_rgba8(&img))
    }
}

/// `base` where `mask` alpha is zero, `styled` where it is one, blended between.
pub fn masked_composite(base: &ImageRGBA, styled: &ImageRGBA, mask: &ImageRGBA) -> ImageRGBA {
    let pixels = base
        .pixels
        .iter()
        .zip(&styled.pixels)
        .zip(&mask.pixels)
        .map(|((b, s), m)| {
            let a = m[3];
            [0, 1, 2, 3].map(|k| b[k] * (1.0 - a) + s[k] * a)
        })
        .collect();
    ImageRGBA {
        width: base.width,
        height: base.height,
        pixels,
    }
}
