//! RGBA framebuffers and PNG encoding.

use std::io;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Rgba, RgbaImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame size {width}x{height} does not match {len} pixels")]
    SizeMismatch { width: u32, height: u32, len: usize },
    #[error("png encoding failed: {0}")]
    Encode(String),
    #[error("png decoding failed: {0}")]
    Decode(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Row-major RGBA image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGBA {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f32; 4]>,
}

impl ImageRGBA {
    pub fn new(width: u32, height: u32, fill: [f32; 4]) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width as usize * height as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<[f32; 4]>) -> Result<Self, FrameError> {
        if pixels.len() != width as usize * height as usize {
            return Err(FrameError::SizeMismatch {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn get(&self, x: u32, y: u32) -> [f32; 4] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn alpha(&self) -> impl Iterator<Item = f32> + Clone + '_ {
        self.pixels.iter().map(|p| p[3])
    }

    /// Same colors with full alpha. Frames are already composited over the
    /// background, so this is what a viewer should display.
    pub fn opaque(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&[r, g, b, _]| [r, g, b, 1.0]).collect(),
        }
    }

    /// Quantize to 8 bits per channel (round to nearest).
    pub fn to_rgba8(&self) -> RgbaImage {
        let raw = self
            .pixels
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        RgbaImage::from_raw(self.width, self.height, raw).expect("buffer length matches dimensions")
    }

    pub fn from_rgba8(img: &RgbaImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            pixels: img.pixels().map(|p| p.0.map(|c| c as f32 / 255.0)).collect(),
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, FrameError> {
        let mut out = io::Cursor::new(Vec::new());
        self.to_rgba8()
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| FrameError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Box-filter downscale so that neither side exceeds `max_side`.
    pub fn downscale_to_fit(&self, max_side: u32) -> ImageRGBA {
        if self.width <= max_side && self.height <= max_side {
            return self.clone();
        }
        let buf: ImageBuffer<Rgba<f32>, Vec<f32>> = ImageBuffer::from_raw(
            self.width,
            self.height,
            self.pixels.iter().flatten().copied().collect(),
        )
        .expect("buffer length matches dimensions");
        let scale = max_side as f64 / self.width.max(self.height) as f64;
        let w = ((self.width as f64 * scale).round() as u32).max(1);
        let h = ((self.height as f64 * scale).round() as u32).max(1);
        let small = image::imageops::resize(&buf, w, h, image::imageops::FilterType::Triangle);
        ImageRGBA {
            width: w,
            height: h,
            pixels: small
                .pixels()
                .map(|p| p.0.map(|c| c.clamp(0.0, 1.0)))
                .collect(),
        }
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbaImage, FrameError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map(|img| img.to_rgba8())
        .map_err(|e| FrameError::Decode(e.to_string()))
}

/// Write `bytes` to `path` through a temporary file in the same directory,
/// then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FrameError> {
    let io_err = |source| FrameError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    io::Write::write_all(&mut tmp, bytes).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Save a frame as a lossless 8-bit RGBA PNG.
pub fn save_image(frame: &ImageRGBA, path: &Path) -> Result<(), FrameError> {
    let png = frame.encode_png()?;
    write_atomic(path, &png)
}
