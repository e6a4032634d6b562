//! Draws door highlight boxes onto a plan raster and re-encodes it as PNG.

use std::collections::BTreeMap;
use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ImageEncoder, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContentDigest, PixelBox};

pub const RED: [u8; 3] = [255, 0, 0];
pub const BASE_STROKE_PX: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxRole {
    Queried,
    Retained,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlaySpec {
    pub boxes: Vec<(PixelBox, BoxRole)>,
    pub stroke_width_px: u32,
    pub colors: BTreeMap<BoxRole, [u8; 3]>,
}

impl OverlaySpec {
    /// Red boxes for both roles, stroke scaled for the image size.
    pub fn for_image(width: u32, height: u32) -> Self {
        Self {
            boxes: Vec::new(),
            stroke_width_px: stroke_for(width, height),
            colors: BTreeMap::from([(BoxRole::Queried, RED), (BoxRole::Retained, RED)]),
        }
    }

    pub fn with_box(mut self, bbox: PixelBox, role: BoxRole) -> Self {
        self.boxes.push((bbox, role));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stroke_width_px == 0 {
            return Err(Error::validation("stroke width must be at least 1px"));
        }
        for (_, role) in &self.boxes {
            if !self.colors.contains_key(role) {
                return Err(Error::validation(format!("no color for role {role:?}")));
            }
        }
        Ok(())
    }
}

/// 3px at native resolution, times `max(1, round(min(w, h) / 640))`.
pub fn stroke_for(width: u32, height: u32) -> u32 {
    let scale = (width.min(height) as f64 / 640.0).round().max(1.0) as u32;
    BASE_STROKE_PX * scale
}

/// An encoded PNG and the hash of its bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedImage {
    pub png: Vec<u8>,
    pub digest: ContentDigest,
}

impl RenderedImage {
    pub fn from_png(png: Vec<u8>) -> Self {
        let digest = ContentDigest::of(&png);
        Self { png, digest }
    }
}

/// A decoded plan raster that can be overlaid repeatedly without decoding
/// the source again.
#[derive(Debug, Clone)]
pub struct Canvas {
    base: RgbImage,
}

impl Canvas {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            base: img.to_rgb8(),
        })
    }

    pub fn from_rgb(base: RgbImage) -> Self {
        Self { base }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.base.dimensions()
    }

    pub fn image(&self) -> &RgbImage {
        &self.base
    }

    /// Unmodified raster, encoded with the same settings as overlays.
    pub fn encode_plain(&self) -> Result<RenderedImage> {
        encode_png(&self.base).map(RenderedImage::from_png)
    }

    pub fn render(&self, spec: &OverlaySpec) -> Result<RenderedImage> {
        spec.validate()?;
        let mut img = self.base.clone();
        let (w, h) = img.dimensions();
        let bounds = PixelBox {
            x_min: 0,
            y_min: 0,
            x_max: w,
            y_max: h,
        };
        for (bbox, role) in &spec.boxes {
            let Some(clamped) = bbox.clamp_to(&bounds) else {
                continue;
            };
            draw_border(
                &mut img,
                &clamped,
                spec.stroke_width_px,
                Rgb(spec.colors[role]),
            );
        }
        encode_png(&img).map(RenderedImage::from_png)
    }
}

/// Decodes `image`, draws `spec` and re-encodes as PNG.
pub fn render_overlay(image: &[u8], spec: &OverlaySpec) -> Result<RenderedImage> {
    Canvas::decode(image)?.render(spec)
}

/// Paints the band of `stroke` pixels just inside the box outline.
fn draw_border(img: &mut RgbImage, b: &PixelBox, stroke: u32, color: Rgb<u8>) {
    for y in b.y_min..b.y_max {
        let edge_row = y - b.y_min < stroke || b.y_max - 1 - y < stroke;
        if edge_row {
            for x in b.x_min..b.x_max {
                img.put_pixel(x, y, color);
            }
        } else {
            let left_end = (b.x_min + stroke).min(b.x_max);
            let right_start = b.x_max.saturating_sub(stroke).max(b.x_min);
            for x in (b.x_min..left_end).chain(right_start.max(left_end)..b.x_max) {
                img.put_pixel(x, y, color);
            }
        }
    }
}

pub(crate) fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(
        Cursor::new(&mut out),
        CompressionType::Fast,
        FilterType::NoFilter,
    )
    .write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out)
}
