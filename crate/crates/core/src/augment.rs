//! Flip / rotate augmentation pipeline used to expand small image classes.
//!
//! Each output draws a source uniformly with replacement, flips it
//! horizontally with probability `p_flip`, then rotates it about the image
//! center by a uniform angle with probability `p_rotate`. All random draws
//! are taken up front from one seeded stream, so outputs can be rendered in
//! parallel and still be bit-identical across runs.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_ROTATION_DEG: f64 = 90.0;

/// Row-major image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "{channels} channels, expected 1 or 3"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-sized image".into()));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "{} pixel values for a {width}x{height}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    fn same_shape(&self) -> Self {
        Self {
            pixels: vec![0.0; self.pixels.len()],
            ..*self
        }
    }
}

/// Value used where a rotated canvas is not covered by the source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    #[default]
    Black,
    /// Nearest source pixel on the border.
    Edge,
}

/// Column `j` maps to column `width - 1 - j`.
pub fn flip_horizontal(img: &RasterImage) -> RasterImage {
    let mut out = img.same_shape();
    let (w, c) = (img.width, img.channels);
    for (src_row, dst_row) in img
        .pixels
        .chunks_exact(w * c)
        .zip(out.pixels.chunks_exact_mut(w * c))
    {
        for x in 0..w {
            let s = x * c;
            let d = (w - 1 - x) * c;
            dst_row[d..d + c].copy_from_slice(&src_row[s..s + c]);
        }
    }
    out
}

/// Rotates about the image center with bilinear interpolation onto a canvas
/// of the same size.
///
/// Coordinates are `(x = column, y = row)` with `y` pointing down, so a
/// positive angle turns the picture clockwise on screen: the pixel at the
/// top-center moves to the right-center under +90 deg.
pub fn rotate(img: &RasterImage, angle_deg: f64, fill: Fill) -> Result<RasterImage> {
    if !angle_deg.is_finite() || angle_deg.abs() > MAX_ROTATION_DEG {
        return Err(Error::AngleOutOfRange(angle_deg));
    }
    if angle_deg == 0.0 {
        return Ok(img.clone());
    }
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let mut out = img.same_shape();
    for y in 0..img.height {
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse map: rotate the destination offset by -angle
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            for c in 0..img.channels {
                out.set(x, y, c, bilinear(img, sx, sy, c, fill));
            }
        }
    }
    Ok(out)
}

fn bilinear(img: &RasterImage, sx: f64, sy: f64, c: usize, fill: Fill) -> f32 {
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let fetch = |x: f64, y: f64| -> f64 {
        let inside = x >= 0.0 && y >= 0.0 && x < img.width as f64 && y < img.height as f64;
        match (inside, fill) {
            (true, _) => f64::from(img.get(x as usize, y as usize, c)),
            (false, Fill::Black) => 0.0,
            (false, Fill::Edge) => {
                let xi = x.clamp(0.0, img.width as f64 - 1.0) as usize;
                let yi = y.clamp(0.0, img.height as f64 - 1.0) as usize;
                f64::from(img.get(xi, yi, c))
            }
        }
    };
    // lerp form keeps constant neighborhoods exact
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let top = lerp(fetch(x0, y0), fetch(x0 + 1.0, y0), fx);
    let bottom = lerp(fetch(x0, y0 + 1.0), fetch(x0 + 1.0, y0 + 1.0), fx);
    (lerp(top, bottom, fy) as f32).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPipelineConfig {
    pub p_flip: f64,
    pub p_rotate: f64,
    pub angle_range_deg: (f64, f64),
    pub fill: Fill,
    pub seed: u64,
}

impl Default for AugmentPipelineConfig {
    fn default() -> Self {
        Self {
            p_flip: 0.8,
            p_rotate: 0.7,
            angle_range_deg: (-10.0, 10.0),
            fill: Fill::Black,
            seed: 0,
        }
    }
}

impl AugmentPipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_flip) || !prob(self.p_rotate) {
            return Err(Error::InvalidConfig(
                "probabilities must lie in [0, 1]".into(),
            ));
        }
        let (lo, hi) = self.angle_range_deg;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "angle range ({lo}, {hi}) has lo > hi"
            )));
        }
        if lo.abs() > MAX_ROTATION_DEG || hi.abs() > MAX_ROTATION_DEG {
            return Err(Error::AngleOutOfRange(if lo.abs() > hi.abs() {
                lo
            } else {
                hi
            }));
        }
        Ok(())
    }
}

/// Pre-assigned random choices for one output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub source: usize,
    pub flip: bool,
    /// `Some(angle)` when the rotation step fires.
    pub angle_deg: Option<f64>,
}

/// Draws the per-output operations for `target` outputs. Every output
/// consumes the same four values from the stream whether or not an
/// operation fires.
pub fn plan(
    n_sources: usize,
    target: usize,
    cfg: &AugmentPipelineConfig,
) -> Result<Vec<AugmentDraw>> {
    cfg.validate()?;
    if n_sources == 0 {
        return Err(Error::EmptySources);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.angle_range_deg;
    Ok((0..target)
        .map(|_| {
            let source = rng.random_range(0..n_sources);
            let flip = rng.random::<f64>() < cfg.p_flip;
            let rotate = rng.random::<f64>() < cfg.p_rotate;
            let angle = lo + (hi - lo) * rng.random::<f64>();
            AugmentDraw {
                source,
                flip,
                angle_deg: rotate.then_some(angle),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedImage {
    pub id: String,
    pub image: RasterImage,
    pub parent_id: String,
    pub flipped: bool,
    pub angle_deg: Option<f64>,
}

/// Emits exactly `target` augmented images drawn from `sources`.
pub fn expand(
    sources: &[(String, RasterImage)],
    target: usize,
    cfg: &AugmentPipelineConfig,
) -> Result<Vec<AugmentedImage>> {
    let draws = plan(sources.len(), target, cfg)?;
    draws
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let (parent, src) = &sources[d.source];
            let mut image = if d.flip {
                flip_horizontal(src)
            } else {
                src.clone()
            };
            if let Some(angle) = d.angle_deg {
                image = rotate(&image, angle, cfg.fill)?;
            }
            Ok(AugmentedImage {
                id: format!("{parent}_aug{i:06}"),
                image,
                parent_id: parent.clone(),
                flipped: d.flip,
                angle_deg: d.angle_deg,
            })
        })
        .collect()
}

/// `output_id<TAB>parent_id<TAB>flipped<TAB>angle_deg` lines; the angle is
/// `-` when no rotation was applied.
pub fn provenance_tsv(outputs: &[AugmentedImage]) -> String {
    outputs
        .iter()
        .map(|o| {
            let angle = o
                .angle_deg
                .map_or_else(|| "-".to_owned(), |a| format!("{a:.6}"));
            format!(
                "{}\t{}\t{}\t{}\n",
                o.id,
                o.parent_id,
                u8::from(o.flipped),
                angle
            )
        })
        .collect()
}

/// Loads an 8-bit grayscale or RGB PNG. Alpha is discarded and 16-bit
/// samples are reduced to 8 bits.
pub fn load_png(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let bad = |m: String| Error::InvalidImage(format!("{}: {m}", path.display()));
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| bad("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| bad(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = info.color_type.samples();
    let channels = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        png::ColorType::Rgb | png::ColorType::Rgba => 3,
        other => return Err(bad(format!("unsupported color type {other:?}"))),
    };
    let mut pixels = Vec::with_capacity(w * h * channels);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        for px in row[..w * src_channels].chunks_exact(src_channels) {
            pixels.extend(px[..channels].iter().map(|&b| f32::from(b) / 255.0));
        }
    }
    RasterImage::new(w, h, channels, pixels)
}

/// Writes an 8-bit grayscale or RGB PNG, rounding to the nearest level.
pub fn save_png(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    encoder.set_color(if img.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let bad = |e: png::EncodingError| Error::InvalidImage(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(bad)?;
    writer.write_image_data(&bytes).map_err(bad)?;
    writer.finish().map_err(bad)
}
