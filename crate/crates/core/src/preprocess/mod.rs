//! Fundus photograph normalization: black-border crop, radius rescale,
//! local-average subtraction, circular mask, and a final crop.

mod filters;
mod raster;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filters::{gaussian_blur, gaussian_kernel, resize_bilinear};
pub use raster::{GrayImage, RasterImage};

/// How the far edge of the foreground bounding box is treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropRule {
    /// `[min, max)`: the last foreground row and column are dropped.
    #[default]
    SourceExclusive,
    /// `[min, max]`: the tight bounding box.
    Inclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Target retina radius in pixels.
    pub scale: f32,
    /// Grayscale values strictly above this count as foreground.
    pub black_threshold: u8,
    pub mask_fraction: f32,
    /// Square edge the first crop is resized to.
    pub intermediate_size: usize,
    /// Baseline added after local-average subtraction.
    pub fill_value: u8,
    pub crop_rule: CropRule,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            scale: 300.0,
            black_threshold: 50,
            mask_fraction: 0.9,
            intermediate_size: 512,
            fill_value: 128,
            crop_rule: CropRule::SourceExclusive,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mask_fraction.is_nan() || self.mask_fraction <= 0.0 || self.mask_fraction > 1.0 {
            return Err(Error::config(format!(
                "mask_fraction must lie in (0, 1], got {}",
                self.mask_fraction
            )));
        }
        if !self.scale.is_finite() || self.scale < 1.0 {
            return Err(Error::config(format!("scale must be >= 1, got {}", self.scale)));
        }
        if self.intermediate_size == 0 {
            return Err(Error::config("intermediate_size must be positive"));
        }
        Ok(())
    }
}

fn luma(p: &[u8]) -> u8 {
    let v = 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32;
    v.round().clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(img: &RasterImage) -> GrayImage {
    GrayImage {
        width: img.width(),
        height: img.height(),
        values: img.pixels().chunks(3).map(luma).collect(),
    }
}

/// Inclusive bounding box `(x0, y0, x1, y1)` of pixels brighter than `threshold`.
fn foreground_bbox(gray: &GrayImage, threshold: u8) -> Option<(usize, usize, usize, usize)> {
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for y in 0..gray.height {
        for x in 0..gray.width {
            if gray.get(x, y) > threshold {
                bbox = Some(match bbox {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
    }
    bbox
}

/// Crops to the foreground bounding box using the source's exclusive far edge.
pub fn crop_nonblack(img: &RasterImage, threshold: u8) -> Result<RasterImage> {
    crop_nonblack_with(img, threshold, CropRule::SourceExclusive)
}

/// Under [`CropRule::SourceExclusive`] a box one pixel thick on an axis
/// keeps that single row or column rather than collapsing to nothing.
pub fn crop_nonblack_with(img: &RasterImage, threshold: u8, rule: CropRule) -> Result<RasterImage> {
    let gray = to_grayscale(img);
    let (x0, y0, x1, y1) = foreground_bbox(&gray, threshold).ok_or(Error::NoForeground)?;
    let (w, h) = match rule {
        CropRule::Inclusive => (x1 - x0 + 1, y1 - y0 + 1),
        CropRule::SourceExclusive => ((x1 - x0).max(1), (y1 - y0).max(1)),
    };
    img.crop(x0, y0, w, h)
}

/// Half the number of columns in the middle row whose channel sum exceeds a
/// tenth of the row mean.
pub fn estimate_radius(img: &RasterImage) -> Result<f32> {
    let row = img.row(img.height() / 2);
    let sums: Vec<u32> = row
        .chunks(3)
        .map(|p| p.iter().map(|&v| v as u32).sum())
        .collect();
    let mean = sums.iter().map(|&v| v as f64).sum::<f64>() / sums.len() as f64;
    let count = sums.iter().filter(|&&v| v as f64 > mean / 10.0).count();
    if count == 0 {
        return Err(Error::DegenerateRadius);
    }
    Ok(count as f32 / 2.0)
}

/// Rescales so the estimated radius becomes `scale`.
pub fn scale_radius(img: &RasterImage, scale: f32) -> Result<RasterImage> {
    let r = estimate_radius(img)?;
    let s = scale as f64 / r as f64;
    let extent = |e: usize| ((e as f64 * s).round() as usize).max(1);
    Ok(resize_bilinear(img, extent(img.width()), extent(img.height())))
}

/// `clamp(4 img - 4 blur(img) + 128)` with blur sigma `scale / 30`.
pub fn subtract_local_average(img: &RasterImage, scale: f32) -> RasterImage {
    subtract_local_average_with(img, scale, 128)
}

pub fn subtract_local_average_with(img: &RasterImage, scale: f32, baseline: u8) -> RasterImage {
    let blur = gaussian_blur(img, scale as f64 / 30.0);
    let pixels = img
        .pixels()
        .iter()
        .zip(blur.pixels())
        .map(|(&x, &b)| (4 * x as i32 - 4 * b as i32 + baseline as i32).clamp(0, 255) as u8)
        .collect();
    RasterImage::new(img.width(), img.height(), pixels).expect("same extents as input")
}

/// Zeroes every pixel farther than `floor(scale * fraction)` from the centre.
pub fn circular_mask(img: &RasterImage, scale: f32, fraction: f32) -> RasterImage {
    let r = (scale * fraction).floor() as i64;
    let (cx, cy) = ((img.width() / 2) as i64, (img.height() / 2) as i64);
    let mut out = img.clone();
    for y in 0..img.height() {
        let dy = y as i64 - cy;
        for x in 0..img.width() {
            let dx = x as i64 - cx;
            if dx * dx + dy * dy > r * r {
                out.set(x, y, [0, 0, 0]);
            }
        }
    }
    out
}

fn has_foreground(gray: &GrayImage, threshold: u8, xs: std::ops::Range<usize>, ys: std::ops::Range<usize>) -> bool {
    ys.into_iter()
        .any(|y| xs.clone().any(|x| gray.get(x, y) > threshold))
}

/// Peels border rows and columns that hold no foreground pixel.
fn trim_dark_borders(img: RasterImage, threshold: u8) -> Result<RasterImage> {
    let gray = to_grayscale(&img);
    let (mut x0, mut y0, mut x1, mut y1) = (0, 0, img.width(), img.height());
    loop {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::NoForeground);
        }
        if !has_foreground(&gray, threshold, x0..x1, y0..y0 + 1) {
            y0 += 1;
        } else if !has_foreground(&gray, threshold, x0..x1, y1 - 1..y1) {
            y1 -= 1;
        } else if !has_foreground(&gray, threshold, x0..x0 + 1, y0..y1) {
            x0 += 1;
        } else if !has_foreground(&gray, threshold, x1 - 1..x1, y0..y1) {
            x1 -= 1;
        } else {
            break;
        }
    }
    if (x0, y0, x1, y1) == (0, 0, img.width(), img.height()) {
        return Ok(img);
    }
    img.crop(x0, y0, x1 - x0, y1 - y0)
}

/// Full normalization pipeline. Every border row and column of the result
/// holds at least one pixel above the black threshold.
pub fn preprocess_fundus(img: &RasterImage, cfg: &PreprocessConfig) -> Result<RasterImage> {
    cfg.validate()?;
    let thr = cfg.black_threshold;
    let cropped = crop_nonblack_with(img, thr, cfg.crop_rule)?;
    let square = resize_bilinear(&cropped, cfg.intermediate_size, cfg.intermediate_size);
    let scaled = scale_radius(&square, cfg.scale)?;
    let flattened = subtract_local_average_with(&scaled, cfg.scale, cfg.fill_value);
    let masked = circular_mask(&flattened, cfg.scale, cfg.mask_fraction);
    let recropped = crop_nonblack_with(&masked, thr, cfg.crop_rule)?;
    trim_dark_borders(recropped, thr)
}
