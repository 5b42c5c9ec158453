//! Seeded procedural fundus-like images for tests, demos and fixtures.
//!
//! Each image is a shaded orange disk on black with an optic disc; higher
//! stages add more bright exudate spots and dark haemorrhage blots.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{image_tensor, scan_directory, DatasetIndex, LabeledSet, Rescale, NUM_STAGES};
use crate::error::{Error, Result};
use crate::preprocess::RasterImage;
use crate::tensor::Tensor;

struct Spot {
    x: f64,
    y: f64,
    r: f64,
    rgb: [f64; 3],
}

/// A `size`x`size` synthetic fundus image of the given stage (0..=4).
pub fn synthetic_fundus(size: usize, stage: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage as u64);
    let s = size as f64;
    let cx = s / 2.0 + rng.gen_range(-0.02..0.02) * s;
    let cy = s / 2.0 + rng.gen_range(-0.02..0.02) * s;
    let radius = rng.gen_range(0.42..0.46) * s;
    let base = [
        rng.gen_range(180.0..210.0),
        rng.gen_range(80.0..100.0),
        rng.gen_range(40.0..55.0),
    ];

    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut spots = vec![Spot {
        x: cx + side * 0.45 * radius,
        y: cy + rng.gen_range(-0.1..0.1) * radius,
        r: 0.12 * radius,
        rgb: [245.0, 220.0, 150.0],
    }];
    let lesion = |rng: &mut ChaCha8Rng, rgb: [f64; 3]| {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        let d = rng.gen_range(0.0..0.75) * radius;
        Spot {
            x: cx + d * a.cos(),
            y: cy + d * a.sin(),
            r: rng.gen_range(0.035..0.06) * s,
            rgb,
        }
    };
    for _ in 0..6 * stage {
        spots.push(lesion(&mut rng, [250.0, 235.0, 120.0]));
    }
    for _ in 0..4 * stage {
        spots.push(lesion(&mut rng, [90.0, 20.0, 10.0]));
    }

    let noise: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-6.0..6.0)).collect();
    RasterImage::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let d2 = (px - cx).powi(2) + (py - cy).powi(2);
        if d2 > radius * radius {
            return [0, 0, 0];
        }
        let shade = 1.0 - 0.35 * d2 / (radius * radius);
        let mut rgb = base.map(|c| c * shade);
        for spot in &spots {
            if (px - spot.x).powi(2) + (py - spot.y).powi(2) <= spot.r * spot.r {
                rgb = spot.rgb;
            }
        }
        let n = noise[y * size + x];
        rgb.map(|c| (c + n).round().clamp(0.0, 255.0) as u8)
    })
}

/// Writes `root/{0..4}/stage{k}_{i}.png`, `per_class` images per stage, and
/// returns the resulting index.
pub fn write_fixture_tree(root: &Path, per_class: usize, size: usize, seed: u64) -> Result<DatasetIndex> {
    for stage in 0..NUM_STAGES {
        let dir = root.join(stage.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let img = synthetic_fundus(size, stage, seed.wrapping_add(1000 * i as u64));
            img.save_png(&dir.join(format!("stage{stage}_{i:03}.png")))?;
        }
    }
    scan_directory(root)
}

/// `n` images alternating between a healthy (label 0) and a heavily
/// lesioned (label 1) fundus, as raw 0..=255 tensors.
pub fn two_class_set(n: usize, size: usize, seed: u64) -> Result<LabeledSet> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let stage = if label == 0 { 0 } else { 4 };
        let img = synthetic_fundus(size, stage, seed.wrapping_add(i as u64));
        images.push(image_tensor(&img, (size, size), Rescale::None));
        labels.push(label);
    }
    LabeledSet::new(Tensor::stack_batch(&images)?, labels, 2)
}
