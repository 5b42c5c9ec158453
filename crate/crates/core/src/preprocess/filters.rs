use super::raster::RasterImage;

/// Bilinear resampling with half-pixel-centred sample positions. Equal
/// extents return an exact copy.
pub fn resize_bilinear(img: &RasterImage, out_w: usize, out_h: usize) -> RasterImage {
    assert!(out_w > 0 && out_h > 0, "output extents must be positive");
    if out_w == img.width() && out_h == img.height() {
        return img.clone();
    }
    let xs = taps(img.width(), out_w);
    let ys = taps(img.height(), out_h);
    let src = img.pixels();
    let w = img.width();
    let mut pixels = Vec::with_capacity(3 * out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let p = |x: usize, y: usize| src[3 * (y * w + x) + c] as f32;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RasterImage::new(out_w, out_h, pixels).expect("extents are positive")
}

/// Source neighbours and blend weight for every output coordinate.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, (s - i0 as f64) as f32)
        })
        .collect()
}

/// Border index for reflection without repeating the edge sample
/// (`gfedcb|abcdefgh|gfedcba`).
pub(crate) fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalized Gaussian taps truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur, rounded back to 8 bits.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let src = img.pixels();

    let mut horizontal = vec![0.0f64; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, &wt) in kernel.iter().enumerate() {
                let sx = reflect101(x as isize + k as isize - radius, w);
                let i = 3 * (y * w + sx);
                for c in 0..3 {
                    acc[c] += wt * src[i + c] as f64;
                }
            }
            horizontal[3 * (y * w + x)..][..3].copy_from_slice(&acc);
        }
    }

    let mut pixels = vec![0u8; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for (k, &wt) in kernel.iter().enumerate() {
                let sy = reflect101(y as isize + k as isize - radius, h);
                let i = 3 * (sy * w + x);
                for c in 0..3 {
                    acc[c] += wt * horizontal[i + c];
                }
            }
            for c in 0..3 {
                pixels[3 * (y * w + x) + c] = acc[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RasterImage::new(w, h, pixels).expect("same extents as input")
}
