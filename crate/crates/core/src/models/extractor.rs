use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::gemm::gemm;
use crate::tensor::Tensor;

/// A frozen image-to-feature mapping with a fixed output width.
pub trait FeatureExtractor: Send + Sync {
    fn feature_dim(&self) -> usize;
    /// Canonical identification of the backbone and its configuration.
    fn descriptor(&self) -> String;
    /// `[n, h, w, c]` images to `[n, feature_dim]` features.
    fn extract(&self, images: &Tensor) -> Result<Tensor>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubConfig {
    pub seed: u64,
    pub input_hw: (usize, usize),
    pub channels: usize,
    /// Average-pooling window and stride.
    pub pool: usize,
    pub feature_dim: usize,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            seed: 0,
            input_hw: (299, 299),
            channels: 3,
            pool: 13,
            feature_dim: 2048,
        }
    }
}

impl StubConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_hw;
        if self.pool == 0 || self.feature_dim == 0 || self.channels == 0 {
            return Err(Error::config("stub pool, channels and feature_dim must be positive"));
        }
        if h < self.pool || w < self.pool {
            return Err(Error::config(format!(
                "stub input {h}x{w} is smaller than the pooling window {}",
                self.pool
            )));
        }
        Ok(())
    }

    fn pooled_hw(&self) -> (usize, usize) {
        (self.input_hw.0 / self.pool, self.input_hw.1 / self.pool)
    }

    fn pooled_len(&self) -> usize {
        let (ph, pw) = self.pooled_hw();
        ph * pw * self.channels
    }
}

/// Seeded stand-in backbone: block-average pooling, a fixed random
/// projection, then ReLU.
#[derive(Clone, Debug)]
pub struct StubFeatureExtractor {
    cfg: StubConfig,
    projection: Vec<f32>,
}

impl StubFeatureExtractor {
    pub fn new(cfg: StubConfig) -> Result<Self> {
        cfg.validate()?;
        let fan_in = cfg.pooled_len();
        let bound = (3.0 / fan_in as f32).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let projection = (0..fan_in * cfg.feature_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Ok(StubFeatureExtractor { cfg, projection })
    }

    pub fn config(&self) -> &StubConfig {
        &self.cfg
    }

    fn pool(&self, images: &Tensor) -> Result<Vec<f32>> {
        let [n, h, w, c] = images.dims4()?;
        let cfg = &self.cfg;
        if (h, w) != cfg.input_hw || c != cfg.channels {
            return Err(Error::shape(format!(
                "stub extractor expects {}x{}x{}, got {h}x{w}x{c}",
                cfg.input_hw.0, cfg.input_hw.1, cfg.channels
            )));
        }
        let (ph, pw) = cfg.pooled_hw();
        let p = cfg.pool;
        let area = (p * p) as f64;
        let mut out = Vec::with_capacity(n * cfg.pooled_len());
        for image in images.data().chunks(h * w * c) {
            for by in 0..ph {
                for bx in 0..pw {
                    let mut acc = vec![0.0f64; c];
                    for y in by * p..(by + 1) * p {
                        for x in bx * p..(bx + 1) * p {
                            let px = &image[(y * w + x) * c..][..c];
                            for (a, &v) in acc.iter_mut().zip(px) {
                                *a += v as f64;
                            }
                        }
                    }
                    out.extend(acc.iter().map(|a| (a / area) as f32));
                }
            }
        }
        Ok(out)
    }
}

impl FeatureExtractor for StubFeatureExtractor {
    fn feature_dim(&self) -> usize {
        self.cfg.feature_dim
    }

    fn descriptor(&self) -> String {
        let c = &self.cfg;
        format!(
            "stub(seed={},input={}x{}x{},pool={},dim={})",
            c.seed, c.input_hw.0, c.input_hw.1, c.channels, c.pool, c.feature_dim
        )
    }

    fn extract(&self, images: &Tensor) -> Result<Tensor> {
        let pooled = self.pool(images)?;
        let n = images.batch();
        let (k, dim) = (self.cfg.pooled_len(), self.cfg.feature_dim);
        let mut out = vec![0.0f32; n * dim];
        gemm(n, k, dim, &pooled, false, &self.projection, false, &mut out, false);
        for v in &mut out {
            *v = v.max(0.0);
        }
        Tensor::new(&[n, dim], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> StubFeatureExtractor {
        StubFeatureExtractor::new(StubConfig {
            seed,
            input_hw: (26, 26),
            channels: 3,
            pool: 13,
            feature_dim: 64,
        })
        .unwrap()
    }

    fn image() -> Tensor {
        Tensor::from_fn(&[2, 26, 26, 3], |i| ((i * 7919) % 256) as f32)
    }

    #[test]
    fn deterministic_per_seed() {
        let a = small(3).extract(&image()).unwrap();
        let b = small(3).extract(&image()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[2, 64]);
        let c = small(4).extract(&image()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_dimension() {
        let stub = StubFeatureExtractor::new(StubConfig::default()).unwrap();
        assert_eq!(stub.feature_dim(), 2048);
        let out = stub.extract(&Tensor::full(&[1, 299, 299, 3], 100.0)).unwrap();
        assert_eq!(out.shape(), &[1, 2048]);
        assert!(out.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn wrong_extent_rejected() {
        assert!(small(0).extract(&Tensor::zeros(&[1, 20, 26, 3])).is_err());
    }
}
