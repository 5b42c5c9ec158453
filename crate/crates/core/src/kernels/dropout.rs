use rand::Rng;

use super::{LayerGrads, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-element scale applied by a train-mode dropout call (`0` or
/// `1 / (1 - rate)`); `None` when the call was a passthrough.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask(Option<Vec<f32>>);

impl DropoutMask {
    pub fn is_identity(&self) -> bool {
        self.0.is_none()
    }

    /// Fraction of elements kept; 1.0 for a passthrough.
    pub fn survivor_fraction(&self) -> f64 {
        match &self.0 {
            None => 1.0,
            Some(m) => m.iter().filter(|&&s| s != 0.0).count() as f64 / m.len() as f64,
        }
    }
}

/// Inverted dropout. Draws one uniform sample per element, in buffer order,
/// only in train mode with a positive rate.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    rate: f32,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} not in [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), DropoutMask(None)));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..input.len())
        .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep_scale })
        .collect();
    let out = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(x, m)| x * m)
        .collect();
    Ok((Tensor::new(input.shape(), out)?, DropoutMask(Some(mask))))
}

pub fn dropout_backward(mask: &DropoutMask, upstream: &Tensor) -> Result<LayerGrads> {
    let grad = match &mask.0 {
        None => upstream.clone(),
        Some(m) => {
            if m.len() != upstream.len() {
                return Err(Error::shape(format!(
                    "dropout_backward: mask of {} for upstream {:?}",
                    m.len(),
                    upstream.shape()
                )));
            }
            let data = upstream.data().iter().zip(m).map(|(g, s)| g * s).collect();
            Tensor::new(upstream.shape(), data)?
        }
    };
    Ok(LayerGrads::input_only(grad))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn zero_rate_and_infer_are_identity() {
        let x = Tensor::from_fn(&[3, 5], |i| i as f32 - 7.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, m) = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(m.is_identity());
        let (y, m) = dropout(&x, 0.5, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(m.is_identity());
    }

    #[test]
    fn train_mode_statistics() {
        let x = Tensor::full(&[10_000], 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (y, m) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let kept = m.survivor_fraction();
        assert!((kept - 0.5).abs() <= 0.02, "survivors {kept}");
        let mean = y.sum() / y.len() as f64;
        assert!((mean - 2.0).abs() < 0.1, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 4.0));
    }

    #[test]
    fn same_seed_same_mask() {
        let x = Tensor::full(&[64], 1.0);
        let a = dropout(&x, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = dropout(&x, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rate_one_rejected() {
        let x = Tensor::full(&[4], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout(&x, 1.0, Mode::Train, &mut rng).is_err());
    }
}
