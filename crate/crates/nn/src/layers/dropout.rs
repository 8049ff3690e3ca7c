use rand::Rng;

use crate::{Layer, Real, SeedRng, Tensor};

/// Inverted dropout: training activations are scaled by `1 / (1 - p)` so
/// inference is the identity.
pub struct Dropout<T> {
    p: f64,
    rng: SeedRng,
    mask: Option<Vec<T>>,
}

impl<T: Real> Dropout<T> {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        Self {
            p,
            rng: crate::seeded_rng(seed),
            mask: None,
        }
    }
}

impl<T: Real> Layer<T> for Dropout<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let keep = T::lit(1.0 / (1.0 - self.p));
        let mask: Vec<T> = (0..x.len())
            .map(|_| if self.rng.random::<f64>() < self.p { T::zero() } else { keep })
            .collect();
        let mut y = x.clone();
        for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.mask = Some(mask);
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.clone()
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("dropout backward before forward");
        let mut dx = grad.clone();
        for (g, m) in dx.data_mut().iter_mut().zip(mask) {
            *g *= m;
        }
        dx
    }
}
