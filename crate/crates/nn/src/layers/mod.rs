//! Concrete layers.

mod activation;
mod combinator;
mod conv;
mod dense;
mod dropout;
mod norm;
mod pool;

pub use activation::Relu;
pub use combinator::{DenseConcat, Residual};
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use norm::BatchNorm2d;
pub use pool::{AvgPool2, GlobalAvgPool, MaxPool2d, UpsampleNearest2};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::Real;

/// He-normal initialisation for a layer with `fan_in` inputs per output.
pub(crate) fn he_normal<T: Real>(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| T::lit(dist.sample(rng))).collect()
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite differences against the analytic backward pass, run in f64.

    use crate::{Layer, Tensor};

    /// Loss is `sum(out * probe)` so the upstream gradient is `probe`.
    pub fn check_layer(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, tol: f64) {
        let out = layer.forward(x);
        let probe: Vec<f64> = (0..out.len()).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
        let probe = Tensor::from_vec(out.shape(), probe);
        layer.params_mut(&mut |p| p.zero_grad());
        let dx = layer.backward(&probe);

        let loss = |layer: &mut dyn Layer<f64>, x: &Tensor<f64>| -> f64 {
            let y = layer.forward(x);
            y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let num = (loss(layer, &xp) - loss(layer, &xm)) / (2.0 * eps);
            let ana = dx.data()[i];
            assert!(
                (num - ana).abs() <= tol * (1.0 + num.abs()),
                "input grad {i}: numeric {num} analytic {ana}"
            );
        }

        let mut grads = Vec::new();
        layer.params(&mut |p| {
            if p.trainable() {
                grads.push(p.grad.clone())
            }
        });
        let mut pi = 0;
        let mut count = 0;
        layer.params(&mut |p| {
            if p.trainable() {
                count += 1
            }
        });
        while pi < count {
            let len = grads[pi].len();
            for j in 0..len {
                let nudge = |layer: &mut dyn Layer<f64>, delta: f64| {
                    let mut k = 0;
                    layer.params_mut(&mut |p| {
                        if p.trainable() {
                            if k == pi {
                                p.value[j] += delta;
                            }
                            k += 1;
                        }
                    });
                };
                nudge(layer, eps);
                let lp = loss(layer, x);
                nudge(layer, -2.0 * eps);
                let lm = loss(layer, x);
                nudge(layer, eps);
                let num = (lp - lm) / (2.0 * eps);
                let ana = grads[pi][j];
                assert!(
                    (num - ana).abs() <= tol * (1.0 + num.abs()),
                    "param {pi}[{j}]: numeric {num} analytic {ana}"
                );
            }
            pi += 1;
        }
    }

    pub fn input(shape: [usize; 4]) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64) * 0.731).sin()).collect())
    }
}
