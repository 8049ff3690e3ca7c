use crate::{Layer, Real};

/// Adam with bias correction. Moment buffers are matched to parameters by
/// visit order, so an optimiser must stay with the model it was created for.
pub struct Adam<T> {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update to every trainable parameter and zeroes all gradients.
    pub fn step<L: Layer<T> + ?Sized>(&mut self, model: &mut L) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let lr_t = T::lit(self.lr * bc2.sqrt() / bc1);
        let (b1, b2, eps) = (T::lit(self.beta1), T::lit(self.beta2), T::lit(self.eps));
        let moments = &mut self.moments;
        let mut idx = 0;
        model.params_mut(&mut |p| {
            if idx == moments.len() {
                moments.push((vec![T::zero(); p.value.len()], vec![T::zero(); p.value.len()]));
            }
            let (m, v) = &mut moments[idx];
            idx += 1;
            if p.trainable() {
                for i in 0..p.value.len() {
                    let g = p.grad[i];
                    m[i] = b1 * m[i] + (T::one() - b1) * g;
                    v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                    p.value[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
                }
            }
            p.zero_grad();
        });
    }
}
