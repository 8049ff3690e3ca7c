use crate::{Layer, Param, ParamKind, Real, Tensor};

/// Per-channel batch normalisation.
///
/// In training mode batch statistics are used and the running averages are
/// updated, unless the layer is frozen, in which case it behaves exactly as in
/// inference (running statistics, no updates).
pub struct BatchNorm2d<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    momentum: f64,
    eps: f64,
    cache: Option<Cache<T>>,
}

struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![T::one(); channels]),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![T::zero(); channels]),
            running_mean: Param::buffer(
                format!("{name}.running_mean"),
                vec![channels],
                vec![T::zero(); channels],
            ),
            running_var: Param::buffer(
                format!("{name}.running_var"),
                vec![channels],
                vec![T::one(); channels],
            ),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn normalise(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Tensor<T>) {
        let hw = x.h() * x.w();
        let c = self.channels();
        let mut xhat = x.clone();
        for (idx, plane) in xhat.data_mut().chunks_mut(hw).enumerate() {
            let ch = idx % c;
            plane.iter_mut().for_each(|v| *v = (*v - mean[ch]) * inv_std[ch]);
        }
        let mut y = xhat.clone();
        for (idx, plane) in y.data_mut().chunks_mut(hw).enumerate() {
            let ch = idx % c;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            plane.iter_mut().for_each(|v| *v = *v * g + b);
        }
        (xhat, y)
    }

    fn running_inv_std(&self) -> Vec<T> {
        let eps = T::lit(self.eps);
        self.running_var.value.iter().map(|&v| T::one() / (v + eps).sqrt()).collect()
    }
}

impl<T: Real> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c(), self.channels(), "batchnorm channel mismatch");
        if self.gamma.frozen {
            let inv = self.running_inv_std();
            let (xhat, y) = self.normalise(x, &self.running_mean.value, &inv);
            self.cache = Some(Cache {
                xhat,
                inv_std: inv,
                batch_stats: false,
            });
            return y;
        }
        let c = self.channels();
        let hw = x.h() * x.w();
        let count = T::lit((x.n() * hw) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for (idx, plane) in x.data().chunks(hw).enumerate() {
            mean[idx % c] += plane.iter().copied().sum::<T>();
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for (idx, plane) in x.data().chunks(hw).enumerate() {
            let m = mean[idx % c];
            var[idx % c] += plane.iter().map(|&v| (v - m) * (v - m)).sum::<T>();
        }
        var.iter_mut().for_each(|v| *v /= count);
        let eps = T::lit(self.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let mom = T::lit(self.momentum);
        let n = x.n() * hw;
        let unbias = if n > 1 { T::lit(n as f64 / (n - 1) as f64) } else { T::one() };
        for ch in 0..c {
            let rm = &mut self.running_mean.value[ch];
            *rm = (T::one() - mom) * *rm + mom * mean[ch];
            let rv = &mut self.running_var.value[ch];
            *rv = (T::one() - mom) * *rv + mom * var[ch] * unbias;
        }
        let (xhat, y) = self.normalise(x, &mean, &inv_std);
        self.cache = Some(Cache {
            xhat,
            inv_std,
            batch_stats: true,
        });
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let inv = self.running_inv_std();
        self.normalise(x, &self.running_mean.value, &inv).1
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.take().expect("batchnorm backward before forward");
        let c = self.channels();
        let hw = grad.h() * grad.w();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for (idx, (gp, xp)) in grad.data().chunks(hw).zip(cache.xhat.data().chunks(hw)).enumerate() {
            let ch = idx % c;
            sum_g[ch] += gp.iter().copied().sum::<T>();
            sum_gx[ch] += gp.iter().zip(xp).map(|(&g, &xh)| g * xh).sum::<T>();
        }
        if self.gamma.trainable() {
            for ch in 0..c {
                self.gamma.grad[ch] += sum_gx[ch];
                self.beta.grad[ch] += sum_g[ch];
            }
        }
        let mut dx = grad.clone();
        let count = T::lit((grad.n() * hw) as f64);
        for (idx, (dp, xp)) in dx.data_mut().chunks_mut(hw).zip(cache.xhat.data().chunks(hw)).enumerate() {
            let ch = idx % c;
            let k = self.gamma.value[ch] * cache.inv_std[ch];
            if cache.batch_stats {
                let mg = sum_g[ch] / count;
                let mgx = sum_gx[ch] / count;
                for (d, &xh) in dp.iter_mut().zip(xp) {
                    *d = k * (*d - mg - xh * mgx);
                }
            } else {
                dp.iter_mut().for_each(|d| *d *= k);
            }
        }
        dx
    }

    fn params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }

    fn set_frozen(&mut self, frozen: bool) {
        self.params_mut(&mut |p| {
            if p.kind == ParamKind::Weight {
                p.frozen = frozen
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{check_layer, input};

    #[test]
    fn gradients_match_finite_differences() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 2);
        bn.gamma.value = vec![1.5, 0.5];
        bn.beta.value = vec![0.1, -0.3];
        bn.momentum = 0.0;
        check_layer(&mut bn, &input([3, 2, 2, 3]), 1e-5);
    }

    #[test]
    fn frozen_uses_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new("bn", 1);
        bn.running_mean.value = vec![2.0];
        bn.running_var.value = vec![4.0 - 1e-5];
        bn.set_frozen(true);
        let x = Tensor::from_vec([1, 1, 1, 2], vec![2.0, 4.0]);
        let y = bn.forward(&x);
        assert!((y.data()[1] - 1.0).abs() < 1e-9);
        assert_eq!(bn.running_mean.value, vec![2.0]);
        let mut bn2 = BatchNorm2d::<f64>::new("bn", 1);
        bn2.running_mean.value = vec![2.0];
        bn2.running_var.value = vec![4.0];
        bn2.set_frozen(true);
        check_layer(&mut bn2, &input([2, 1, 2, 2]), 1e-6);
    }
}
