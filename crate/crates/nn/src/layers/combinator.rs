use crate::{concat_channels, split_channels, Layer, Param, Real, Sequential, Tensor};

/// `main(x) + shortcut(x)`, with an identity shortcut when none is given.
pub struct Residual<T: Real> {
    pub main: Sequential<T>,
    pub shortcut: Option<Sequential<T>>,
}

impl<T: Real> Residual<T> {
    pub fn new(main: Sequential<T>, shortcut: Option<Sequential<T>>) -> Self {
        Self { main, shortcut }
    }
}

impl<T: Real> Layer<T> for Residual<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.main.forward(x);
        match &mut self.shortcut {
            Some(s) => y.add_assign(&s.forward(x)),
            None => y.add_assign(x),
        }
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = self.main.infer(x);
        match &self.shortcut {
            Some(s) => y.add_assign(&s.infer(x)),
            None => y.add_assign(x),
        }
        y
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut dx = self.main.backward(grad);
        match &mut self.shortcut {
            Some(s) => dx.add_assign(&s.backward(grad)),
            None => dx.add_assign(grad),
        }
        dx
    }

    fn params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.main.params(f);
        if let Some(s) = &self.shortcut {
            s.params(f);
        }
    }

    fn params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.main.params_mut(f);
        if let Some(s) = &mut self.shortcut {
            s.params_mut(f);
        }
    }
}

/// Densely connected unit: the input concatenated with `inner(x)` along channels.
pub struct DenseConcat<T: Real> {
    pub inner: Sequential<T>,
    in_ch: usize,
}

impl<T: Real> DenseConcat<T> {
    pub fn new(inner: Sequential<T>, in_ch: usize) -> Self {
        Self { inner, in_ch }
    }
}

impl<T: Real> Layer<T> for DenseConcat<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        concat_channels(x, &self.inner.forward(x))
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        concat_channels(x, &self.inner.infer(x))
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let (gx, gy) = split_channels(grad, self.in_ch);
        let mut dx = self.inner.backward(&gy);
        dx.add_assign(&gx);
        dx
    }

    fn params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.inner.params(f);
    }

    fn params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.inner.params_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{check_layer, input};
    use crate::layers::{BatchNorm2d, Conv2d, Relu};

    #[test]
    fn residual_gradients() {
        let mut rng = crate::seeded_rng(1);
        let main = Sequential::new()
            .with(BatchNorm2d::new("bn", 2))
            .with(Relu::new())
            .with(Conv2d::new("c", 2, 3, 3, 2, 1, true, &mut rng));
        let short = Sequential::new().with(Conv2d::new("s", 2, 3, 1, 2, 0, false, &mut rng));
        check_layer(&mut Residual::new(main, Some(short)), &input([2, 2, 4, 4]), 1e-5);

        let ident = Sequential::new().with(Conv2d::same("c", 2, 2, 3, &mut rng));
        check_layer(&mut Residual::new(ident, None), &input([1, 2, 3, 3]), 1e-6);
    }

    #[test]
    fn dense_concat_gradients() {
        let mut rng = crate::seeded_rng(2);
        let inner = Sequential::new().with(Relu::new()).with(Conv2d::same("c", 2, 3, 3, &mut rng));
        let mut layer = DenseConcat::new(inner, 2);
        let y = layer.infer(&input([1, 2, 3, 3]));
        assert_eq!(y.shape(), [1, 5, 3, 3]);
        // keep inputs off the relu kink
        let x = input([2, 2, 3, 3]).map(|v| v + 0.05);
        check_layer(&mut layer, &x, 1e-6);
    }
}
