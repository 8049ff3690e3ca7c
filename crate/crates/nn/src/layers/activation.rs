use crate::{Layer, Real, Tensor};

#[derive(Default)]
pub struct Relu<T> {
    input: Option<Tensor<T>>,
}

impl<T: Real> Relu<T> {
    pub fn new() -> Self {
        Self { input: None }
    }
}

impl<T: Real> Layer<T> for Relu<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input = Some(x.clone());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v.max(T::zero()))
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("relu backward before forward");
        let mut dx = grad.clone();
        for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
            if v <= T::zero() {
                *g = T::zero();
            }
        }
        dx
    }
}
