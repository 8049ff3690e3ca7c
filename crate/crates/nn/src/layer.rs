use crate::{Param, Real, Tensor};

/// A differentiable building block.
///
/// `forward` runs in training mode and caches activations; `backward` must be
/// called at most once per `forward`, with the gradient of the loss with
/// respect to that forward's output. Parameter gradients accumulate until the
/// optimiser zeroes them.
pub trait Layer<T: Real>: Send + Sync {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T>;

    /// Inference-mode forward pass. Never mutates the layer.
    fn infer(&self, x: &Tensor<T>) -> Tensor<T>;

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T>;

    fn params(&self, _f: &mut dyn FnMut(&Param<T>)) {}

    fn params_mut(&mut self, _f: &mut dyn FnMut(&mut Param<T>)) {}

    fn set_frozen(&mut self, frozen: bool) {
        self.params_mut(&mut |p| p.frozen = frozen);
    }

    fn has_trainable(&self) -> bool {
        let mut any = false;
        self.params(&mut |p| any |= p.trainable());
        any
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.params(&mut |p| {
            if p.kind == crate::ParamKind::Weight {
                n += p.value.len()
            }
        });
        n
    }
}

/// Layers applied in order.
pub struct Sequential<T: Real> {
    layers: Vec<Box<dyn Layer<T>>>,
    input_shape: Option<[usize; 4]>,
    /// When false, backward stops at the earliest trainable layer and returns
    /// a zero gradient, skipping work for frozen prefixes.
    pub need_input_grad: bool,
}

impl<T: Real> Default for Sequential<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self {
            layers: Vec::new(),
            input_shape: None,
            need_input_grad: true,
        }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn push_boxed(&mut self, layer: Box<dyn Layer<T>>) {
        self.layers.push(layer);
    }

    pub fn with(mut self, layer: impl Layer<T> + 'static) -> Self {
        self.push(layer);
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer<T>>] {
        &mut self.layers
    }
}

impl<T: Real> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input_shape = Some(x.shape());
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h);
        }
        h
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h);
        }
        h
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let stop = if self.need_input_grad {
            0
        } else {
            match self.layers.iter().position(|l| l.has_trainable()) {
                Some(i) => i,
                None => self.layers.len(),
            }
        };
        let mut g = grad.clone();
        for layer in self.layers[stop..].iter_mut().rev() {
            g = layer.backward(&g);
        }
        if stop > 0 {
            return Tensor::zeros(self.input_shape.expect("backward before forward"));
        }
        g
    }

    fn params(&self, f: &mut dyn FnMut(&Param<T>)) {
        for layer in &self.layers {
            layer.params(f);
        }
    }

    fn params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for layer in &mut self.layers {
            layer.params_mut(f);
        }
    }
}
