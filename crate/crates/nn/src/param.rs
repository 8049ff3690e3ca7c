use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by gradient descent.
    Weight,
    /// Running statistics and other state saved with the model but never stepped.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub kind: ParamKind,
    pub frozen: bool,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![T::zero(); value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
            kind: ParamKind::Weight,
            frozen: false,
        }
    }

    pub fn buffer(name: impl Into<String>, shape: Vec<usize>, value: Vec<T>) -> Self {
        Self {
            kind: ParamKind::Buffer,
            ..Self::new(name, shape, value)
        }
    }

    pub fn trainable(&self) -> bool {
        self.kind == ParamKind::Weight && !self.frozen
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Copies every parameter and buffer value, in visit order.
pub fn snapshot<T: Real, L: crate::Layer<T> + ?Sized>(layer: &L) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    layer.params(&mut |p| out.push(p.value.clone()));
    out
}

/// Restores values captured by [`snapshot`] from the same architecture.
pub fn restore<T: Real, L: crate::Layer<T> + ?Sized>(layer: &mut L, values: &[Vec<T>]) {
    let mut i = 0;
    layer.params_mut(&mut |p| {
        assert_eq!(p.value.len(), values[i].len(), "restore: architecture mismatch");
        p.value.copy_from_slice(&values[i]);
        i += 1;
    });
    assert_eq!(i, values.len(), "restore: parameter count mismatch");
}
