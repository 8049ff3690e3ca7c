use crate::Real;

/// Dense NCHW tensor. Fully-connected activations use `h = w = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match data length"
        );
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn item(&self, i: usize) -> &[T] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.item_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn reshape(mut self, shape: [usize; 4]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape, other.shape, "add: shape mismatch");
        Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign: shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stacks single-item tensors (or batches) along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Self {
        assert!(!items.is_empty(), "stack: no tensors");
        let [_, c, h, w] = items[0].shape;
        let mut n = 0;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        for t in items {
            assert_eq!([c, h, w], [t.c(), t.h(), t.w()], "stack: item shape mismatch");
            n += t.n();
            data.extend_from_slice(&t.data);
        }
        Self {
            shape: [n, c, h, w],
            data,
        }
    }

    /// Copies batch item `i` into a tensor with `n = 1`.
    pub fn select(&self, i: usize) -> Self {
        Self {
            shape: [1, self.c(), self.h(), self.w()],
            data: self.item(i).to_vec(),
        }
    }
}

/// Joins two tensors along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(
        [a.n(), a.h(), a.w()],
        [b.n(), b.h(), b.w()],
        "concat_channels: shape mismatch"
    );
    let (ca, cb) = (a.c(), b.c());
    let mut out = Tensor::zeros([a.n(), ca + cb, a.h(), a.w()]);
    for i in 0..a.n() {
        let dst = out.item_mut(i);
        let split = a.item_len();
        dst[..split].copy_from_slice(a.item(i));
        dst[split..].copy_from_slice(b.item(i));
    }
    out
}

/// Inverse of [`concat_channels`] for gradients: splits off the first `ca` channels.
pub fn split_channels<T: Real>(t: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = (t.n(), t.c(), t.h(), t.w());
    assert!(ca <= c);
    let mut a = Tensor::zeros([n, ca, h, w]);
    let mut b = Tensor::zeros([n, c - ca, h, w]);
    let split = ca * h * w;
    for i in 0..n {
        let src = t.item(i);
        a.item_mut(i).copy_from_slice(&src[..split]);
        b.item_mut(i).copy_from_slice(&src[split..]);
    }
    (a, b)
}
