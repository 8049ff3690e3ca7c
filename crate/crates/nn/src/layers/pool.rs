use crate::{Layer, Real, Tensor};

/// Max pooling with a square window; padded positions never win.
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    pad: usize,
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    fn run<T: Real>(&self, x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
        let (n, c, h, w) = (x.n(), x.c(), x.h(), x.w());
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut arg = vec![0usize; n * c * oh * ow];
        let src = x.data();
        let dst = out.data_mut();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if src[idx] > best || best_i == usize::MAX {
                                best = src[idx];
                                best_i = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    dst[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        (out, arg)
    }
}

impl<T: Real> Layer<T> for MaxPool2d {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (y, arg) = self.run(x);
        self.cache = Some((x.shape(), arg));
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x).0
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let (shape, arg) = self.cache.take().expect("maxpool backward before forward");
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (&i, &g) in arg.iter().zip(grad.data()) {
            d[i] += g;
        }
        dx
    }
}

/// 2x2 average pooling with stride 2 (odd trailing rows/columns dropped).
#[derive(Default)]
pub struct AvgPool2 {
    shape: Option<[usize; 4]>,
}

impl AvgPool2 {
    pub fn new() -> Self {
        Self { shape: None }
    }
}

impl<T: Real> Layer<T> for AvgPool2 {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.shape = Some(x.shape());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = (x.n(), x.c(), x.h(), x.w());
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let src = x.data();
        for (plane, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i = base + 2 * oy * w + 2 * ox;
                    dst[oy * ow + ox] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let shape = self.shape.take().expect("avgpool backward before forward");
        let (h, w) = (shape[2], shape[3]);
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (plane, g) in grad.data().chunks(oh * ow).enumerate() {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let v = g[oy * ow + ox] * quarter;
                    let i = base + 2 * oy * w + 2 * ox;
                    d[i] += v;
                    d[i + 1] += v;
                    d[i + w] += v;
                    d[i + w + 1] += v;
                }
            }
        }
        dx
    }
}

/// Mean over each channel plane; output is `[n, c, 1, 1]`.
#[derive(Default)]
pub struct GlobalAvgPool {
    shape: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { shape: None }
    }
}

impl<T: Real> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.shape = Some(x.shape());
        self.infer(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let hw = x.h() * x.w();
        let scale = T::one() / T::lit(hw as f64);
        let data = x.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * scale).collect();
        Tensor::from_vec([x.n(), x.c(), 1, 1], data)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let shape = self.shape.take().expect("gap backward before forward");
        let hw = shape[2] * shape[3];
        let scale = T::one() / T::lit(hw as f64);
        let mut dx = Tensor::zeros(shape);
        for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(grad.data()) {
            plane.iter_mut().for_each(|v| *v = g * scale);
        }
        dx
    }
}

/// Nearest-neighbour 2x upsampling.
#[derive(Default)]
pub struct UpsampleNearest2;

impl UpsampleNearest2 {
    pub fn new() -> Self {
        Self
    }
}

impl<T: Real> Layer<T> for UpsampleNearest2 {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.infer(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (x.h(), x.w());
        let mut out = Tensor::zeros([x.n(), x.c(), 2 * h, 2 * w]);
        for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(4 * h * w)) {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        out
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (grad.h() / 2, grad.w() / 2);
        let mut dx = Tensor::zeros([grad.n(), grad.c(), h, w]);
        for (g, d) in grad.data().chunks(4 * h * w).zip(dx.data_mut().chunks_mut(h * w)) {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    d[(y / 2) * w + xx / 2] += g[y * 2 * w + xx];
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{check_layer, input};

    #[test]
    fn pooling_gradients() {
        check_layer(&mut MaxPool2d::new(2, 2, 0), &input([2, 2, 4, 6]), 1e-6);
        check_layer(&mut MaxPool2d::new(3, 2, 1), &input([1, 2, 5, 5]), 1e-6);
        check_layer(&mut AvgPool2::new(), &input([2, 2, 4, 6]), 1e-6);
        check_layer(&mut GlobalAvgPool::new(), &input([2, 3, 3, 2]), 1e-6);
        check_layer(&mut UpsampleNearest2::new(), &input([1, 2, 3, 2]), 1e-6);
    }

    #[test]
    fn maxpool_values() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0f32, 4.0, 3.0, 2.0]);
        let y = Layer::<f32>::infer(&MaxPool2d::new(2, 2, 0), &x);
        assert_eq!(y.data(), &[4.0]);
    }
}
