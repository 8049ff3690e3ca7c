use rand::Rng;

use crate::layers::he_normal;
use crate::{Layer, Param, Real, Tensor};

/// 2-D convolution over NCHW input, lowered to a matrix product via im2col.
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    input: Option<Tensor<T>>,
}

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Real>(x: &[T], g: &Geometry, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &Geometry, dx: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Conv2d<T> {
    /// Square kernel; `pad = kernel / 2` gives "same" output for stride 1.
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        let fan_in = in_ch * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            vec![out_ch, in_ch, kernel, kernel],
            he_normal(rng, out_ch * fan_in, fan_in),
        );
        let bias = bias.then(|| Param::new(format!("{name}.bias"), vec![out_ch], vec![T::zero(); out_ch]));
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            input: None,
        }
    }

    /// Stride-1 convolution with "same" padding.
    pub fn same(name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Self::new(name, in_ch, out_ch, kernel, 1, kernel / 2, true, rng)
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    fn geometry(&self, x: &Tensor<T>) -> Geometry {
        assert_eq!(x.c(), self.in_ch, "conv {}: channel mismatch", self.weight.name);
        let (h, w) = (x.h(), x.w());
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        Geometry {
            c: self.in_ch,
            h,
            w,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            oh,
            ow,
        }
    }

    fn run(&self, x: &Tensor<T>) -> Tensor<T> {
        let g = self.geometry(x);
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let mut out = Tensor::zeros([x.n(), self.out_ch, g.oh, g.ow]);
        let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * cols] };
        for i in 0..x.n() {
            let src: &[T] = if g.is_pointwise() {
                x.item(i)
            } else {
                im2col(x.item(i), &g, &mut col);
                &col
            };
            let dst = out.item_mut(i);
            T::gemm(
                self.out_ch,
                rows,
                cols,
                T::one(),
                &self.weight.value,
                rows,
                1,
                src,
                cols,
                1,
                T::zero(),
                dst,
                cols,
                1,
            );
            if let Some(b) = &self.bias {
                for (o, chunk) in dst.chunks_mut(cols).enumerate() {
                    let bo = b.value[o];
                    chunk.iter_mut().for_each(|v| *v += bo);
                }
            }
        }
        out
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.run(x);
        self.input = Some(x.clone());
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("conv backward before forward");
        let g = self.geometry(&x);
        let (rows, cols) = (g.col_rows(), g.col_cols());
        let mut dx = Tensor::zeros(x.shape());
        let mut col = vec![T::zero(); rows * cols];
        let train_w = self.weight.trainable();
        for i in 0..x.n() {
            let dy = grad.item(i);
            if train_w {
                let src: &[T] = if g.is_pointwise() {
                    x.item(i)
                } else {
                    im2col(x.item(i), &g, &mut col);
                    &col
                };
                // dW += dy (O x cols) * src^T (cols x rows)
                T::gemm(
                    self.out_ch,
                    cols,
                    rows,
                    T::one(),
                    dy,
                    cols,
                    1,
                    src,
                    1,
                    cols,
                    T::one(),
                    &mut self.weight.grad,
                    rows,
                    1,
                );
            }
            if let Some(b) = self.bias.as_mut().filter(|b| b.trainable()) {
                for (o, chunk) in dy.chunks(cols).enumerate() {
                    b.grad[o] += chunk.iter().copied().sum::<T>();
                }
            }
            // dcol = W^T (rows x O) * dy (O x cols)
            if g.is_pointwise() {
                T::gemm(
                    rows,
                    self.out_ch,
                    cols,
                    T::one(),
                    &self.weight.value,
                    1,
                    rows,
                    dy,
                    cols,
                    1,
                    T::zero(),
                    dx.item_mut(i),
                    cols,
                    1,
                );
            } else {
                T::gemm(
                    rows,
                    self.out_ch,
                    cols,
                    T::one(),
                    &self.weight.value,
                    1,
                    rows,
                    dy,
                    cols,
                    1,
                    T::zero(),
                    &mut col,
                    cols,
                    1,
                );
                col2im(&col, &g, dx.item_mut(i));
            }
        }
        dx
    }

    fn params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }

    fn params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}
