//! Loss functions. Each returns the scalar loss and its gradient with respect
//! to the prediction tensor.

use crate::{Real, Tensor};

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Mean binary cross-entropy on raw logits (one logit per batch item).
pub fn bce_with_logits<T: Real>(logits: &Tensor<T>, targets: &[T]) -> (T, Tensor<T>) {
    assert_eq!(logits.len(), targets.len(), "bce: one logit per target");
    let n = T::lit(targets.len() as f64);
    let mut loss = T::zero();
    let mut grad = logits.clone();
    for (g, (&z, &y)) in grad.data_mut().iter_mut().zip(logits.data().iter().zip(targets)) {
        loss += z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln();
        *g = (sigmoid(z) - y) / n;
    }
    (loss / n, grad)
}

/// Soft Dice loss on logits, `1 - mean_i dice_i` with additive smoothing.
pub fn dice_loss_with_logits<T: Real>(logits: &Tensor<T>, targets: &Tensor<T>) -> (T, Tensor<T>) {
    assert_eq!(logits.shape(), targets.shape(), "dice loss: shape mismatch");
    let smooth = T::one();
    let n = logits.n();
    let nf = T::lit(n as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(logits.shape());
    for i in 0..n {
        let p: Vec<T> = logits.item(i).iter().map(|&z| sigmoid(z)).collect();
        let g = targets.item(i);
        let inter: T = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        let total: T = p.iter().copied().sum::<T>() + g.iter().copied().sum::<T>();
        let num = two * inter + smooth;
        let den = total + smooth;
        loss += T::one() - num / den;
        for ((d, &pj), &gj) in grad.item_mut(i).iter_mut().zip(&p).zip(g) {
            let ddice_dp = (two * gj * den - num) / (den * den);
            *d = -ddice_dp * pj * (T::one() - pj) / nf;
        }
    }
    (loss / nf, grad)
}

pub fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> (T, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape(), "mse: shape mismatch");
    let n = T::lit(pred.len() as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let mut grad = pred.clone();
    for (g, (&p, &t)) in grad.data_mut().iter_mut().zip(pred.data().iter().zip(target.data())) {
        let d = p - t;
        loss += d * d;
        *g = two * d / n;
    }
    (loss / n, grad)
}

/// Summed-area table with a leading zero row/column.
fn integral<T: Real>(plane: &[T], h: usize, w: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    let _ = plane;
    let mut s = vec![T::zero(); (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = T::zero();
        for x in 0..w {
            row += f(y * w + x);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

fn box_sum<T: Real>(s: &[T], w: usize, y0: usize, x0: usize, y1: usize, x1: usize) -> T {
    let stride = w + 1;
    s[y1 * stride + x1] - s[y0 * stride + x1] - s[y1 * stride + x0] + s[y0 * stride + x0]
}

/// Structural dissimilarity `1 - mean SSIM` over all fully-contained
/// `win x win` uniform windows, for data in `[0, 1]`. Averaged over planes.
pub fn ssim_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, win: usize) -> (T, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape(), "ssim: shape mismatch");
    let (h, w) = (pred.h(), pred.w());
    assert!(win <= h && win <= w, "ssim window larger than image");
    let c1 = T::lit(0.01 * 0.01);
    let c2 = T::lit(0.03 * 0.03);
    let two = T::lit(2.0);
    let (wh, ww) = (h - win + 1, w - win + 1);
    let nwin = T::lit((wh * ww) as f64);
    let npx = T::lit((win * win) as f64);
    let planes = pred.n() * pred.c();
    let nplanes = T::lit(planes as f64);

    let mut total = T::zero();
    let mut grad = Tensor::zeros(pred.shape());
    let hw = h * w;
    for p in 0..planes {
        let x = &pred.data()[p * hw..(p + 1) * hw];
        let y = &target.data()[p * hw..(p + 1) * hw];
        let sx = integral(x, h, w, |i| x[i]);
        let sy = integral(y, h, w, |i| y[i]);
        let sxx = integral(x, h, w, |i| x[i] * x[i]);
        let syy = integral(y, h, w, |i| y[i] * y[i]);
        let sxy = integral(x, h, w, |i| x[i] * y[i]);

        // per-window partial derivatives of SSIM w.r.t. (mean_x, E[x^2], E[xy])
        let mut d_mu = vec![T::zero(); wh * ww];
        let mut d_ex2 = vec![T::zero(); wh * ww];
        let mut d_exy = vec![T::zero(); wh * ww];
        let mut sum_s = T::zero();
        for i in 0..wh {
            for j in 0..ww {
                let bs = |s: &[T]| box_sum(s, w, i, j, i + win, j + win) / npx;
                let (mx, my) = (bs(&sx), bs(&sy));
                let (ex2, ey2, exy) = (bs(&sxx), bs(&syy), bs(&sxy));
                let vx = ex2 - mx * mx;
                let vy = ey2 - my * my;
                let cxy = exy - mx * my;
                let a1 = two * mx * my + c1;
                let a2 = two * cxy + c2;
                let b1 = mx * mx + my * my + c1;
                let b2 = vx + vy + c2;
                let s = a1 * a2 / (b1 * b2);
                sum_s += s;
                let ds_dmu = two * my * a2 / (b1 * b2) - s * two * mx / b1;
                let ds_dvx = -s / b2;
                let ds_dcxy = two * a1 / (b1 * b2);
                let k = i * ww + j;
                d_mu[k] = ds_dmu + ds_dvx * (-two * mx) + ds_dcxy * (-my);
                d_ex2[k] = ds_dvx;
                d_exy[k] = ds_dcxy;
            }
        }
        total += T::one() - sum_s / nwin;

        // adjoint of the box filter: each pixel collects every window covering it
        let adj = |m: &[T]| -> Vec<T> {
            let s = integral(m, wh, ww, |i| m[i]);
            let mut out = vec![T::zero(); hw];
            for yy in 0..h {
                let i0 = (yy + 1).saturating_sub(win);
                let i1 = (yy + 1).min(wh);
                for xx in 0..w {
                    let j0 = (xx + 1).saturating_sub(win);
                    let j1 = (xx + 1).min(ww);
                    if i0 < i1 && j0 < j1 {
                        out[yy * w + xx] = box_sum(&s, ww, i0, j0, i1, j1);
                    }
                }
            }
            out
        };
        let a_mu = adj(&d_mu);
        let a_ex2 = adj(&d_ex2);
        let a_exy = adj(&d_exy);
        let scale = -T::one() / (nwin * npx * nplanes);
        let g = &mut grad.data_mut()[p * hw..(p + 1) * hw];
        for i in 0..hw {
            g[i] = scale * (a_mu[i] + two * x[i] * a_ex2[i] + y[i] * a_exy[i]);
        }
    }
    (total / nplanes, grad)
}
