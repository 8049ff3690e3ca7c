use debias_nn::layers::{Conv2d, Dense, Relu};
use debias_nn::loss::{bce_with_logits, sigmoid};
use debias_nn::{concat_channels, load_params, save_params, seeded_rng, split_channels, Adam, Layer, Sequential, Tensor};
use proptest::prelude::*;

fn weights<T: debias_nn::Real>(layer: &dyn Layer<T>) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    layer.params(&mut |p| out.push(p.value.clone()));
    out
}

/// Direct convolution with zero padding.
fn naive_conv(x: &Tensor<f64>, w: &[f64], b: Option<&[f64]>, cout: usize, k: usize, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros([n, cout, oh, ow]);
    for i in 0..n {
        for o in 0..cout {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b[o]);
                    for ci in 0..cin {
                        for kr in 0..k {
                            for kc in 0..k {
                                let (y, xx) = ((r * stride + kr) as isize - pad as isize, (c * stride + kc) as isize - pad as isize);
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let v = x.data()[((i * cin + ci) * h + y as usize) * wd + xx as usize];
                                acc += v * w[((o * cin + ci) * k + kr) * k + kc];
                            }
                        }
                    }
                    out.data_mut()[((i * cout + o) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_oracle(
        cin in 1usize..4, cout in 1usize..4, k in 1usize..4, stride in 1usize..3,
        pad in 0usize..2, h in 3usize..9, w in 3usize..9, bias: bool, seed: u64,
    ) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let mut rng = seeded_rng(seed);
        let conv = Conv2d::<f64>::new("c", cin, cout, k, stride, pad, bias, &mut rng);
        let x = Tensor::from_vec([2, cin, h, w], (0..2 * cin * h * w).map(|i| ((i * 37 % 17) as f64 - 8.0) / 8.0).collect());
        let p = weights(&conv);
        let want = naive_conv(&x, &p[0], p.get(1).map(Vec::as_slice), cout, k, stride, pad);
        let got = conv.infer(&x);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn concat_then_split_round_trips(ca in 1usize..4, cb in 1usize..4, hw in 1usize..6) {
        let a = Tensor::<f32>::from_vec([2, ca, hw, hw], (0..2 * ca * hw * hw).map(|i| i as f32).collect());
        let b = Tensor::<f32>::from_vec([2, cb, hw, hw], (0..2 * cb * hw * hw).map(|i| -(i as f32)).collect());
        let (x, y) = split_channels(&concat_channels(&a, &b), ca);
        prop_assert_eq!(x.data(), a.data());
        prop_assert_eq!(y.data(), b.data());
    }

    #[test]
    fn bce_matches_closed_form(z in proptest::collection::vec(-20.0f64..20.0, 1..16), seed: u64) {
        let y: Vec<f64> = z.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as f64).collect();
        let (loss, grad) = bce_with_logits(&Tensor::from_vec([z.len(), 1, 1, 1], z.clone()), &y);
        let n = z.len() as f64;
        let want: f64 = z.iter().zip(&y).map(|(&z, &y)| {
            let p = sigmoid(z);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        }).sum::<f64>() / n;
        prop_assert!((loss - want).abs() < 1e-6 * want.max(1.0));
        for ((g, &z), &y) in grad.data().iter().zip(&z).zip(&y) {
            prop_assert!((g - (sigmoid(z) - y) / n).abs() < 1e-12);
        }
    }
}

fn mlp(seed: u64) -> Sequential<f32> {
    let mut rng = seeded_rng(seed);
    Sequential::new()
        .with(Dense::new("fc1", 3, 8, &mut rng))
        .with(Relu::new())
        .with(Dense::new("fc2", 8, 1, &mut rng))
}

#[test]
fn checkpoints_round_trip_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.safetensors");
    let a = mlp(1);
    save_params(&a, &path).unwrap();
    let mut b = mlp(2);
    assert_ne!(weights(&a), weights(&b));
    assert_eq!(load_params(&mut b, &path, true).unwrap(), 4);
    assert_eq!(weights(&a), weights(&b));

    let mut rng = seeded_rng(3);
    let mut wider = Sequential::new().with(Dense::<f32>::new("fc1", 3, 8, &mut rng)).with(Dense::new("extra", 8, 2, &mut rng));
    assert!(load_params(&mut wider, &path, true).is_err());
    assert_eq!(load_params(&mut wider, &path, false).unwrap(), 2);
}

#[test]
fn adam_fits_a_linear_target() {
    let mut net = mlp(4);
    let mut opt = Adam::new(1e-2);
    let xs: Vec<[f32; 3]> = (0..32).map(|i| [(i % 4) as f32 / 4.0, (i / 4 % 4) as f32 / 4.0, (i / 16) as f32]).collect();
    let x = Tensor::from_vec([32, 3, 1, 1], xs.iter().flatten().copied().collect());
    let y: Vec<f32> = xs.iter().map(|v| 2.0 * v[0] - v[1] + 0.5 * v[2]).collect();
    let loss_at = |net: &mut Sequential<f32>| {
        let out = net.infer(&x);
        out.data().iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f32>() / 32.0
    };
    let start = loss_at(&mut net);
    for _ in 0..300 {
        let out = net.forward(&x);
        let grad = Tensor::from_vec(out.shape(), out.data().iter().zip(&y).map(|(a, b)| 2.0 * (a - b) / 32.0).collect());
        net.backward(&grad);
        opt.step(&mut net);
    }
    let end = loss_at(&mut net);
    assert!(end < 0.05 * start, "{start} -> {end}");
}
