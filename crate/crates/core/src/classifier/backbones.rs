//! Convolutional feature extractors, each split into stages so the last one
//! can be unfrozen on its own.

use debias_nn::layers::{AvgPool2, BatchNorm2d, Conv2d, DenseConcat, MaxPool2d, Relu, Residual};
use debias_nn::{Real, SeedRng, Sequential};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Vgg16,
    Vgg19,
    Resnet50,
    Densenet121,
}

impl Backbone {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "vgg16" => Ok(Self::Vgg16),
            "vgg19" => Ok(Self::Vgg19),
            "resnet50" => Ok(Self::Resnet50),
            "densenet121" => Ok(Self::Densenet121),
            other => Err(CoreError::arg(format!(
                "unknown backbone `{other}` (expected vgg16, vgg19, resnet50 or densenet121)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Vgg16 => "vgg16",
            Self::Vgg19 => "vgg19",
            Self::Resnet50 => "resnet50",
            Self::Densenet121 => "densenet121",
        }
    }
}

/// Stages plus the channel count of the final feature map.
pub(crate) struct Features<T: Real> {
    pub stages: Vec<Sequential<T>>,
    pub channels: usize,
}

fn scaled(c: usize, divisor: usize) -> usize {
    (c / divisor).max(1)
}

fn conv_bn_relu<T: Real>(s: &mut Sequential<T>, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut SeedRng) {
    s.push(Conv2d::new(&format!("{name}.conv"), cin, cout, k, stride, k / 2, false, rng));
    s.push(BatchNorm2d::new(&format!("{name}.bn"), cout));
    s.push(Relu::new());
}

pub(crate) fn build<T: Real>(backbone: Backbone, divisor: usize, rng: &mut SeedRng) -> Features<T> {
    match backbone {
        Backbone::Vgg16 => vgg(&[2, 2, 3, 3, 3], divisor, rng),
        Backbone::Vgg19 => vgg(&[2, 2, 4, 4, 4], divisor, rng),
        Backbone::Resnet50 => resnet50(divisor, rng),
        Backbone::Densenet121 => densenet121(divisor, rng),
    }
}

fn vgg<T: Real>(convs: &[usize], divisor: usize, rng: &mut SeedRng) -> Features<T> {
    const WIDTHS: [usize; 5] = [64, 128, 256, 512, 512];
    let mut cin = 3;
    let mut stages = Vec::new();
    for (b, (&n, &w)) in convs.iter().zip(&WIDTHS).enumerate() {
        let w = scaled(w, divisor);
        let mut s = Sequential::new();
        for i in 0..n {
            s.push(Conv2d::same(&format!("block{}_conv{}", b + 1, i + 1), cin, w, 3, rng));
            s.push(Relu::new());
            cin = w;
        }
        s.push(MaxPool2d::new(2, 2, 0));
        stages.push(s);
    }
    Features { stages, channels: cin }
}

fn stem<T: Real>(width: usize, rng: &mut SeedRng) -> Sequential<T> {
    let mut s = Sequential::new();
    conv_bn_relu(&mut s, "stem", 3, width, 7, 2, rng);
    s.push(MaxPool2d::new(3, 2, 1));
    s
}

fn bottleneck<T: Real>(name: &str, cin: usize, mid: usize, stride: usize, rng: &mut SeedRng) -> Residual<T> {
    let cout = 4 * mid;
    let mut main = Sequential::new();
    conv_bn_relu(&mut main, &format!("{name}.a"), cin, mid, 1, 1, rng);
    conv_bn_relu(&mut main, &format!("{name}.b"), mid, mid, 3, stride, rng);
    main.push(Conv2d::new(&format!("{name}.c.conv"), mid, cout, 1, 1, 0, false, rng));
    main.push(BatchNorm2d::new(&format!("{name}.c.bn"), cout));
    let shortcut = (cin != cout || stride != 1).then(|| {
        Sequential::new()
            .with(Conv2d::new(&format!("{name}.proj.conv"), cin, cout, 1, stride, 0, false, rng))
            .with(BatchNorm2d::new(&format!("{name}.proj.bn"), cout))
    });
    Residual::new(main, shortcut)
}

fn resnet50<T: Real>(divisor: usize, rng: &mut SeedRng) -> Features<T> {
    let base = scaled(64, divisor);
    let mut stages = vec![stem(base, rng)];
    let mut cin = base;
    for (i, &blocks) in [3, 4, 6, 3].iter().enumerate() {
        let mid = scaled(64 << i, divisor);
        let mut s = Sequential::new();
        for b in 0..blocks {
            let stride = if b == 0 && i > 0 { 2 } else { 1 };
            s.push(bottleneck(&format!("layer{}.{b}", i + 1), cin, mid, stride, rng));
            s.push(Relu::new());
            cin = 4 * mid;
        }
        stages.push(s);
    }
    Features { stages, channels: cin }
}

fn densenet121<T: Real>(divisor: usize, rng: &mut SeedRng) -> Features<T> {
    let growth = scaled(32, divisor);
    let mut cin = 2 * growth;
    let mut stages = vec![stem(cin, rng)];
    let blocks = [6, 12, 24, 16];
    for (i, &layers) in blocks.iter().enumerate() {
        let mut s = Sequential::new();
        for l in 0..layers {
            let name = format!("dense{}.{l}", i + 1);
            let mut inner = Sequential::new();
            inner.push(BatchNorm2d::new(&format!("{name}.bn1"), cin));
            inner.push(Relu::new());
            inner.push(Conv2d::new(&format!("{name}.conv1"), cin, 4 * growth, 1, 1, 0, false, rng));
            inner.push(BatchNorm2d::new(&format!("{name}.bn2"), 4 * growth));
            inner.push(Relu::new());
            inner.push(Conv2d::new(&format!("{name}.conv2"), 4 * growth, growth, 3, 1, 1, false, rng));
            s.push(DenseConcat::new(inner, cin));
            cin += growth;
        }
        if i + 1 < blocks.len() {
            let name = format!("transition{}", i + 1);
            let cout = cin / 2;
            s.push(BatchNorm2d::new(&format!("{name}.bn"), cin));
            s.push(Relu::new());
            s.push(Conv2d::new(&format!("{name}.conv"), cin, cout, 1, 1, 0, false, rng));
            s.push(AvgPool2::new());
            cin = cout;
        } else {
            s.push(BatchNorm2d::new("final.bn", cin));
            s.push(Relu::new());
        }
        stages.push(s);
    }
    Features { stages, channels: cin }
}
