use debias_nn::layers::{BatchNorm2d, Conv2d, Relu, Residual, UpsampleNearest2};
use debias_nn::{concat_channels, split_channels, Layer, Param, Real, SeedRng, Sequential, Tensor};
use serde::{Deserialize, Serialize};

/// Residual U-Net shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegArch {
    pub input_size: usize,
    /// Encoder residual blocks; the bridge adds one more downsampling.
    pub depth: usize,
    pub base_width: usize,
}

impl Default for SegArch {
    fn default() -> Self {
        Self {
            input_size: 512,
            depth: 5,
            base_width: 16,
        }
    }
}

impl SegArch {
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Total downsampling factor from input to bridge.
    pub fn stride(&self) -> usize {
        1 << self.depth
    }
}

/// Pre-activation residual unit with a projected shortcut.
fn res_unit<T: Real>(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut SeedRng) -> Residual<T> {
    let main = Sequential::new()
        .with(BatchNorm2d::new(&format!("{name}.bn1"), cin))
        .with(Relu::new())
        .with(Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng))
        .with(BatchNorm2d::new(&format!("{name}.bn2"), cout))
        .with(Relu::new())
        .with(Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1, true, rng));
    let shortcut = Sequential::new()
        .with(Conv2d::new(&format!("{name}.proj"), cin, cout, 1, stride, 0, false, rng))
        .with(BatchNorm2d::new(&format!("{name}.proj_bn"), cout));
    Residual::new(main, Some(shortcut))
}

pub struct ResUNet<T: Real> {
    arch: SegArch,
    enc: Vec<Residual<T>>,
    bridge: Residual<T>,
    /// Ordered deepest first.
    dec: Vec<Residual<T>>,
    head: Conv2d<T>,
}

impl<T: Real> ResUNet<T> {
    pub fn new(arch: SegArch, rng: &mut SeedRng) -> Self {
        let d = arch.depth;
        let mut enc = Vec::with_capacity(d);
        let mut cin = 1;
        for l in 0..d {
            let stride = if l == 0 { 1 } else { 2 };
            enc.push(res_unit(&format!("enc{l}"), cin, arch.width(l), stride, rng));
            cin = arch.width(l);
        }
        let bridge = res_unit("bridge", cin, arch.width(d), 2, rng);
        let dec = (0..d)
            .rev()
            .map(|l| res_unit(&format!("dec{l}"), arch.width(l + 1) + arch.width(l), arch.width(l), 1, rng))
            .collect();
        let head = Conv2d::new("head", arch.width(0), 1, 1, 1, 0, true, rng);
        Self {
            arch,
            enc,
            bridge,
            dec,
            head,
        }
    }

    pub fn arch(&self) -> &SegArch {
        &self.arch
    }

    pub fn head_mut(&mut self) -> &mut Conv2d<T> {
        &mut self.head
    }
}

impl<T: Real> Layer<T> for ResUNet<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let up = UpsampleNearest2::new();
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = x.clone();
        for e in &mut self.enc {
            h = e.forward(&h);
            skips.push(h.clone());
        }
        h = self.bridge.forward(&h);
        for (dec, skip) in self.dec.iter_mut().zip(skips.iter().rev()) {
            h = dec.forward(&concat_channels(&Layer::<T>::infer(&up, &h), skip));
        }
        self.head.forward(&h)
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let up = UpsampleNearest2::new();
        let mut skips = Vec::with_capacity(self.enc.len());
        let mut h = x.clone();
        for e in &self.enc {
            h = e.infer(&h);
            skips.push(h.clone());
        }
        h = self.bridge.infer(&h);
        for (dec, skip) in self.dec.iter().zip(skips.iter().rev()) {
            h = dec.infer(&concat_channels(&Layer::<T>::infer(&up, &h), skip));
        }
        self.head.infer(&h)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let mut up = UpsampleNearest2::new();
        let d = self.arch.depth;
        let mut g = self.head.backward(grad);
        // skip gradients, indexed by encoder level
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..d).map(|_| None).collect();
        for (i, dec) in self.dec.iter_mut().enumerate().rev() {
            let level = d - 1 - i;
            let gc = dec.backward(&g);
            let (gu, gs) = split_channels(&gc, self.arch.width(level + 1));
            g = Layer::<T>::backward(&mut up, &gu);
            skip_grads[level] = Some(gs);
        }
        g = self.bridge.backward(&g);
        for (level, e) in self.enc.iter_mut().enumerate().rev() {
            g.add_assign(skip_grads[level].as_ref().expect("every level decoded"));
            g = e.backward(&g);
        }
        g
    }

    fn params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.enc.iter().for_each(|l| l.params(f));
        self.bridge.params(f);
        self.dec.iter().for_each(|l| l.params(f));
        self.head.params(f);
    }

    fn params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.enc.iter_mut().for_each(|l| l.params_mut(f));
        self.bridge.params_mut(f);
        self.dec.iter_mut().for_each(|l| l.params_mut(f));
        self.head.params_mut(f);
    }
}
