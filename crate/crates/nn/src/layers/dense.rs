use rand::Rng;

use crate::layers::he_normal;
use crate::{Layer, Param, Real, Tensor};

/// Fully connected layer on `[n, in, 1, 1]` activations.
pub struct Dense<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    inputs: usize,
    outputs: usize,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                vec![outputs, inputs],
                he_normal(rng, inputs * outputs, inputs),
            ),
            bias: Param::new(format!("{name}.bias"), vec![outputs], vec![T::zero(); outputs]),
            inputs,
            outputs,
            input: None,
        }
    }

    fn run(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.item_len(), self.inputs, "dense {}: width mismatch", self.weight.name);
        let mut out = Tensor::zeros([x.n(), self.outputs, 1, 1]);
        // one row at a time so a sample's output never depends on its batch
        for i in 0..x.n() {
            let dst = out.item_mut(i);
            dst.copy_from_slice(&self.bias.value);
            T::gemm(
                1,
                self.inputs,
                self.outputs,
                T::one(),
                x.item(i),
                self.inputs,
                1,
                &self.weight.value,
                1,
                self.inputs,
                T::one(),
                dst,
                self.outputs,
                1,
            );
        }
        out
    }
}

impl<T: Real> Layer<T> for Dense<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        self.input = Some(x.clone());
        self.run(x)
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("dense backward before forward");
        let n = x.n();
        if self.weight.trainable() {
            // dW (out x in) += dy^T (out x n) * x (n x in)
            T::gemm(
                self.outputs,
                n,
                self.inputs,
                T::one(),
                grad.data(),
                1,
                self.outputs,
                x.data(),
                self.inputs,
                1,
                T::one(),
                &mut self.weight.grad,
                self.inputs,
                1,
            );
        }
        if self.bias.trainable() {
            for i in 0..n {
                for (b, &g) in self.bias.grad.iter_mut().zip(grad.item(i)) {
                    *b += g;
                }
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        // dx (n x in) = dy (n x out) * W (out x in)
        T::gemm(
            n,
            self.outputs,
            self.inputs,
            T::one(),
            grad.data(),
            self.outputs,
            1,
            &self.weight.value,
            self.inputs,
            1,
            T::zero(),
            dx.data_mut(),
            self.inputs,
            1,
        );
        dx
    }

    fn params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{check_layer, input};
    use crate::seeded_rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut d = Dense::<f64>::new("d", 6, 3, &mut seeded_rng(3));
        d.bias.value = vec![0.5, -0.5, 0.25];
        check_layer(&mut d, &input([4, 6, 1, 1]), 1e-6);
    }

    #[test]
    fn output_independent_of_batch() {
        let d = Dense::<f32>::new("d", 5, 4, &mut seeded_rng(4));
        let x = Tensor::from_vec([3, 5, 1, 1], (0..15).map(|v| (v as f32).sin()).collect());
        let batch = d.infer(&x);
        for i in 0..3 {
            assert_eq!(d.infer(&x.select(i)).data(), batch.item(i));
        }
    }
}
