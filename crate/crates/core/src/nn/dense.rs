use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Fully connected layer `y = act(x·W + b)` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Values saved by [`DenseLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Matrix,
    pre: Matrix,
    output: Matrix,
}

impl DenseCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn input(&self) -> &Matrix {
        &self.input
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    /// Gradient with respect to the layer input; `None` when skipped.
    pub input: Option<Matrix>,
}

impl DenseLayer {
    /// Uniform `±1/√fan_in` initialisation for weights and bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = (0..inputs * outputs).map(|_| rng.random_range(-bound..=bound)).collect();
        let bias = (0..outputs).map(|_| rng.random_range(-bound..=bound)).collect();
        DenseLayer {
            weight: Matrix::from_vec(inputs, outputs, weight).expect("sized above"),
            bias,
            activation,
        }
    }

    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        DenseLayer {
            weight: Matrix::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    #[inline]
    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, DenseCache)> {
        if input.cols() != self.inputs() {
            return Err(Error::shape(
                "dense_forward",
                format!("input with {} cols (weight {}x{})", self.inputs(), self.inputs(), self.outputs()),
                format!("input {}x{}", input.rows(), input.cols()),
            ));
        }
        let mut pre = input.matmul(&self.weight)?;
        pre.add_row(&self.bias)?;
        let act = self.activation;
        let output = pre.map(|x| act.apply(x));
        let cache = DenseCache {
            input: input.clone(),
            pre,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Reverse-mode gradients of the forward map. When `want_input` is false
    /// the input gradient is not computed (frozen upstream features).
    pub fn backward(&self, cache: &DenseCache, upstream: &Matrix, want_input: bool) -> Result<DenseGrads> {
        if upstream.shape() != cache.output.shape() {
            return Err(Error::shape(
                "dense_backward",
                format!("upstream {}x{}", cache.output.rows(), cache.output.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }
        let act = self.activation;
        let delta = if act == Activation::Identity {
            upstream.clone()
        } else {
            let data = upstream
                .data()
                .iter()
                .zip(cache.pre.data().iter().zip(cache.output.data()))
                .map(|(g, (&x, &y))| g * act.derivative(x, y))
                .collect();
            Matrix::from_vec(upstream.rows(), upstream.cols(), data)?
        };
        let weight = cache.input.t_matmul(&delta)?;
        let bias = delta.col_sums();
        let input = if want_input {
            Some(delta.matmul_t(&self.weight)?)
        } else {
            None
        };
        Ok(DenseGrads { weight, bias, input })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::finite_diff_check;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut layer = DenseLayer::zeros(2, 2, Activation::Identity);
        layer.weight = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (out, _) = layer.forward(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_and_sigmoid_activations() {
        let mut relu = DenseLayer::zeros(2, 2, Activation::Relu);
        relu.weight = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let (out, _) = relu.forward(&Matrix::from_rows(&[[-1.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.0, 3.0]);

        let sig = DenseLayer::zeros(1, 1, Activation::Sigmoid);
        let (out, _) = sig.forward(&Matrix::from_rows(&[[7.0]]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn dimension_mismatch_names_both_shapes() {
        let layer = DenseLayer::zeros(3, 2, Activation::Identity);
        let err = layer.forward(&Matrix::zeros(4, 5)).unwrap_err().to_string();
        assert!(err.contains("3x2") && err.contains("4x5"), "{err}");
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::init(4, 3, Activation::Sigmoid, &mut rng);
        let x = Matrix::from_vec(2, 4, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
        let (_, cache) = layer.forward(&x).unwrap();
        let g = layer.backward(&cache, &Matrix::zeros(2, 3), true).unwrap();
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_identity_layer_by_hand() {
        // y = w x + b with w = 1.5, x = 2: dy/dw = x, dy/dx = w.
        let mut layer = DenseLayer::zeros(1, 1, Activation::Identity);
        layer.weight.set(0, 0, 1.5);
        let (_, cache) = layer.forward(&Matrix::from_rows(&[[2.0]]).unwrap()).unwrap();
        let g = layer.backward(&cache, &Matrix::from_rows(&[[1.0]]).unwrap(), true).unwrap();
        assert_eq!(g.weight.data(), &[2.0]);
        assert_eq!(g.bias, vec![1.0]);
        assert_eq!(g.input.unwrap().data(), &[1.5]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, act) in [(1u64, Activation::Identity), (2, Activation::Relu), (3, Activation::Sigmoid)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layer = DenseLayer::init(5, 4, act, &mut rng);
            let x = DenseLayer::init(3, 5, Activation::Identity, &mut rng).weight.scale(2.0);
            let up = DenseLayer::init(3, 4, Activation::Identity, &mut rng).weight;
            // loss = Σ up ⊙ layer(x); params = [W, b, x]
            let loss = |p: &[Vec<f64>]| {
                let l = DenseLayer {
                    weight: Matrix::from_vec(5, 4, p[0].clone()).unwrap(),
                    bias: p[1].clone(),
                    activation: act,
                };
                let input = Matrix::from_vec(3, 5, p[2].clone()).unwrap();
                let (out, cache) = l.forward(&input).unwrap();
                let value = out.data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
                let g = l.backward(&cache, &up, true).unwrap();
                (value, vec![g.weight.into_vec(), g.bias, g.input.unwrap().into_vec()])
            };
            let params = vec![layer.weight.data().to_vec(), layer.bias.clone(), x.data().to_vec()];
            let report = finite_diff_check(loss, &params, 1e-5);
            assert!(report.max_rel_error() < 1e-5, "{act:?}: {report:?}");
        }
    }
}
