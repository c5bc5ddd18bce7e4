//! Dense layers and the multilayer perceptron all models are built from.

use crate::autodiff::{Tape, Tensor, ValueId};
use crate::error::Result;
use crate::rng::Rng;

use super::Binding;

/// Nonlinearity between dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Silu,
    Relu,
}

/// A dense layer `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Scaled-normal weight init, zero bias.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let scale = (2.0 / in_dim as f64).sqrt();
        let values = (0..in_dim * out_dim).map(|_| scale * rng.normal()).collect();
        Linear {
            weight: Tensor::new(vec![in_dim, out_dim], values).unwrap(),
            bias: Tensor::vector(vec![0.0; out_dim]),
        }
    }

    /// All-zero layer; the conventional init for prediction heads, making
    /// the initial output zero for any input.
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Tensor::zeros(vec![in_dim, out_dim]),
            bias: Tensor::vector(vec![0.0; out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape, x: ValueId, binding: &mut Binding) -> Result<ValueId> {
        let w = tape.input(&self.weight);
        let b = tape.input(&self.bias);
        binding.push(w);
        binding.push(b);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stack of dense layers with a fixed activation and optional inverted
/// dropout on the hidden activations.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Mlp {
    /// `dims` lists every layer width, input first. `zero_last` zero-
    /// initializes the final layer.
    pub fn new(
        dims: &[usize],
        activation: Activation,
        dropout: f64,
        zero_last: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "an mlp needs input and output widths");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            layers.push(Linear::new(w[0], w[1], rng));
        }
        if zero_last {
            let last = layers.len() - 1;
            layers[last] = Linear::zeros(dims[dims.len() - 2], dims[dims.len() - 1]);
        }
        Mlp {
            layers,
            activation,
            dropout,
        }
    }

    /// Forward pass over a `[n, in]` batch. Dropout masks are drawn only
    /// when a training rng is supplied; evaluation passes are deterministic.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: ValueId,
        train_rng: Option<&mut Rng>,
        binding: &mut Binding,
    ) -> Result<ValueId> {
        let mut rng = train_rng;
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h, binding)?;
            if i < last {
                h = match self.activation {
                    Activation::Silu => tape.silu(h),
                    Activation::Relu => tape.relu(h),
                };
                if let Some(r) = rng.as_deref_mut() {
                    if self.dropout > 0.0 {
                        h = apply_dropout(tape, h, self.dropout, r)?;
                    }
                }
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Linear::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Linear::params_mut).collect()
    }
}

/// Multiplies by an inverted-scaling Bernoulli mask: kept entries are
/// scaled by `1/(1-p)` so the expected output equals the input.
pub fn apply_dropout(tape: &mut Tape, x: ValueId, p: f64, rng: &mut Rng) -> Result<ValueId> {
    debug_assert!((0.0..1.0).contains(&p));
    let keep = 1.0 - p;
    let mask: Vec<f64> = (0..tape.values(x).len())
        .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = tape.input_from(tape.shape(x).to_vec(), mask)?;
    tape.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{central_difference, max_relative_error};

    #[test]
    fn zero_last_layer_outputs_zero() {
        let mut rng = Rng::from_seed(1);
        let mlp = Mlp::new(&[3, 8, 2], Activation::Silu, 0.0, true, &mut rng);
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::matrix(2, 3, rng.normal_vec(6)).unwrap());
        let mut binding = Binding::default();
        let y = mlp.forward(&mut tape, x, None, &mut binding).unwrap();
        assert!(tape.values(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = Rng::from_seed(2);
        let mlp = Mlp::new(&[2, 16, 2], Activation::Silu, 0.5, false, &mut rng);
        let x = Tensor::matrix(1, 2, vec![0.3, -0.8]).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let xin = tape.input(&x);
            let mut binding = Binding::default();
            let y = mlp.forward(&mut tape, xin, None, &mut binding).unwrap();
            tape.values(y).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dropout_zero_is_identity() {
        let mut rng = Rng::from_seed(3);
        let mut tape = Tape::new();
        let x = tape.input(&Tensor::vector(vec![1.0, -2.0, 3.0]));
        let y = apply_dropout(&mut tape, x, 0.0, &mut rng).unwrap();
        assert_eq!(tape.values(y), tape.values(x));
    }

    #[test]
    fn dropout_preserves_expectation() {
        // inverted scaling: E[mask * x] = x, checked to 2% over 1e5 masks
        let mut rng = Rng::from_seed(4);
        let p = 0.3;
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let mut tape = Tape::new();
            let x = tape.input(&Tensor::vector(vec![1.0]));
            let y = apply_dropout(&mut tape, x, p, &mut rng).unwrap();
            acc += tape.values(y)[0];
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean={mean}");
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = Rng::from_seed(5);
        let mlp = Mlp::new(&[2, 4, 3], Activation::Silu, 0.0, false, &mut rng);
        let x = Tensor::matrix(2, 2, rng.normal_vec(4)).unwrap();

        let flat: Vec<f64> = mlp.params().iter().flat_map(|p| p.values().to_vec()).collect();
        let rebuild = |p: &[f64]| {
            let mut net = mlp.clone();
            let mut off = 0;
            for t in net.params_mut() {
                let n = t.len();
                t.values_mut().copy_from_slice(&p[off..off + n]);
                off += n;
            }
            net
        };
        let eval = |p: &[f64]| {
            let net = rebuild(p);
            let mut tape = Tape::new();
            let xin = tape.input(&x);
            let mut binding = Binding::default();
            let y = net.forward(&mut tape, xin, None, &mut binding).unwrap();
            let sq = tape.square(y);
            let loss = tape.sum(sq);
            tape.item(loss)
        };
        let numeric = central_difference(eval, &flat, 1e-5);

        let mut tape = Tape::new();
        let xin = tape.input(&x);
        let mut binding = Binding::default();
        let y = mlp.forward(&mut tape, xin, None, &mut binding).unwrap();
        let sq = tape.square(y);
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let analytic: Vec<f64> = binding
            .ids()
            .iter()
            .flat_map(|&id| tape.grad(id).to_vec())
            .collect();

        assert!(max_relative_error(&analytic, &numeric, 1e-7) < 1e-4);
    }
}
