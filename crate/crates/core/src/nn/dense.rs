use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, dot, sigmoid};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Fully connected layer; `weights` is row-major `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }

    /// `z = W x + b`
    pub fn pre_activation(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.extend((0..self.out_dim).map(|o| self.bias[o] + dot(self.row(o), x)));
    }

    /// `dx += Wᵀ δ`
    pub fn backprop_input(&self, delta: &[f64], dx: &mut [f64]) {
        for (o, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                axpy(d, self.row(o), dx);
            }
        }
    }

    /// `dW += δ xᵀ`, `db += δ`
    pub fn accumulate_grads(&self, delta: &[f64], x: &[f64], dw: &mut [f64], db: &mut [f64]) {
        for (o, &d) in delta.iter().enumerate() {
            if d != 0.0 {
                axpy(d, x, &mut dw[o * self.in_dim..(o + 1) * self.in_dim]);
                db[o] += d;
            }
        }
    }
}

/// Per-layer intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct StackTrace {
    /// `inputs[l]` is the input of layer `l`; the final entry is the stack output.
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
}

impl StackTrace {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradient arriving at the top of a stack.
pub enum UpstreamGrad<'a> {
    /// With respect to the stack output (after the last activation).
    Output(&'a [f64]),
    /// With respect to the last layer's pre-activation.
    PreActivation(&'a [f64]),
}

/// Ordered chain of dense layers. An empty stack is the identity map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseStack {
    layers: Vec<Dense>,
}

impl DenseStack {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].out_dim,
                    actual: pair[1].in_dim,
                    context: if i == 0 {
                        "stack layer chain (layer 1)"
                    } else {
                        "stack layer chain"
                    },
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::DimensionMismatch {
                    expected: l.in_dim * l.out_dim,
                    actual: l.weights.len(),
                    context: "dense layer storage",
                });
            }
            if l.weights.iter().chain(&l.bias).any(|w| !w.is_finite()) {
                return Err(Error::InvalidConfig("non-finite dense parameter".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn identity() -> Self {
        Self { layers: Vec::new() }
    }

    /// `widths = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer `last`.
    pub fn glorot(widths: &[usize], hidden: Activation, last: Activation, rng: &mut Rng) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                Dense::glorot(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.in_dim)
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, |l| l.out_dim)
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for l in &self.layers {
            l.pre_activation(&x, &mut z);
            x.clear();
            x.extend(z.iter().map(|&v| l.activation.apply(v)));
        }
        x
    }

    pub fn forward_traced(&self, input: Vec<f64>) -> StackTrace {
        let mut trace = StackTrace {
            inputs: Vec::with_capacity(self.layers.len() + 1),
            pre: Vec::with_capacity(self.layers.len()),
        };
        trace.inputs.push(input);
        for l in &self.layers {
            let mut z = Vec::with_capacity(l.out_dim);
            l.pre_activation(trace.inputs.last().expect("input"), &mut z);
            let a = z.iter().map(|&v| l.activation.apply(v)).collect();
            trace.pre.push(z);
            trace.inputs.push(a);
        }
        trace
    }

    /// Back-propagates through the stack, returning the gradient w.r.t. the
    /// stack input. When `grads` is given (two tensors per layer: weights then
    /// bias) parameter gradients are accumulated into it.
    pub fn backward(
        &self,
        trace: &StackTrace,
        upstream: UpstreamGrad<'_>,
        mut grads: Option<&mut [Vec<f64>]>,
    ) -> Vec<f64> {
        let n = self.layers.len();
        let mut delta: Vec<f64> = match upstream {
            UpstreamGrad::Output(g) => {
                if n == 0 {
                    return g.to_vec();
                }
                let l = &self.layers[n - 1];
                g.iter()
                    .zip(&trace.pre[n - 1])
                    .zip(&trace.inputs[n])
                    .map(|((g, &z), &a)| g * l.activation.derivative(z, a))
                    .collect()
            }
            UpstreamGrad::PreActivation(d) => {
                assert!(n > 0, "pre-activation gradient needs at least one layer");
                d.to_vec()
            }
        };
        for i in (0..n).rev() {
            let l = &self.layers[i];
            let x = &trace.inputs[i];
            if let Some(g) = grads.as_deref_mut() {
                let (w, b) = g[2 * i..2 * i + 2].split_at_mut(1);
                l.accumulate_grads(&delta, x, &mut w[0], &mut b[0]);
            }
            let mut dx = vec![0.0; l.in_dim];
            l.backprop_input(&delta, &mut dx);
            if i == 0 {
                return dx;
            }
            let below = &self.layers[i - 1];
            for ((d, &z), &a) in dx.iter_mut().zip(&trace.pre[i - 1]).zip(&trace.inputs[i]) {
                *d *= below.activation.derivative(z, a);
            }
            delta = dx;
        }
        unreachable!("loop returns at layer 0")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub(crate) fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub(crate) fn shapes(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.layers
            .iter()
            .flat_map(|l| [vec![l.out_dim, l.in_dim], vec![l.out_dim]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn chain_dimensions_checked() {
        let a = Dense::zeros(3, 4, Activation::Relu);
        let b = Dense::zeros(5, 1, Activation::Sigmoid);
        assert!(DenseStack::new(vec![a.clone(), b]).is_err());
        assert!(DenseStack::new(vec![a, Dense::zeros(4, 1, Activation::Sigmoid)]).is_ok());
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Dense::zeros(2, 2, Activation::Relu);
        a.weights[1] = f64::NAN;
        assert!(DenseStack::new(vec![a]).is_err());
    }

    #[test]
    fn identity_stack_passes_through() {
        let s = DenseStack::identity();
        assert_eq!(s.forward(&[1.0, -2.0]), vec![1.0, -2.0]);
        let t = s.forward_traced(vec![1.0, -2.0]);
        assert_eq!(
            s.backward(&t, UpstreamGrad::Output(&[0.5, 0.25]), None),
            vec![0.5, 0.25]
        );
    }

    #[test]
    fn traced_matches_plain_forward() {
        let mut rng = stream(1, Stream::Init);
        let s = DenseStack::glorot(&[5, 7, 3], Activation::Relu, Activation::Identity, &mut rng);
        let x = [0.3, -0.1, 0.8, 1.2, -0.5];
        assert_eq!(s.forward(&x), s.forward_traced(x.to_vec()).output());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = stream(2, Stream::Init);
        let s = DenseStack::glorot(&[4, 6, 2], Activation::Sigmoid, Activation::Identity, &mut rng);
        let x = vec![0.2, -0.4, 0.9, 0.1];
        let up = [1.0, -0.5];
        let t = s.forward_traced(x.clone());
        let g = s.backward(&t, UpstreamGrad::Output(&up), None);
        let f = |x: &[f64]| {
            let y = s.forward(x);
            y[0] * up[0] + y[1] * up[1]
        };
        for i in 0..4 {
            let h = 1e-6;
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "{i}: {fd} vs {}", g[i]);
        }
    }
}
