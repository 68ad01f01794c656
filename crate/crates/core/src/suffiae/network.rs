use crate::error::{dim_err, Result};
use crate::samplers::{Matrix, RngStream};

/// Fully connected layer `W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(dim_err(format!(
                "bias has {} entries for {} outputs",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub(crate) fn init(in_dim: usize, out_dim: usize, rng: &mut RngStream) -> Dense {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Dense {
            weights: Matrix::new(out_dim, in_dim, data).unwrap_or_else(|_| Matrix::zeros(out_dim, in_dim)),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros_like(&self) -> Dense {
        Dense {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub(crate) fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.as_slice());
        out.extend_from_slice(&self.bias);
    }

    /// Overwrites this layer from the front of `src`, returning the rest.
    pub(crate) fn load_from<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        let nw = self.weights.as_slice().len();
        let nb = self.bias.len();
        self.weights.as_mut_slice().copy_from_slice(&src[..nw]);
        self.bias.copy_from_slice(&src[nw..nw + nb]);
        &src[nw + nb..]
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .row_iter()
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }
}

pub(crate) fn check_chain(layers: &[Dense]) -> Result<()> {
    for w in layers.windows(2) {
        if w[0].out_dim() != w[1].in_dim() {
            return Err(dim_err(format!(
                "layer widths do not chain: {} then {}",
                w[0].out_dim(),
                w[1].in_dim()
            )));
        }
    }
    Ok(())
}

pub(crate) fn dims(layers: &[Dense]) -> Vec<usize> {
    let mut d = vec![layers[0].in_dim()];
    d.extend(layers.iter().map(Dense::out_dim));
    d
}

/// tanh on every layer but the last, which stays linear.
pub(crate) fn forward(layers: &[Dense], x: &[f64]) -> Vec<f64> {
    let last = layers.len() - 1;
    let mut a = x.to_vec();
    for (i, l) in layers.iter().enumerate() {
        a = l.apply(&a);
        if i < last {
            a.iter_mut().for_each(|v| *v = v.tanh());
        }
    }
    a
}

/// Activations of every layer, input first.
pub(crate) struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn output(&self) -> &[f64] {
        self.activations.last().map_or(&[], Vec::as_slice)
    }
}

pub(crate) fn forward_trace(layers: &[Dense], x: &[f64]) -> Trace {
    let last = layers.len() - 1;
    let mut activations = Vec::with_capacity(layers.len() + 1);
    activations.push(x.to_vec());
    for (i, l) in layers.iter().enumerate() {
        let mut a = l.apply(&activations[i]);
        if i < last {
            a.iter_mut().for_each(|v| *v = v.tanh());
        }
        activations.push(a);
    }
    Trace { activations }
}

/// Accumulates parameter gradients into `grads` given the gradient with
/// respect to the network output; returns the gradient for the input.
pub(crate) fn backward(layers: &[Dense], trace: &Trace, d_out: &[f64], grads: &mut [Dense]) -> Vec<f64> {
    let last = layers.len() - 1;
    let mut delta = d_out.to_vec();
    for i in (0..layers.len()).rev() {
        if i < last {
            let a = &trace.activations[i + 1];
            delta.iter_mut().zip(a).for_each(|(d, v)| *d *= 1.0 - v * v);
        }
        let input = &trace.activations[i];
        let g = &mut grads[i];
        for (r, dr) in delta.iter().enumerate() {
            g.bias[r] += dr;
            for (gw, x) in g.weights.row_mut(r).iter_mut().zip(input) {
                *gw += dr * x;
            }
        }
        let w = &layers[i].weights;
        let mut d_in = vec![0.0; w.cols()];
        for (r, dr) in delta.iter().enumerate() {
            for (di, wv) in d_in.iter_mut().zip(w.row(r)) {
                *di += dr * wv;
            }
        }
        delta = d_in;
    }
    delta
}
