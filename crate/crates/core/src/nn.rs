//! Dense multilayer perceptrons.
//!
//! The tape-free [`Mlp::forward`] and the graph built by [`Mlp::build`] use
//! the same kernels, so their outputs agree bitwise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Relu => v.iter_mut().for_each(|x| *x = kernels::relu(*x)),
            Activation::Identity => {}
        }
    }

    fn node(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `[fan_in, fan_out]`
    pub w: Tensor,
    pub b: Tensor,
    pub act: Activation,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Node ids of one layer's parameters when the network is built with
/// trainable inputs.
#[derive(Clone, Copy, Debug)]
pub struct LayerParams {
    pub w: NodeId,
    pub b: NodeId,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases. `sizes` lists every layer
    /// width including input and output; the last layer is linear.
    pub fn init(sizes: &[usize], hidden: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, win)| {
                let (fi, fo) = (win[0], win[1]);
                let limit = (6.0 / (fi + fo) as f64).sqrt();
                let w = (0..fi * fo).map(|_| rng.random_range(-limit..limit)).collect();
                let act = if i + 2 == sizes.len() {
                    Activation::Identity
                } else {
                    hidden
                };
                Dense {
                    w: Tensor::matrix(fi, fo, w).expect("layer shape"),
                    b: Tensor::zeros(vec![fo]),
                    act,
                }
            })
            .collect();
        Self { layers }
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.w.data_mut().fill(0.0);
            l.b.data_mut().fill(0.0);
        }
        out
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::fan_out));
        s
    }

    /// Batched forward pass over `rows` row-major inputs.
    pub fn forward_batch(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        if x.len() != rows * self.input_dim() {
            return Err(Error::Dimension {
                what: "mlp input",
                expected: rows * self.input_dim(),
                got: x.len(),
            });
        }
        let mut h = x.to_vec();
        for l in &self.layers {
            let mut next = kernels::affine(&h, rows, l.fan_in(), l.w.data(), l.fan_out(), Some(l.b.data()));
            l.act.apply(&mut next);
            h = next;
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(x, 1)
    }

    /// Appends the network to `g` with its weights as constants.
    pub fn build(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let mut h = x;
        for l in &self.layers {
            let w = g.constant(l.w.clone());
            let b = g.constant(l.b.clone());
            let a = g.affine(h, w, b);
            h = l.act.node(g, a);
        }
        h
    }

    /// Appends the network with its weights as named inputs
    /// (`{prefix}.{layer}.w` / `.b`) and binds their current values.
    pub fn build_trainable(&self, g: &mut Graph, x: NodeId, prefix: &str) -> Result<(NodeId, Vec<LayerParams>)> {
        let mut h = x;
        let mut params = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let (wn, bn) = param_names(prefix, i);
            let w = g.input(&wn);
            let b = g.input(&bn);
            g.set_input(&wn, l.w.clone())?;
            g.set_input(&bn, l.b.clone())?;
            let a = g.affine(h, w, b);
            h = l.act.node(g, a);
            params.push(LayerParams { w, b });
        }
        Ok((h, params))
    }

    /// Rebinds the trainable inputs created by [`Mlp::build_trainable`].
    pub fn bind(&self, g: &mut Graph, prefix: &str) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let (wn, bn) = param_names(prefix, i);
            g.set_input(&wn, l.w.clone())?;
            g.set_input(&bn, l.b.clone())?;
        }
        Ok(())
    }

    /// Parameter tensors in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

fn param_names(prefix: &str, i: usize) -> (String, String) {
    (format!("{prefix}.{i}.w"), format!("{prefix}.{i}.b"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Straight-line forward pass written without the shared kernels.
    fn reference_forward(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &mlp.layers {
            let (fi, fo) = (l.fan_in(), l.fan_out());
            let mut out = vec![0.0; fo];
            for j in 0..fo {
                let mut s = l.b.data()[j];
                for i in 0..fi {
                    s += h[i] * l.w.data()[i * fo + j];
                }
                out[j] = match l.act {
                    Activation::Tanh => s.tanh(),
                    Activation::Relu => s.max(0.0),
                    Activation::Identity => s,
                };
            }
            h = out;
        }
        h
    }

    #[test]
    fn tanh_mlp_matches_hand_rolled_forward() {
        let mut r = rng::stream(42, &[]);
        let mlp = Mlp::init(&[5, 7, 6, 3], Activation::Tanh, &mut r);
        let x = [0.1, -0.4, 0.9, 0.3, -0.2];
        let got = mlp.forward(&x).unwrap();
        let want = reference_forward(&mlp, &x);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn graph_and_tape_free_paths_agree_bitwise() {
        let mut r = rng::stream(3, &[]);
        let mlp = Mlp::init(&[4, 8, 8, 2], Activation::Relu, &mut r);
        let x = vec![0.5, -1.0, 0.25, 2.0, 0.1, 0.2, 0.3, 0.4];
        let tape_free = mlp.forward_batch(&x, 2).unwrap();
        let mut g = Graph::new();
        let xi = g.input("x");
        let out = mlp.build(&mut g, xi);
        g.set_input("x", Tensor::matrix(2, 4, x).unwrap()).unwrap();
        g.forward().unwrap();
        assert_eq!(g.value(out).unwrap().data(), tape_free.as_slice());
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let mut r = rng::stream(0, &[]);
        let mlp = Mlp::init(&[3, 2], Activation::Tanh, &mut r);
        assert!(matches!(mlp.forward(&[1.0]), Err(Error::Dimension { .. })));
    }
}
