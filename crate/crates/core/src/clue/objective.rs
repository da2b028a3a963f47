use std::sync::Arc;

use crate::autodiff::{kernels, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::models::{argmax, EvalCounts, ModelBundle};

/// Floor applied to the original-label probability before taking its log.
pub(crate) const PROB_FLOOR: f64 = 1e-300;

/// The counterfactual objective as a reusable graph over the latent `z`:
/// `H(predict(decode(z))) + lambda_x * l1(decode(z), x0) + lambda_y * d_y`,
/// where `d_y` is the cross-entropy against the original hard label.
#[derive(Clone, Debug)]
pub struct Objective {
    g: Graph,
    z: NodeId,
    x: NodeId,
    probs: NodeId,
    h: NodeId,
    dx: Option<NodeId>,
    dy: Option<NodeId>,
    loss: NodeId,
    latent: usize,
    counts: Arc<EvalCounts>,
}

/// Objective value and its parts at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl Objective {
    pub fn new(bundle: &ModelBundle, x0: &[f64], lambda_x: f64, lambda_y: f64) -> Result<Self> {
        let dims = bundle.dims();
        if x0.len() != dims.input {
            return Err(Error::Dimension {
                what: "original input",
                expected: dims.input,
                got: x0.len(),
            });
        }
        let mut g = Graph::new();
        let z = g.input("z");
        let x = bundle.decode_node(&mut g, z);
        let probs = bundle.predict_node(&mut g, x);
        let h = g.entropy(probs);
        let mut loss = h;
        let mut dx = None;
        if lambda_x > 0.0 {
            let x0n = g.constant(Tensor::vector(x0.to_vec()));
            let diff = g.sub(x, x0n);
            let d = g.l1(diff);
            let term = g.scale(d, lambda_x);
            loss = g.add(loss, term);
            dx = Some(d);
        }
        let mut dy = None;
        if lambda_y > 0.0 {
            let label = argmax(&bundle.predict(x0)?.probs);
            let p = g.slice(probs, label, 1);
            let p = g.clamp_min(p, PROB_FLOOR);
            let lp = g.log(p);
            let lp = g.sum(lp);
            let d = g.scale(lp, -1.0);
            let term = g.scale(d, lambda_y);
            loss = g.add(loss, term);
            dy = Some(d);
        }
        Ok(Self {
            g,
            z,
            x,
            probs,
            h,
            dx,
            dy,
            loss,
            latent: dims.latent,
            counts: bundle.counters(),
        })
    }

    fn term_of(&self, node: NodeId) -> &'static str {
        if node <= self.x {
            "decoder"
        } else if node <= self.probs {
            "classifier"
        } else if node <= self.h {
            "entropy"
        } else if self.dx.is_some_and(|d| node <= d) {
            "input distance"
        } else if self.dy.is_some_and(|d| node <= d) {
            "prediction distance"
        } else {
            "total"
        }
    }

    fn run(&mut self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent {
            return Err(Error::Dimension {
                what: "latent point",
                expected: self.latent,
                got: z.len(),
            });
        }
        self.g.set_input("z", Tensor::vector(z.to_vec()))?;
        self.counts.count_objective();
        self.g.forward().map_err(|e| match (e, self.g.failed_node()) {
            (Error::NonFinite { what }, Some(node)) => Error::NonFinite {
                what: format!("{} term ({what})", self.term_of(node)),
            },
            (e, _) => e,
        })
    }

    pub fn value(&mut self, z: &[f64]) -> Result<f64> {
        self.run(z)?;
        Ok(self.g.value(self.loss)?.item())
    }

    pub fn value_and_grad(&mut self, z: &[f64]) -> Result<Evaluation> {
        self.run(z)?;
        let loss = self.g.value(self.loss)?.item();
        let grads = self.g.backward(self.loss)?;
        Ok(Evaluation {
            loss,
            grad: grads.data_or_zeros(self.z, self.latent),
        })
    }

    /// Entropy term at the last evaluated point.
    pub fn entropy(&self) -> Result<f64> {
        Ok(self.g.value(self.h)?.item())
    }
}

/// Cross-entropy of `probs` against `label`, with the probability floored.
pub fn label_cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Objective computed without a tape, from the same kernels.
pub fn objective_value(bundle: &ModelBundle, z: &[f64], x0: &[f64], lambda_x: f64, lambda_y: f64) -> Result<f64> {
    let x = bundle.decode(z)?;
    let post = bundle.predict(&x)?;
    let mut loss = kernels::entropy(&post.probs);
    if lambda_x > 0.0 {
        loss += lambda_x * kernels::l1_dist(&x, x0);
    }
    if lambda_y > 0.0 {
        let label = argmax(&bundle.predict(x0)?.probs);
        loss += lambda_y * label_cross_entropy(&post.probs, label);
    }
    Ok(loss)
}
