use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use super::{argmax, Posterior};
use crate::autodiff::{kernels, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::{rng, stats};

/// Independently trained classifiers whose softmax outputs are averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Mlp>,
}

impl Ensemble {
    pub fn input_dim(&self) -> usize {
        self.members[0].input_dim()
    }

    pub fn classes(&self) -> usize {
        self.members[0].output_dim()
    }

    fn member_probs(&self, x: &[f64], rows: usize) -> Result<Vec<Vec<f64>>> {
        let c = self.classes();
        self.members
            .iter()
            .map(|m| {
                let logits = m.forward_batch(x, rows)?;
                let mut p = vec![0.0; logits.len()];
                for (src, dst) in logits.chunks(c).zip(p.chunks_mut(c)) {
                    kernels::softmax_row(src, dst);
                }
                Ok(p)
            })
            .collect()
    }

    /// Member average accumulated in member order, then divided, matching
    /// the graph's `mean_rows`.
    fn average(per_member: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = per_member[0].clone();
        for p in &per_member[1..] {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        let e = per_member.len() as f64;
        acc.iter_mut().for_each(|a| *a /= e);
        acc
    }

    pub fn posterior(&self, x: &[f64]) -> Result<Posterior> {
        let members = self.member_probs(x, 1)?;
        Ok(Posterior {
            probs: Self::average(&members),
            members,
        })
    }

    pub fn probs_batch(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        Ok(Self::average(&self.member_probs(x, rows)?))
    }

    pub fn probs_node(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let rows: Vec<NodeId> = self
            .members
            .iter()
            .map(|m| {
                let logits = m.build(g, x);
                g.softmax(logits)
            })
            .collect();
        let stacked = g.stack(&rows);
        g.mean_rows(stacked)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleTrainConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for EnsembleTrainConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: vec![32, 32],
            epochs: 40,
            batch_size: 64,
            lr: 3e-3,
        }
    }
}

/// Entropy counts over equal-width bins on `[0, ln c]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    pub edges: Vec<f64>,
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    /// Mean cross-entropy per training point, per member and epoch.
    pub member_loss_curves: Vec<Vec<f64>>,
    pub heldout_accuracy: f64,
    pub heldout_count: usize,
    pub entropy_histogram: EntropyHistogram,
    /// 20th, 50th and 80th percentile of training-set entropies.
    pub train_entropy_percentiles: [f64; 3],
}

impl EnsembleReport {
    pub(crate) fn evaluate(&mut self, ens: &Ensemble, x: &[f64], y: &[usize], train_h: &[f64]) -> Result<()> {
        let c = ens.classes();
        let probs = if y.is_empty() {
            Vec::new()
        } else {
            ens.probs_batch(x, y.len())?
        };
        let correct = probs
            .chunks(c)
            .zip(y)
            .filter(|(p, &label)| argmax(p) == label)
            .count();
        self.heldout_count = y.len();
        self.heldout_accuracy = if y.is_empty() {
            f64::NAN
        } else {
            correct as f64 / y.len() as f64
        };
        let held_h: Vec<f64> = probs.chunks(c).map(kernels::entropy).collect();
        const BINS: usize = 20;
        let top = (c as f64).ln();
        let edges: Vec<f64> = (0..=BINS).map(|i| top * i as f64 / BINS as f64).collect();
        let count = |hs: &[f64]| {
            let mut out = vec![0; BINS];
            for &h in hs {
                let b = ((h / top) * BINS as f64).floor() as usize;
                out[b.min(BINS - 1)] += 1;
            }
            out
        };
        self.entropy_histogram = EntropyHistogram {
            edges,
            train: count(train_h),
            heldout: count(&held_h),
        };
        self.train_entropy_percentiles = [
            stats::percentile(train_h, 20.0),
            stats::percentile(train_h, 50.0),
            stats::percentile(train_h, 80.0),
        ];
        Ok(())
    }
}

fn train_member(
    x: &[f64],
    y: &[usize],
    dim: usize,
    classes: usize,
    cfg: &EnsembleTrainConfig,
    seed: u64,
    member: usize,
) -> Result<(Mlp, Vec<f64>)> {
    let n = y.len();
    let mut r = rng::stream(seed, &[rng::ENSEMBLE, member as u64]);
    let mut sizes = vec![dim];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(classes);
    let mut mlp = Mlp::init(&sizes, Activation::Relu, &mut r);

    let mut g = Graph::new();
    let xi = g.input("x");
    let onehot = g.input("onehot");
    let neg_inv_b = g.input("neg_inv_b");
    let (logits, params) = mlp.build_trainable(&mut g, xi, "m")?;
    let ls = g.log_softmax(logits);
    let picked = g.mul(ls, onehot);
    let s = g.sum(picked);
    let loss = g.mul(s, neg_inv_b);

    let ids: Vec<NodeId> = params.iter().flat_map(|p| [p.w, p.b]).collect();
    let lens: Vec<usize> = mlp.tensors().into_iter().map(Tensor::len).collect();
    let mut adam = Adam::new(cfg.lr, &lens);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut xb = Vec::with_capacity(b * dim);
            let mut oh = vec![0.0; b * classes];
            for (k, &i) in batch.iter().enumerate() {
                xb.extend_from_slice(&x[i * dim..(i + 1) * dim]);
                oh[k * classes + y[i]] = 1.0;
            }
            g.set_input("x", Tensor::matrix(b, dim, xb)?)?;
            g.set_input("onehot", Tensor::matrix(b, classes, oh)?)?;
            g.set_input("neg_inv_b", Tensor::scalar(-1.0 / b as f64))?;
            let diverged = |loss| Error::Divergence {
                stage: "ensemble",
                epoch,
                loss,
            };
            g.forward().map_err(|e| if e.is_numerical() { diverged(f64::NAN) } else { e })?;
            let lv = g.value(loss)?.item();
            if !lv.is_finite() {
                return Err(diverged(lv));
            }
            let grads = g.backward(loss)?;
            let gv: Vec<Vec<f64>> = ids.iter().zip(&lens).map(|(&id, &l)| grads.data_or_zeros(id, l)).collect();
            adam.step(&mut mlp.tensors_mut(), &gv);
            mlp.bind(&mut g, "m")?;
            total += lv * b as f64;
        }
        curve.push(total / n as f64);
    }
    Ok((mlp, curve))
}

/// Trains `cfg.members` classifiers from distinct seed-derived
/// initialisations and shuffles. Members train in parallel.
pub fn train_ensemble(
    x: &[f64],
    y: &[usize],
    dim: usize,
    classes: usize,
    cfg: &EnsembleTrainConfig,
    seed: u64,
) -> Result<(Ensemble, EnsembleReport)> {
    if y.is_empty() || x.len() != y.len() * dim {
        return Err(Error::InvalidConfig("ensemble training set is empty or mis-shaped".into()));
    }
    if let Some(bad) = y.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidConfig(format!("label {bad} outside [0, {classes})")));
    }
    if cfg.members == 0 || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("members, epochs and batch size must be positive".into()));
    }
    let trained: Vec<(Mlp, Vec<f64>)> = (0..cfg.members)
        .into_par_iter()
        .map(|k| train_member(x, y, dim, classes, cfg, seed, k))
        .collect::<Result<_>>()?;
    let (members, curves) = trained.into_iter().unzip();
    let report = EnsembleReport {
        member_loss_curves: curves,
        heldout_accuracy: f64::NAN,
        heldout_count: 0,
        entropy_histogram: EntropyHistogram::default(),
        train_entropy_percentiles: [f64::NAN; 3],
    };
    Ok((Ensemble { members }, report))
}
