//! VAE and ensemble classifier: forward passes, graph builders, training and
//! persistence.

mod ensemble;
mod optim;
mod persist;
mod vae;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ensemble::{train_ensemble, Ensemble, EnsembleReport, EnsembleTrainConfig, EntropyHistogram};
pub use optim::Adam;
pub use vae::{train_vae, Recon, Vae, VaeReport, VaeTrainConfig};

use crate::autodiff::{kernels, Graph, NodeId};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::io::maybe_inf;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub latent: usize,
    pub classes: usize,
    pub members: usize,
}

/// Entropy cut points derived from the training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Certain iff `H <= tau_low`.
    pub tau_low: f64,
    /// Uncertain iff `H > tau_high`.
    #[serde(with = "maybe_inf")]
    pub tau_high: f64,
    /// Default acceptance threshold for counterfactuals.
    #[serde(with = "maybe_inf")]
    pub h_threshold: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub vae: VaeTrainConfig,
    pub ensemble: EnsembleTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub vae: VaeReport,
    pub ensemble: EnsembleReport,
}

/// Model-evaluation counters, used to check that amortised inference does a
/// fixed amount of work per input.
#[derive(Debug, Default)]
pub struct EvalCounts {
    encode: AtomicU64,
    decode: AtomicU64,
    predict: AtomicU64,
    objective: AtomicU64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalSnapshot {
    pub encode: u64,
    pub decode: u64,
    pub predict: u64,
    /// Passes through the counterfactual objective graph.
    pub objective: u64,
}

impl EvalSnapshot {
    pub fn since(self, before: EvalSnapshot) -> EvalSnapshot {
        EvalSnapshot {
            encode: self.encode - before.encode,
            decode: self.decode - before.decode,
            predict: self.predict - before.predict,
            objective: self.objective - before.objective,
        }
    }
}

impl EvalCounts {
    pub fn snapshot(&self) -> EvalSnapshot {
        EvalSnapshot {
            encode: self.encode.load(Ordering::Relaxed),
            decode: self.decode.load(Ordering::Relaxed),
            predict: self.predict.load(Ordering::Relaxed),
            objective: self.objective.load(Ordering::Relaxed),
        }
    }

    pub(crate) fn count_objective(&self) {
        self.objective.fetch_add(1, Ordering::Relaxed);
    }
}

/// Ensemble-averaged class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub probs: Vec<f64>,
    /// `[members][classes]`
    pub members: Vec<Vec<f64>>,
}

impl Posterior {
    pub fn label(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn entropy(&self) -> f64 {
        kernels::entropy(&self.probs)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats of a probability vector.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::NotSimplex("empty vector".into()));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < -1e-12) {
        return Err(Error::NotSimplex(format!("entry {v}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::NotSimplex(format!("entries sum to {s}")));
    }
    Ok(kernels::entropy(p))
}

/// Trained VAE and ensemble classifier over the same input space.
#[derive(Debug)]
pub struct ModelBundle {
    pub vae: Vae,
    pub ensemble: Ensemble,
    pub thresholds: Thresholds,
    pub report: Option<TrainingReport>,
    evals: Arc<EvalCounts>,
}

impl Clone for ModelBundle {
    /// Clones the parameters; the evaluation counters start from zero.
    fn clone(&self) -> Self {
        Self {
            vae: self.vae.clone(),
            ensemble: self.ensemble.clone(),
            thresholds: self.thresholds,
            report: self.report.clone(),
            evals: Arc::default(),
        }
    }
}

impl ModelBundle {
    pub fn new(vae: Vae, ensemble: Ensemble, thresholds: Thresholds) -> Result<Self> {
        if vae.input_dim() != ensemble.input_dim() {
            return Err(Error::InvalidConfig(format!(
                "VAE input width {} differs from classifier input width {}",
                vae.input_dim(),
                ensemble.input_dim()
            )));
        }
        Ok(Self {
            vae,
            ensemble,
            thresholds,
            report: None,
            evals: Arc::default(),
        })
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.vae.input_dim(),
            latent: self.vae.latent_dim(),
            classes: self.ensemble.classes(),
            members: self.ensemble.members.len(),
        }
    }

    pub fn evals(&self) -> EvalSnapshot {
        self.evals.snapshot()
    }

    pub(crate) fn counters(&self) -> Arc<EvalCounts> {
        Arc::clone(&self.evals)
    }

    fn check(&self, what: &'static str, v: &[f64], expected: usize) -> Result<()> {
        if v.len() != expected {
            return Err(Error::Dimension {
                what,
                expected,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Encoder mean.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check("encoder input", x, self.dims().input)?;
        self.evals.encode.fetch_add(1, Ordering::Relaxed);
        self.vae.encode_mean(x, 1)
    }

    pub fn encode_batch(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check("encoder input", x, rows * self.dims().input)?;
        self.evals.encode.fetch_add(rows as u64, Ordering::Relaxed);
        self.vae.encode_mean(x, rows)
    }

    /// Decoder mean, in `[0, 1]`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check("decoder input", z, self.dims().latent)?;
        self.evals.decode.fetch_add(1, Ordering::Relaxed);
        self.vae.decode(z, 1)
    }

    pub fn decode_batch(&self, z: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check("decoder input", z, rows * self.dims().latent)?;
        self.evals.decode.fetch_add(rows as u64, Ordering::Relaxed);
        self.vae.decode(z, rows)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Posterior> {
        self.check("classifier input", x, self.dims().input)?;
        self.evals.predict.fetch_add(1, Ordering::Relaxed);
        self.ensemble.posterior(x)
    }

    /// Posterior probabilities for `rows` inputs, `[rows, classes]`.
    pub fn predict_batch(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        self.check("classifier input", x, rows * self.dims().input)?;
        self.evals.predict.fetch_add(rows as u64, Ordering::Relaxed);
        self.ensemble.probs_batch(x, rows)
    }

    pub fn entropies(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        let c = self.dims().classes;
        Ok(self
            .predict_batch(x, rows)?
            .chunks(c)
            .map(kernels::entropy)
            .collect())
    }

    /// Appends `sigmoid(decoder(z))` to `g`.
    pub fn decode_node(&self, g: &mut Graph, z: NodeId) -> NodeId {
        self.vae.decode_node(g, z)
    }

    /// Appends the ensemble-mean posterior of `x` to `g`.
    pub fn predict_node(&self, g: &mut Graph, x: NodeId) -> NodeId {
        self.ensemble.probs_node(g, x)
    }

    pub fn thresholds_from(entropies: &[f64]) -> Thresholds {
        Thresholds {
            tau_low: stats::percentile(entropies, 20.0),
            tau_high: stats::percentile(entropies, 80.0),
            h_threshold: stats::median(entropies),
        }
    }
}

/// Trains the VAE and ensemble on the training split of `data`.
pub fn train_bundle(data: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<ModelBundle> {
    let train = data.indices(Split::Train);
    let test = data.indices(Split::Test);
    let (xtr, ytr) = data.gather(&train);
    let (xte, yte) = data.gather(&test);
    let (vae, vae_report) = train_vae(&xtr, train.len(), data.dim, &cfg.vae, seed)?;
    let (ensemble, mut ens_report) =
        train_ensemble(&xtr, &ytr, data.dim, data.classes, &cfg.ensemble, seed)?;
    let train_h: Vec<f64> = ensemble
        .probs_batch(&xtr, train.len())?
        .chunks(data.classes)
        .map(kernels::entropy)
        .collect();
    ens_report.evaluate(&ensemble, &xte, &yte, &train_h)?;
    let thresholds = ModelBundle::thresholds_from(&train_h);
    let mut bundle = ModelBundle::new(vae, ensemble, thresholds)?;
    bundle.report = Some(TrainingReport {
        seed,
        vae: vae_report,
        ensemble: ens_report,
    });
    Ok(bundle)
}
