use serde::{Deserialize, Serialize};

use super::objective::label_cross_entropy;
use super::ExperimentConfig;
use crate::autodiff::kernels;
use crate::error::{Error, Result};
use crate::models::{argmax, ModelBundle};

/// One counterfactual and everything needed to score it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateCE {
    /// Start index within its set.
    pub index: usize,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub posterior: Vec<f64>,
    /// Predictive entropy of `x`.
    pub h: f64,
    /// l1 distance from `x` to the original input.
    pub d_x: f64,
    /// Cross-entropy of `posterior` against the original hard label.
    pub d_y: f64,
    /// l2 latent distance to the encoded original input.
    pub rho: f64,
    pub cost: f64,
    pub label: usize,
    pub accepted: bool,
    /// Objective value at the start of the descent that produced this point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_cost: Option<f64>,
}

/// Reference point a candidate is scored against.
#[derive(Clone, Debug)]
pub struct Origin<'a> {
    pub x0: &'a [f64],
    pub z0: &'a [f64],
    pub label0: usize,
}

/// Cost weights and acceptance threshold.
#[derive(Clone, Copy, Debug)]
pub struct Scoring {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub h_threshold: f64,
}

impl Scoring {
    /// `H + lambda_x d_x + lambda_y d_y`, adding only the active terms.
    pub fn cost(&self, h: f64, d_x: f64, d_y: f64) -> f64 {
        let mut c = h;
        if self.lambda_x > 0.0 {
            c += self.lambda_x * d_x;
        }
        if self.lambda_y > 0.0 {
            c += self.lambda_y * d_y;
        }
        c
    }
}

impl CandidateCE {
    /// Scores an already decoded and classified point.
    pub fn from_parts(index: usize, z: Vec<f64>, x: Vec<f64>, posterior: Vec<f64>, origin: &Origin, s: &Scoring) -> Self {
        let h = kernels::entropy(&posterior);
        let d_x = kernels::l1_dist(&x, origin.x0);
        let d_y = label_cross_entropy(&posterior, origin.label0);
        let rho = kernels::l2_dist(&z, origin.z0);
        Self {
            index,
            label: argmax(&posterior),
            cost: s.cost(h, d_x, d_y),
            accepted: h < s.h_threshold,
            z,
            x,
            posterior,
            h,
            d_x,
            d_y,
            rho,
            start_cost: None,
        }
    }

    /// Decodes and classifies `z`.
    pub fn evaluate(bundle: &ModelBundle, index: usize, z: Vec<f64>, origin: &Origin, s: &Scoring) -> Result<Self> {
        let x = bundle.decode(&z)?;
        let post = bundle.predict(&x)?;
        Ok(Self::from_parts(index, z, x, post.probs, origin, s))
    }
}

/// Iterates and objective values of one descent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `iters + 1` latent points, start first.
    pub points: Vec<Vec<f64>>,
    /// Objective at each point.
    pub losses: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CESet {
    pub config: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_id: Option<usize>,
    pub x0: Vec<f64>,
    pub z0: Vec<f64>,
    pub label0: usize,
    pub h0: f64,
    pub h_threshold: f64,
    pub candidates: Vec<CandidateCE>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<Vec<Trajectory>>,
}

impl CESet {
    pub fn accepted(&self) -> impl Iterator<Item = &CandidateCE> {
        self.candidates.iter().filter(|c| c.accepted)
    }

    /// Lowest-cost accepted candidate, first index on ties.
    pub fn best(&self) -> Option<&CandidateCE> {
        self.accepted().fold(None, |best: Option<&CandidateCE>, c| match best {
            Some(b) if b.cost <= c.cost => Some(b),
            _ => Some(c),
        })
    }
}

/// Class distribution over accepted candidates: each class present gets
/// weight `1 / (min cost in class)^2`, normalised. A class whose minimum
/// cost is zero takes all the mass (the lowest such class on ties).
pub fn label_distribution(set: &CESet, classes: usize) -> Result<Vec<f64>> {
    let mut min_cost = vec![f64::INFINITY; classes];
    let mut any = false;
    for c in set.accepted() {
        if c.label >= classes {
            return Err(Error::Dimension {
                what: "candidate label",
                expected: classes,
                got: c.label,
            });
        }
        min_cost[c.label] = min_cost[c.label].min(c.cost);
        any = true;
    }
    if !any {
        return Err(Error::EmptySet);
    }
    let mut out = vec![0.0; classes];
    if let Some(zero) = min_cost.iter().position(|&c| c == 0.0) {
        out[zero] = 1.0;
        return Ok(out);
    }
    for (o, &c) in out.iter_mut().zip(&min_cost) {
        if c.is_finite() {
            *o = 1.0 / (c * c);
        }
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}
