use rayon::prelude::*;

use super::ceset::{CESet, CandidateCE, Origin, Scoring, Trajectory};
use super::init::{init_point, InitContext};
use super::objective::Objective;
use super::ExperimentConfig;
use crate::autodiff::kernels;
use crate::error::Result;
use crate::models::{argmax, ModelBundle};

/// Projects `z` onto the closed l2 ball of radius `delta` around `z0`.
pub fn project_to_ball(z: &[f64], z0: &[f64], delta: f64) -> Vec<f64> {
    let diff: Vec<f64> = z.iter().zip(z0).map(|(a, b)| a - b).collect();
    let n = kernels::l2_norm(&diff);
    if n <= delta {
        return z.to_vec();
    }
    // Rounding can leave the scaled point a few ulps outside; shrink until
    // it passes the same test, so projecting again changes nothing.
    let mut scale = delta;
    let mut step = delta * f64::EPSILON;
    for _ in 0..64 {
        let p: Vec<f64> = z0.iter().zip(&diff).map(|(c, d)| c + scale * (d / n)).collect();
        if kernels::l2_dist(&p, z0) <= delta {
            return p;
        }
        scale -= step;
        step *= 2.0;
    }
    z0.to_vec()
}

/// Shared state for explaining one input.
pub(crate) struct Problem<'a> {
    pub bundle: &'a ModelBundle,
    pub cfg: &'a ExperimentConfig,
    pub x0: Vec<f64>,
    pub z0: Vec<f64>,
    pub label0: usize,
    pub h0: f64,
    pub scoring: Scoring,
}

impl<'a> Problem<'a> {
    pub fn new(bundle: &'a ModelBundle, x0: &[f64], cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let z0 = bundle.encode(x0)?;
        let post = bundle.predict(x0)?;
        Ok(Self {
            bundle,
            cfg,
            x0: x0.to_vec(),
            z0,
            label0: argmax(&post.probs),
            h0: post.entropy(),
            scoring: Scoring {
                lambda_x: cfg.lambda_x,
                lambda_y: cfg.lambda_y,
                h_threshold: cfg.h_threshold.unwrap_or(bundle.thresholds.h_threshold),
            },
        })
    }

    pub fn origin(&self) -> Origin<'_> {
        Origin {
            x0: &self.x0,
            z0: &self.z0,
            label0: self.label0,
        }
    }

    pub fn objective(&self) -> Result<Objective> {
        Objective::new(self.bundle, &self.x0, self.cfg.lambda_x, self.cfg.lambda_y)
    }

    /// Initial points, pulled into the search ball when `r > delta`.
    pub fn starts(&self, ctx: &InitContext) -> Result<Vec<Vec<f64>>> {
        (0..self.cfg.k)
            .map(|i| {
                init_point(self.cfg.scheme, &self.z0, self.cfg.r, i, self.cfg.k, self.cfg.seed, ctx, self.bundle)
                    .map(|z| self.confine(z))
            })
            .collect()
    }

    pub fn confine(&self, z: Vec<f64>) -> Vec<f64> {
        if self.cfg.delta.is_finite() {
            project_to_ball(&z, &self.z0, self.cfg.delta)
        } else {
            z
        }
    }

    /// Gradient step followed by projection when the radius is finite.
    pub fn step(&self, z: &[f64], grad: &[f64]) -> Vec<f64> {
        let lr = self.cfg.lr;
        self.confine(z.iter().zip(grad).map(|(a, g)| a - lr * g).collect())
    }

    pub fn finish(&self, ends: Vec<(Vec<f64>, Trajectory)>) -> Result<CESet> {
        let origin = self.origin();
        let mut candidates = Vec::with_capacity(ends.len());
        let mut trajectories = Vec::with_capacity(ends.len());
        for (i, (z, t)) in ends.into_iter().enumerate() {
            let mut c = CandidateCE::evaluate(self.bundle, i, z, &origin, &self.scoring)?;
            c.start_cost = t.losses.first().copied();
            candidates.push(c);
            trajectories.push(t);
        }
        Ok(CESet {
            config: self.cfg.clone(),
            input_id: None,
            x0: self.x0.clone(),
            z0: self.z0.clone(),
            label0: self.label0,
            h0: self.h0,
            h_threshold: self.scoring.h_threshold,
            candidates,
            trajectories: self.cfg.trace.then_some(trajectories),
        })
    }
}

/// Projected gradient descent from `start`; records every iterate when
/// `trace` is set and the objective at every iterate regardless.
pub(crate) fn descend(p: &Problem, obj: &mut Objective, start: Vec<f64>) -> Result<(Vec<f64>, Trajectory)> {
    let mut t = Trajectory::default();
    let mut z = start;
    for _ in 0..p.cfg.iters {
        let e = obj.value_and_grad(&z)?;
        t.losses.push(e.loss);
        if p.cfg.trace {
            t.points.push(z.clone());
        }
        z = p.step(&z, &e.grad);
    }
    t.losses.push(obj.value(&z)?);
    if p.cfg.trace {
        t.points.push(z.clone());
    }
    Ok((z, t))
}

/// k independent projected descents from the configured initialisations.
/// Candidates with terminal entropy below the threshold are accepted.
pub fn delta_clue(x0: &[f64], bundle: &ModelBundle, cfg: &ExperimentConfig, ctx: &InitContext) -> Result<CESet> {
    let p = Problem::new(bundle, x0, cfg)?;
    let starts = p.starts(ctx)?;
    let ends = starts
        .into_par_iter()
        .map(|s| {
            let mut obj = p.objective()?;
            descend(&p, &mut obj, s)
        })
        .collect::<Result<Vec<_>>>()?;
    p.finish(ends)
}

/// Unconstrained descent from the encoded input.
pub fn clue(x0: &[f64], bundle: &ModelBundle, cfg: &ExperimentConfig) -> Result<CESet> {
    let one = ExperimentConfig {
        delta: f64::INFINITY,
        r: 0.0,
        k: 1,
        ..cfg.clone()
    };
    let p = Problem::new(bundle, x0, &one)?;
    let mut obj = p.objective()?;
    let mut z = p.z0.clone();
    let mut t = Trajectory::default();
    for _ in 0..one.iters {
        let e = obj.value_and_grad(&z)?;
        t.losses.push(e.loss);
        if one.trace {
            t.points.push(z.clone());
        }
        z = z.iter().zip(&e.grad).map(|(a, g)| a - one.lr * g).collect();
    }
    t.losses.push(obj.value(&z)?);
    if one.trace {
        t.points.push(z.clone());
    }
    p.finish(vec![(z, t)])
}
