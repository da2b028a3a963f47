//! Diverse counterfactual sets: joint optimisation of the k candidates with
//! a set-diversity reward, sequential search with diversity or distance
//! penalty against earlier finds, and a diversity pre-search over the
//! initialisations.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph, NodeId, Tensor};
use crate::clue::{descend, project_to_ball, CESet, ExperimentConfig, InitContext, Objective, Problem, Trajectory};
use crate::diversity::{diversity_node, evaluate_all, Metric, MetricRow, Space};
use crate::error::{Error, Result};
use crate::io;
use crate::models::ModelBundle;
use crate::stats;

/// Latent distances below this are clamped in the penalty.
pub const PENALTY_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivMethod {
    Simultaneous,
    Sequential,
    Penalty,
}

impl DivMethod {
    pub const ALL: [DivMethod; 3] = [DivMethod::Simultaneous, DivMethod::Sequential, DivMethod::Penalty];

    pub fn name(self) -> &'static str {
        match self {
            DivMethod::Simultaneous => "divclue-sim",
            DivMethod::Sequential => "divclue-seq",
            DivMethod::Penalty => "divclue-pen",
        }
    }
}

impl std::str::FromStr for DivMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "divclue-sim" | "sim" | "simultaneous" => Ok(DivMethod::Simultaneous),
            "divclue-seq" | "seq" | "sequential" => Ok(DivMethod::Sequential),
            "divclue-pen" | "pen" | "penalty" => Ok(DivMethod::Penalty),
            other => Err(Error::InvalidConfig(format!("unknown diverse method {other:?}"))),
        }
    }
}

/// The configured diversity metric over a fixed number of latent points,
/// measured in latent space or after decoding.
pub struct SetDiversity {
    g: Graph,
    z: NodeId,
    out: NodeId,
    k: usize,
    latent: usize,
}

impl SetDiversity {
    pub fn new(bundle: &ModelBundle, cfg: &ExperimentConfig, x0: &[f64], z0: &[f64], k: usize) -> Result<Self> {
        let spec = cfg.diversity;
        if !spec.metric.is_differentiable() {
            return Err(Error::NonDifferentiable(spec.metric.name()));
        }
        let mut g = Graph::new();
        let z = g.input("Z");
        let (pts, reference) = match spec.space {
            Space::Latent => (z, z0),
            Space::Input => (bundle.decode_node(&mut g, z), x0),
            Space::Prediction => {
                return Err(Error::InvalidConfig("diversity cannot be optimised in prediction space".into()));
            }
        };
        let reference = (spec.metric == Metric::Coverage).then_some(reference);
        let out = diversity_node(&mut g, &spec, pts, k, reference)?;
        Ok(Self {
            g,
            z,
            out,
            k,
            latent: bundle.dims().latent,
        })
    }

    pub fn value_and_grad(&mut self, zs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        if zs.len() != self.k {
            return Err(Error::Dimension {
                what: "diversity set size",
                expected: self.k,
                got: zs.len(),
            });
        }
        self.g.set_input("Z", Tensor::from_rows(zs)?)?;
        self.g.forward()?;
        let v = self.g.value(self.out)?.item();
        let grad = self.g.backward(self.out)?.data_or_zeros(self.z, self.k * self.latent);
        Ok((v, grad.chunks(self.latent).map(<[f64]>::to_vec).collect()))
    }
}

/// `sum_j lambda / max(||z - z_j||, floor)` and its gradient in `z`.
pub fn penalty_value_and_grad(z: &[f64], found: &[Vec<f64>], lambda: f64) -> (f64, Vec<f64>) {
    let mut value = 0.0;
    let mut grad = vec![0.0; z.len()];
    for f in found {
        let d = kernels::l2_dist(z, f);
        if d > PENALTY_FLOOR {
            value += lambda / d;
            let s = -lambda / (d * d * d);
            for ((g, a), b) in grad.iter_mut().zip(z).zip(f) {
                *g += s * (a - b);
            }
        } else {
            value += lambda / PENALTY_FLOOR;
        }
    }
    (value, grad)
}

/// `n_i` projected ascent steps on the set diversity, keeping every start
/// inside the initialisation ball.
pub fn presearch(bundle: &ModelBundle, cfg: &ExperimentConfig, x0: &[f64], z0: &[f64], starts: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    if cfg.n_i == 0 {
        return Ok(starts);
    }
    let mut div = SetDiversity::new(bundle, cfg, x0, z0, starts.len())?;
    let mut zs = starts;
    for _ in 0..cfg.n_i {
        let (_, grads) = div.value_and_grad(&zs)?;
        zs = zs
            .iter()
            .zip(&grads)
            .map(|(z, g)| {
                let up: Vec<f64> = z.iter().zip(g).map(|(a, b)| a + cfg.presearch_lr * b).collect();
                project_to_ball(&up, z0, cfg.r)
            })
            .collect();
    }
    Ok(zs)
}

/// A diverse set together with its optimisation history and metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivRunRecord {
    pub method: String,
    pub config: ExperimentConfig,
    /// Joint objective before each update.
    pub joint_loss: Vec<f64>,
    pub set: CESet,
    /// All metrics over the accepted candidates; empty when none is accepted.
    pub evaluation: Vec<MetricRow>,
}

impl DivRunRecord {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        io::to_json(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_json()?)
    }
}

pub fn diverse_clue(
    method: DivMethod,
    x0: &[f64],
    bundle: &ModelBundle,
    cfg: &ExperimentConfig,
    ctx: &InitContext,
) -> Result<DivRunRecord> {
    let p = Problem::new(bundle, x0, cfg)?;
    let starts = presearch(bundle, cfg, &p.x0, &p.z0, p.starts(ctx)?)?
        .into_iter()
        .map(|z| p.confine(z))
        .collect();
    let (ends, joint_loss) = match method {
        DivMethod::Simultaneous => simultaneous(&p, starts)?,
        DivMethod::Sequential | DivMethod::Penalty => sequential(&p, starts, method)?,
    };
    let set = p.finish(ends)?;
    let accepted: Vec<_> = set.accepted().collect();
    let evaluation = evaluate_all(&accepted, &set.x0, &set.z0, bundle.dims().classes)?;
    Ok(DivRunRecord {
        method: method.name().into(),
        config: cfg.clone(),
        joint_loss,
        set,
        evaluation,
    })
}

type Ends = Vec<(Vec<f64>, Trajectory)>;

/// `-lambda_d D(Z) + mean_i L_i(z_i)` over a set of k latent points.
pub struct JointObjective {
    objs: Vec<Objective>,
    div: SetDiversity,
    lambda_d: f64,
}

pub struct JointEvaluation {
    pub value: f64,
    pub losses: Vec<f64>,
    pub loss_grads: Vec<Vec<f64>>,
    /// Gradient of `D` alone.
    pub div_grads: Vec<Vec<f64>>,
}

impl JointEvaluation {
    /// Gradient of the joint value in each point.
    pub fn grad(&self, lambda_d: f64) -> Vec<Vec<f64>> {
        let k = self.losses.len() as f64;
        self.loss_grads
            .iter()
            .zip(&self.div_grads)
            .map(|(l, d)| l.iter().zip(d).map(|(a, b)| a / k - lambda_d * b).collect())
            .collect()
    }
}

impl JointObjective {
    pub fn new(bundle: &ModelBundle, x0: &[f64], cfg: &ExperimentConfig, k: usize) -> Result<Self> {
        Self::from_problem(&Problem::new(bundle, x0, cfg)?, k)
    }

    fn from_problem(p: &Problem, k: usize) -> Result<Self> {
        Ok(Self {
            objs: (0..k).map(|_| p.objective()).collect::<Result<_>>()?,
            div: SetDiversity::new(p.bundle, p.cfg, &p.x0, &p.z0, k)?,
            lambda_d: p.cfg.lambda_d,
        })
    }

    pub fn evaluate(&mut self, zs: &[Vec<f64>]) -> Result<JointEvaluation> {
        let evals = self
            .objs
            .par_iter_mut()
            .zip(zs.par_iter())
            .map(|(o, z)| o.value_and_grad(z))
            .collect::<Result<Vec<_>>>()?;
        let (d, div_grads) = self.div.value_and_grad(zs)?;
        let losses: Vec<f64> = evals.iter().map(|e| e.loss).collect();
        let mean = losses.iter().sum::<f64>() / zs.len() as f64;
        Ok(JointEvaluation {
            value: mean - self.lambda_d * d,
            losses,
            loss_grads: evals.into_iter().map(|e| e.grad).collect(),
            div_grads,
        })
    }

    pub fn value_and_grad(&mut self, zs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
        let e = self.evaluate(zs)?;
        Ok((e.value, e.grad(self.lambda_d)))
    }
}

/// Joint descent on `-lambda_d D(Z) + mean_i L_i(z_i)`. Each candidate steps
/// along `grad L_i - k lambda_d grad_i D`, k times the joint gradient, so the
/// per-candidate step size matches the independent descents.
fn simultaneous(p: &Problem, starts: Vec<Vec<f64>>) -> Result<(Ends, Vec<f64>)> {
    let cfg = p.cfg;
    let k = starts.len();
    if cfg.lambda_d == 0.0 {
        let ends = starts
            .into_par_iter()
            .map(|s| {
                let mut obj = p.objective()?;
                descend(p, &mut obj, s)
            })
            .collect::<Result<Ends>>()?;
        let joint = (0..cfg.iters)
            .map(|t| ends.iter().map(|(_, tr)| tr.losses[t]).sum::<f64>() / k as f64)
            .collect();
        return Ok((ends, joint));
    }
    let mut joint_obj = JointObjective::from_problem(p, k)?;
    let mut trajs = vec![Trajectory::default(); k];
    let mut zs = starts;
    let mut joint = Vec::with_capacity(cfg.iters);
    let weight = k as f64 * cfg.lambda_d;
    for _ in 0..cfg.iters {
        let e = joint_obj.evaluate(&zs)?;
        joint.push(e.value);
        for i in 0..k {
            trajs[i].losses.push(e.losses[i]);
            if cfg.trace {
                trajs[i].points.push(zs[i].clone());
            }
            let grad: Vec<f64> = e.loss_grads[i].iter().zip(&e.div_grads[i]).map(|(a, b)| a - weight * b).collect();
            zs[i] = p.step(&zs[i], &grad);
        }
    }
    let objs = &mut joint_obj.objs;
    for (i, o) in objs.iter_mut().enumerate() {
        trajs[i].losses.push(o.value(&zs[i])?);
        if cfg.trace {
            trajs[i].points.push(zs[i].clone());
        }
    }
    Ok((zs.into_iter().zip(trajs).collect(), joint))
}

/// One candidate at a time; each sub-run is pushed away from the candidates
/// already found, through the set diversity or the inverse-distance penalty.
fn sequential(p: &Problem, starts: Vec<Vec<f64>>, method: DivMethod) -> Result<(Ends, Vec<f64>)> {
    let cfg = p.cfg;
    let k = starts.len();
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut ends = Vec::with_capacity(k);
    let mut joint_sum = vec![0.0; cfg.iters];
    for start in starts {
        let mut obj = p.objective()?;
        let active = cfg.lambda_d > 0.0 && !found.is_empty();
        if !active {
            let (z, t) = descend(p, &mut obj, start)?;
            joint_sum.iter_mut().zip(&t.losses).for_each(|(s, l)| *s += l);
            found.push(z.clone());
            ends.push((z, t));
            continue;
        }
        let mut div = match method {
            DivMethod::Sequential => Some(SetDiversity::new(p.bundle, cfg, &p.x0, &p.z0, found.len() + 1)?),
            _ => None,
        };
        let mut t = Trajectory::default();
        let mut z = start;
        let mut set = found.clone();
        set.push(Vec::new());
        for s in joint_sum.iter_mut() {
            let e = obj.value_and_grad(&z)?;
            t.losses.push(e.loss);
            if cfg.trace {
                t.points.push(z.clone());
            }
            let (extra, extra_grad) = match div.as_mut() {
                Some(div) => {
                    *set.last_mut().expect("own slot") = z.clone();
                    let (d, mut grads) = div.value_and_grad(&set)?;
                    let g = grads.pop().expect("own gradient");
                    (-cfg.lambda_d * d, g.into_iter().map(|v| -cfg.lambda_d * v).collect::<Vec<_>>())
                }
                None => penalty_value_and_grad(&z, &found, cfg.lambda_d),
            };
            *s += e.loss + extra;
            let grad: Vec<f64> = e.grad.iter().zip(&extra_grad).map(|(a, b)| a + b).collect();
            z = p.step(&z, &grad);
        }
        t.losses.push(obj.value(&z)?);
        if cfg.trace {
            t.points.push(z.clone());
        }
        found.push(z.clone());
        ends.push((z, t));
    }
    let joint = joint_sum.into_iter().map(|s| s / k as f64).collect();
    Ok((ends, joint))
}

/// One row of a diversity-weight ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub lambda_d: f64,
    pub metric: Metric,
    pub space: Space,
    pub value: f64,
    /// Mean terminal entropy over all k candidates.
    pub mean_h: f64,
    /// Mean input distance over all k candidates.
    pub mean_dx: f64,
}

/// Runs `method` once per diversity weight and reports every metric.
pub fn ablation(
    method: DivMethod,
    x0: &[f64],
    bundle: &ModelBundle,
    cfg: &ExperimentConfig,
    ctx: &InitContext,
    lambdas: &[f64],
) -> Result<Vec<AblationRow>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one lambda_d value".into()));
    }
    let mut rows = Vec::new();
    for &lambda_d in lambdas {
        let run_cfg = ExperimentConfig { lambda_d, ..cfg.clone() };
        let rec = diverse_clue(method, x0, bundle, &run_cfg, ctx)?;
        let hs: Vec<f64> = rec.set.candidates.iter().map(|c| c.h).collect();
        let dxs: Vec<f64> = rec.set.candidates.iter().map(|c| c.d_x).collect();
        let (mean_h, mean_dx) = (stats::mean(&hs), stats::mean(&dxs));
        rows.extend(rec.evaluation.iter().map(|m| AblationRow {
            lambda_d,
            metric: m.metric,
            space: m.space,
            value: m.value,
            mean_h,
            mean_dx,
        }));
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> Result<Vec<u8>> {
    io::to_csv(rows)
}
