//! Global latent translations from uncertain to certain groups, and the
//! baselines they are compared against.
//!
//! A trained mapper turns an input into a counterfactual with one encode,
//! one vector add and one decode, so its cost per point does not depend on
//! any search budget.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, nearest, Graph, Tensor};
use crate::clue::{label_cross_entropy, CESet, CandidateCE, Scoring};
use crate::error::{Error, Result};
use crate::io;
use crate::models::{argmax, ModelBundle};
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapperConfig {
    pub lambda_theta: f64,
    pub lr: f64,
    pub steps: usize,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            lambda_theta: 0.01,
            lr: 0.05,
            steps: 1000,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_theta >= 0.0 && self.lambda_theta.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda_theta must be finite and >= 0, got {}", self.lambda_theta)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("mapper lr must be finite and > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapperReport {
    pub source_points: usize,
    pub target_points: usize,
    pub initial_theta: Vec<f64>,
    /// Full objective before each step and after the last one.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub nonzero: usize,
}

/// Latent translation `theta` taking group `source` towards group `target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlamMapper {
    pub source: usize,
    pub target: usize,
    pub config: MapperConfig,
    pub theta: Vec<f64>,
    pub report: MapperReport,
}

/// Result of mapping one input.
#[derive(Clone, Debug, PartialEq)]
pub struct Mapped {
    pub x: Vec<f64>,
    pub posterior: Vec<f64>,
}

fn rows_check(what: &'static str, x: &[f64], rows: usize, dim: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::EmptyGroup(what.into()));
    }
    if x.len() != rows * dim {
        return Err(Error::Dimension {
            what,
            expected: rows * dim,
            got: x.len(),
        });
    }
    Ok(())
}

fn column_mean(x: &[f64], rows: usize, dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for r in x.chunks(dim) {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|v| *v /= rows as f64);
    m
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// The mapper's data term, `mean_u min_c ||decode(z_u + theta) - x_c||^2`,
/// as a graph over the input `theta`.
pub struct MapperLoss {
    g: Graph,
    theta: crate::NodeId,
    out: crate::NodeId,
}

impl MapperLoss {
    pub fn new(bundle: &ModelBundle, zu: &[f64], nu: usize, xc: &[f64], nc: usize) -> Result<Self> {
        let dims = bundle.dims();
        let mut g = Graph::new();
        let theta = g.input("theta");
        let z = g.constant(Tensor::matrix(nu, dims.latent, zu.to_vec())?);
        let shifted = g.add_row(z, theta);
        let x = bundle.decode_node(&mut g, shifted);
        let d = g.nearest_sq_dist(x, Tensor::matrix(nc, dims.input, xc.to_vec())?);
        let out = g.mean(d);
        Ok(Self { g, theta, out })
    }

    pub fn value_and_grad(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.g.set_input("theta", Tensor::vector(theta.to_vec()))?;
        self.g.forward()?;
        let v = self.g.value(self.out)?.item();
        let grad = self.g.backward(self.out)?.data_or_zeros(self.theta, theta.len());
        Ok((v, grad))
    }
}

/// Fits `theta` by proximal gradient descent on
/// `lambda_theta ||theta||_1 + mean_u min_c ||decode(z_u + theta) - x_c||^2`,
/// starting from the difference of latent group means.
#[allow(clippy::too_many_arguments)]
pub fn train_mapper(
    bundle: &ModelBundle,
    xu: &[f64],
    nu: usize,
    xc: &[f64],
    nc: usize,
    source: usize,
    target: usize,
    cfg: &MapperConfig,
) -> Result<GlamMapper> {
    cfg.validate()?;
    let dims = bundle.dims();
    rows_check("uncertain source group", xu, nu, dims.input)?;
    rows_check("certain target group", xc, nc, dims.input)?;
    let zu = bundle.encode_batch(xu, nu)?;
    let zc = bundle.encode_batch(xc, nc)?;
    let initial: Vec<f64> = column_mean(&zc, nc, dims.latent)
        .iter()
        .zip(column_mean(&zu, nu, dims.latent))
        .map(|(c, u)| c - u)
        .collect();
    let mut loss = MapperLoss::new(bundle, &zu, nu, xc, nc)?;
    let total = |fit: f64, theta: &[f64]| fit + cfg.lambda_theta * theta.iter().map(|v| v.abs()).sum::<f64>();
    let mut theta = initial.clone();
    let mut curve = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (fit, grad) = loss.value_and_grad(&theta)?;
        curve.push(total(fit, &theta));
        let shrink = cfg.lr * cfg.lambda_theta;
        theta = theta
            .iter()
            .zip(&grad)
            .map(|(t, g)| soft_threshold(t - cfg.lr * g, shrink))
            .collect();
    }
    let (fit, _) = loss.value_and_grad(&theta)?;
    curve.push(total(fit, &theta));
    Ok(GlamMapper {
        source,
        target,
        config: cfg.clone(),
        report: MapperReport {
            source_points: nu,
            target_points: nc,
            initial_theta: initial,
            final_loss: *curve.last().expect("non-empty"),
            loss_curve: curve,
            nonzero: theta.iter().filter(|v| **v != 0.0).count(),
        },
        theta,
    })
}

impl GlamMapper {
    /// One encode, one add, one decode and one predict.
    pub fn apply(&self, bundle: &ModelBundle, x: &[f64]) -> Result<Mapped> {
        let x = self.map(bundle, x)?;
        let posterior = bundle.predict(&x)?.probs;
        Ok(Mapped { x, posterior })
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        io::to_json(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }
}

/// Anything that turns an input into a single counterfactual input.
pub trait CounterfactualMap: Sync {
    fn map(&self, bundle: &ModelBundle, x: &[f64]) -> Result<Vec<f64>>;
}

impl CounterfactualMap for GlamMapper {
    fn map(&self, bundle: &ModelBundle, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = bundle.encode(x)?;
        if z.len() != self.theta.len() {
            return Err(Error::Dimension {
                what: "mapper translation",
                expected: z.len(),
                got: self.theta.len(),
            });
        }
        z.iter_mut().zip(&self.theta).for_each(|(a, t)| *a += t);
        bundle.decode(&z)
    }
}

/// Adds the input-space group-mean difference, clamps to `[0, 1]` and
/// passes the result through the autoencoder.
#[derive(Clone, Debug, PartialEq)]
pub struct DbmInput {
    pub delta: Vec<f64>,
}

/// Adds the latent group-mean difference.
#[derive(Clone, Debug, PartialEq)]
pub struct DbmLatent {
    pub delta: Vec<f64>,
}

/// Nearest certain target input by l2 distance.
#[derive(Clone, Debug, PartialEq)]
pub struct NnInput {
    pub targets: Tensor,
}

/// Decoded nearest certain target latent.
#[derive(Clone, Debug, PartialEq)]
pub struct NnLatent {
    pub targets: Tensor,
}

impl DbmInput {
    pub fn fit(xu: &[f64], nu: usize, xc: &[f64], nc: usize, dim: usize) -> Result<Self> {
        rows_check("uncertain source group", xu, nu, dim)?;
        rows_check("certain target group", xc, nc, dim)?;
        let (mc, mu) = (column_mean(xc, nc, dim), column_mean(xu, nu, dim));
        Ok(Self {
            delta: mc.iter().zip(&mu).map(|(c, u)| c - u).collect(),
        })
    }
}

impl DbmLatent {
    pub fn fit(bundle: &ModelBundle, xu: &[f64], nu: usize, xc: &[f64], nc: usize) -> Result<Self> {
        let dims = bundle.dims();
        rows_check("uncertain source group", xu, nu, dims.input)?;
        rows_check("certain target group", xc, nc, dims.input)?;
        let mu = column_mean(&bundle.encode_batch(xu, nu)?, nu, dims.latent);
        let mc = column_mean(&bundle.encode_batch(xc, nc)?, nc, dims.latent);
        Ok(Self {
            delta: mc.iter().zip(&mu).map(|(c, u)| c - u).collect(),
        })
    }
}

impl NnInput {
    pub fn new(xc: &[f64], nc: usize, dim: usize) -> Result<Self> {
        rows_check("certain target group", xc, nc, dim)?;
        Ok(Self {
            targets: Tensor::matrix(nc, dim, xc.to_vec())?,
        })
    }
}

impl NnLatent {
    pub fn new(bundle: &ModelBundle, xc: &[f64], nc: usize) -> Result<Self> {
        let dims = bundle.dims();
        rows_check("certain target group", xc, nc, dims.input)?;
        Ok(Self {
            targets: Tensor::matrix(nc, dims.latent, bundle.encode_batch(xc, nc)?)?,
        })
    }
}

impl CounterfactualMap for DbmInput {
    fn map(&self, bundle: &ModelBundle, x: &[f64]) -> Result<Vec<f64>> {
        let moved: Vec<f64> = x.iter().zip(&self.delta).map(|(a, d)| (a + d).clamp(0.0, 1.0)).collect();
        bundle.decode(&bundle.encode(&moved)?)
    }
}

impl CounterfactualMap for DbmLatent {
    fn map(&self, bundle: &ModelBundle, x: &[f64]) -> Result<Vec<f64>> {
        let z: Vec<f64> = bundle.encode(x)?.iter().zip(&self.delta).map(|(a, d)| a + d).collect();
        bundle.decode(&z)
    }
}

impl CounterfactualMap for NnInput {
    fn map(&self, _bundle: &ModelBundle, x: &[f64]) -> Result<Vec<f64>> {
        let (j, _) = nearest(x, &self.targets);
        Ok(self.targets.row(j).to_vec())
    }
}

impl CounterfactualMap for NnLatent {
    fn map(&self, bundle: &ModelBundle, x: &[f64]) -> Result<Vec<f64>> {
        let z = bundle.encode(x)?;
        let (j, _) = nearest(&z, &self.targets);
        bundle.decode(self.targets.row(j))
    }
}

/// Source inputs paired with their lowest-cost accepted counterfactual in
/// class `target`, as `(xu, xc, rows)`. Sets without such a candidate are
/// skipped.
pub fn pairs_from_cesets(sets: &[CESet], target: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let mut xu = Vec::new();
    let mut xc = Vec::new();
    let mut n = 0;
    for s in sets {
        let best = s
            .accepted()
            .filter(|c| c.label == target)
            .fold(None, |best: Option<&CandidateCE>, c| match best {
                Some(b) if b.cost <= c.cost => Some(b),
                _ => Some(c),
            });
        if let Some(best) = best {
            xu.extend_from_slice(&s.x0);
            xc.extend_from_slice(&best.x);
            n += 1;
        }
    }
    (xu, xc, n)
}

/// Applies every mapper, or only those whose source class is among the
/// `top_n` most probable for `x`, and keeps the lowest-cost result.
pub fn map_unknown_class(
    mappers: &[GlamMapper],
    bundle: &ModelBundle,
    x: &[f64],
    scoring: &Scoring,
    top_n: Option<usize>,
) -> Result<(usize, Mapped)> {
    if mappers.is_empty() {
        return Err(Error::InvalidConfig("no mappers to apply".into()));
    }
    let post = bundle.predict(x)?.probs;
    let label0 = argmax(&post);
    let allowed: Vec<usize> = match top_n {
        Some(n) => {
            let mut order: Vec<usize> = (0..post.len()).collect();
            order.sort_by(|&a, &b| post[b].total_cmp(&post[a]).then(a.cmp(&b)));
            order.truncate(n.max(1));
            order
        }
        None => (0..post.len()).collect(),
    };
    let mut best: Option<(usize, Mapped, f64)> = None;
    for (i, m) in mappers.iter().enumerate().filter(|(_, m)| allowed.contains(&m.source)) {
        let out = m.apply(bundle, x)?;
        let h = kernels::entropy(&out.posterior);
        let cost = scoring.cost(h, kernels::l1_dist(&out.x, x), label_cross_entropy(&out.posterior, label0));
        if best.as_ref().is_none_or(|b| cost < b.2) {
            best = Some((i, out, cost));
        }
    }
    best.map(|(i, m, _)| (i, m))
        .ok_or_else(|| Error::InvalidConfig("no mapper matches the most probable classes".into()))
}

/// One scheme applied to one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemePoint {
    pub scheme: String,
    pub point_id: usize,
    pub h: f64,
    pub d_x: f64,
    pub d_y: f64,
    pub cost: f64,
    pub label: usize,
    pub in_target: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeTiming {
    pub scheme: String,
    pub point_id: usize,
    /// Median wall time of mapping plus classification.
    pub time_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Comparison {
    pub points: Vec<SchemePoint>,
    pub timings: Vec<SchemeTiming>,
}

/// Maps every input with every scheme. `d_y` is measured against
/// `source_label`; `in_target` checks the predicted class against `target`.
pub fn evaluate_schemes(
    schemes: &[(&str, &dyn CounterfactualMap)],
    bundle: &ModelBundle,
    inputs: &[(usize, &[f64])],
    source_label: usize,
    target: usize,
    scoring: &Scoring,
    reps: usize,
) -> Result<Comparison> {
    if reps == 0 {
        return Err(Error::InvalidConfig("timing needs at least one repetition".into()));
    }
    let mut out = Comparison::default();
    for &(name, scheme) in schemes {
        for &(id, x) in inputs {
            let mut times = Vec::with_capacity(reps);
            let mut result = None;
            for _ in 0..reps {
                let t = Instant::now();
                let mapped = scheme.map(bundle, x)?;
                let post = bundle.predict(&mapped)?.probs;
                times.push(t.elapsed().as_secs_f64() * 1e3);
                result = Some((mapped, post));
            }
            let (mapped, post) = result.expect("at least one repetition");
            let h = kernels::entropy(&post);
            let d_x = kernels::l1_dist(&mapped, x);
            let d_y = label_cross_entropy(&post, source_label);
            let label = argmax(&post);
            out.points.push(SchemePoint {
                scheme: name.into(),
                point_id: id,
                h,
                d_x,
                d_y,
                cost: scoring.cost(h, d_x, d_y),
                label,
                in_target: label == target,
            });
            out.timings.push(SchemeTiming {
                scheme: name.into(),
                point_id: id,
                time_ms: stats::median(&times),
            });
        }
    }
    Ok(out)
}

/// Per-scheme means over the points of a comparison, in first-seen order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub points: usize,
    pub mean_h: f64,
    pub mean_d_x: f64,
    pub mean_cost: f64,
    pub in_target: f64,
}

pub fn summarize(points: &[SchemePoint]) -> Vec<SchemeSummary> {
    let mut names: Vec<&str> = Vec::new();
    for p in points {
        if !names.contains(&p.scheme.as_str()) {
            names.push(&p.scheme);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&SchemePoint> = points.iter().filter(|p| p.scheme == name).collect();
            let col = |f: fn(&SchemePoint) -> f64| stats::mean(&rows.iter().map(|p| f(p)).collect::<Vec<_>>());
            SchemeSummary {
                scheme: name.into(),
                points: rows.len(),
                mean_h: col(|p| p.h),
                mean_d_x: col(|p| p.d_x),
                mean_cost: col(|p| p.cost),
                in_target: col(|p| f64::from(u8::from(p.in_target))),
            }
        })
        .collect()
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    scheme: &'a str,
    point_id: String,
    h: f64,
    d_x: f64,
    cost: f64,
    in_target: f64,
}

/// One row per (scheme, point), then a `mean` row per scheme.
pub fn comparison_csv(points: &[SchemePoint]) -> Result<Vec<u8>> {
    let mut rows: Vec<ComparisonRow> = points
        .iter()
        .map(|p| ComparisonRow {
            scheme: &p.scheme,
            point_id: p.point_id.to_string(),
            h: p.h,
            d_x: p.d_x,
            cost: p.cost,
            in_target: f64::from(u8::from(p.in_target)),
        })
        .collect();
    let summary = summarize(points);
    rows.extend(summary.iter().map(|s| ComparisonRow {
        scheme: &s.scheme,
        point_id: "mean".into(),
        h: s.mean_h,
        d_x: s.mean_d_x,
        cost: s.mean_cost,
        in_target: s.in_target,
    }));
    io::to_csv(&rows)
}

#[derive(Serialize)]
struct TimingRow<'a> {
    scheme: &'a str,
    point_id: String,
    time_ms: f64,
}

/// Per-point times, then a `median` row per scheme.
pub fn timing_csv(timings: &[SchemeTiming]) -> Result<Vec<u8>> {
    let mut rows: Vec<TimingRow> = timings
        .iter()
        .map(|t| TimingRow {
            scheme: &t.scheme,
            point_id: t.point_id.to_string(),
            time_ms: t.time_ms,
        })
        .collect();
    let mut names: Vec<&str> = Vec::new();
    for t in timings {
        if !names.contains(&t.scheme.as_str()) {
            names.push(&t.scheme);
        }
    }
    for name in names {
        let ts: Vec<f64> = timings.iter().filter(|t| t.scheme == name).map(|t| t.time_ms).collect();
        rows.push(TimingRow {
            scheme: name,
            point_id: "median".into(),
            time_ms: stats::median(&ts),
        });
    }
    io::to_csv(&rows)
}
