//! One-parameter sweeps over the search radius, diversity weight,
//! pre-search length and mapper sparsity weight.

use serde::{Deserialize, Serialize};

use crate::clue::{CESet, ExperimentConfig, InitContext, Scoring};
use crate::diversity::MetricRow;
use crate::error::{Error, Result};
use crate::explain::{run, Method};
use crate::glam::{evaluate_schemes, train_mapper, CounterfactualMap, MapperConfig};
use crate::io;
use crate::models::ModelBundle;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "delta")]
    Delta,
    #[serde(rename = "lambda_D")]
    LambdaD,
    #[serde(rename = "lambda_theta")]
    LambdaTheta,
    #[serde(rename = "n_i")]
    NI,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Delta => "delta",
            Axis::LambdaD => "lambda_D",
            Axis::LambdaTheta => "lambda_theta",
            Axis::NI => "n_i",
        }
    }

    /// Copy of `cfg` with this axis set to `v`.
    fn apply(self, cfg: &ExperimentConfig, v: f64) -> Result<ExperimentConfig> {
        let mut c = cfg.clone();
        match self {
            Axis::Delta => c.delta = v,
            Axis::LambdaD => c.lambda_d = v,
            Axis::NI => {
                if !(v >= 0.0 && v.fract() == 0.0 && v.is_finite()) {
                    return Err(Error::InvalidConfig(format!("n_i values must be whole numbers, got {v}")));
                }
                c.n_i = v as usize;
            }
            Axis::LambdaTheta => {
                return Err(Error::InvalidConfig("lambda_theta is a mapper parameter".into()));
            }
        }
        c.validate()?;
        Ok(c)
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(Axis::Delta),
            "lambda_D" | "lambda_d" => Ok(Axis::LambdaD),
            "lambda_theta" => Ok(Axis::LambdaTheta),
            "n_i" => Ok(Axis::NI),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis {other:?}, expected delta, lambda_D, lambda_theta or n_i"
            ))),
        }
    }
}

/// One statistic at one grid value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub statistic: String,
    pub result: f64,
}

fn check_grid(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    if let Some(v) = values.iter().find(|v| v.is_nan()) {
        return Err(Error::InvalidConfig(format!("sweep grid contains {v}")));
    }
    Ok(())
}

/// Per-set entropy and distance statistics: min, mean and max over the
/// candidates, plus the distance of the lowest-entropy candidate.
fn set_stats(set: &CESet) -> Vec<(&'static str, f64)> {
    let hs: Vec<f64> = set.candidates.iter().map(|c| c.h).collect();
    let dxs: Vec<f64> = set.candidates.iter().map(|c| c.d_x).collect();
    let argmin = hs
        .iter()
        .enumerate()
        .fold(0, |best, (i, h)| if *h < hs[best] { i } else { best });
    vec![
        ("h_min", stats::min(&hs)),
        ("h_mean", stats::mean(&hs)),
        ("h_max", stats::max(&hs)),
        ("dx_min", stats::min(&dxs)),
        ("dx_mean", stats::mean(&dxs)),
        ("dx_max", stats::max(&dxs)),
        ("dx_at_h_min", dxs[argmin]),
        ("accepted", set.accepted().count() as f64 / set.candidates.len() as f64),
    ]
}

/// Averages named statistics over inputs, keeping first-seen order. A
/// statistic missing for some inputs is averaged over those that have it.
fn average(per_input: &[Vec<(String, f64)>]) -> Vec<(String, f64)> {
    let mut names: Vec<&str> = Vec::new();
    for s in per_input.iter().flatten() {
        if !names.contains(&s.0.as_str()) {
            names.push(&s.0);
        }
    }
    names
        .into_iter()
        .map(|n| {
            let vals: Vec<f64> = per_input.iter().flatten().filter(|s| s.0 == n).map(|s| s.1).collect();
            (n.to_string(), stats::mean(&vals))
        })
        .collect()
}

fn metric_stats(rows: &[MetricRow]) -> impl Iterator<Item = (String, f64)> + '_ {
    rows.iter().map(|m| (format!("{}_{}", m.metric.name(), m.space.name()), m.value))
}

/// Runs `method` on every input at every grid value of a search axis.
/// Each statistic is computed per input and averaged over inputs; metric
/// statistics cover the inputs with at least one accepted candidate.
pub fn sweep_search(
    axis: Axis,
    values: &[f64],
    method: Method,
    inputs: &[&[f64]],
    bundle: &ModelBundle,
    cfg: &ExperimentConfig,
    ctx: &InitContext,
) -> Result<Vec<SweepRow>> {
    check_grid(values)?;
    if inputs.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one input".into()));
    }
    let mut rows = Vec::new();
    for &v in values {
        let run_cfg = axis.apply(cfg, v)?;
        let per_input = inputs
            .iter()
            .map(|x| {
                let e = run(method, x, bundle, &run_cfg, ctx)?;
                let mut s: Vec<(String, f64)> = set_stats(&e.set).into_iter().map(|(n, v)| (n.to_string(), v)).collect();
                s.extend(metric_stats(&e.evaluation));
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(average(&per_input).into_iter().map(|(statistic, result)| SweepRow {
            axis,
            value: v,
            statistic,
            result,
        }));
    }
    Ok(rows)
}

/// Mapper data for a sparsity sweep: uncertain source inputs, certain
/// target inputs, and the group labels.
pub struct MapperTask<'a> {
    pub xu: &'a [f64],
    pub nu: usize,
    pub xc: &'a [f64],
    pub nc: usize,
    pub source: usize,
    pub target: usize,
}

/// Trains one mapper per `lambda_theta` and maps every source input.
/// Reports entropy and distance statistics over mapped points, the share
/// landing in the target class, and the mapper's nonzero count.
pub fn sweep_lambda_theta(
    values: &[f64],
    task: &MapperTask,
    bundle: &ModelBundle,
    mapper: &MapperConfig,
    scoring: &Scoring,
) -> Result<Vec<SweepRow>> {
    check_grid(values)?;
    let dim = bundle.dims().input;
    let inputs: Vec<(usize, &[f64])> = task.xu.chunks(dim).enumerate().collect();
    let mut rows = Vec::new();
    for &v in values {
        let cfg = MapperConfig {
            lambda_theta: v,
            ..mapper.clone()
        };
        let m = train_mapper(bundle, task.xu, task.nu, task.xc, task.nc, task.source, task.target, &cfg)?;
        let schemes: [(&str, &dyn CounterfactualMap); 1] = [("glam", &m)];
        let cmp = evaluate_schemes(&schemes, bundle, &inputs, task.source, task.target, scoring, 1)?;
        let hs: Vec<f64> = cmp.points.iter().map(|p| p.h).collect();
        let dxs: Vec<f64> = cmp.points.iter().map(|p| p.d_x).collect();
        let hit = cmp.points.iter().filter(|p| p.in_target).count() as f64 / cmp.points.len() as f64;
        let stats_at_v = [
            ("h_min", stats::min(&hs)),
            ("h_mean", stats::mean(&hs)),
            ("h_max", stats::max(&hs)),
            ("dx_min", stats::min(&dxs)),
            ("dx_mean", stats::mean(&dxs)),
            ("dx_max", stats::max(&dxs)),
            ("in_target", hit),
            ("theta_nonzero", m.report.nonzero as f64),
        ];
        rows.extend(stats_at_v.into_iter().map(|(s, result)| SweepRow {
            axis: Axis::LambdaTheta,
            value: v,
            statistic: s.into(),
            result,
        }));
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Ok(b"axis,value,statistic,result\n".to_vec());
    }
    io::to_csv(rows)
}

/// Values of `statistic` in grid order.
pub fn series(rows: &[SweepRow], statistic: &str) -> Vec<(f64, f64)> {
    rows.iter()
        .filter(|r| r.statistic == statistic)
        .map(|r| (r.value, r.result))
        .collect()
}
