//! Set-diversity metrics for counterfactual sets.
//!
//! DPP, APD and coverage work on real-valued points and can be appended to
//! a graph; the label-based metrics are evaluation-only.

use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph, NodeId, Tensor};
use crate::clue::CandidateCE;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Dpp,
    Apd,
    Coverage,
    PredictionCoverage,
    DistinctLabels,
    LabelEntropy,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Dpp,
        Metric::Apd,
        Metric::Coverage,
        Metric::PredictionCoverage,
        Metric::DistinctLabels,
        Metric::LabelEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Dpp => "dpp",
            Metric::Apd => "apd",
            Metric::Coverage => "coverage",
            Metric::PredictionCoverage => "prediction_coverage",
            Metric::DistinctLabels => "distinct_labels",
            Metric::LabelEntropy => "label_entropy",
        }
    }

    pub fn is_differentiable(self) -> bool {
        matches!(self, Metric::Dpp | Metric::Apd | Metric::Coverage)
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown diversity metric {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Input,
    Latent,
    Prediction,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Input => "input",
            Space::Latent => "latent",
            Space::Prediction => "prediction",
        }
    }
}

impl std::str::FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" | "x" => Ok(Space::Input),
            "latent" | "z" => Ok(Space::Latent),
            "prediction" | "y" => Ok(Space::Prediction),
            other => Err(Error::InvalidConfig(format!("unknown space {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseDistance {
    L1,
    L2,
}

impl BaseDistance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            BaseDistance::L1 => kernels::l1_dist(a, b),
            BaseDistance::L2 => kernels::l2_dist(a, b),
        }
    }

    fn node(self, g: &mut Graph, diff: NodeId) -> NodeId {
        match self {
            BaseDistance::L1 => g.l1(diff),
            BaseDistance::L2 => g.l2(diff),
        }
    }
}

/// Which metric to compute, in which space, over which distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversitySpec {
    pub metric: Metric,
    pub space: Space,
    pub base: BaseDistance,
}

impl Default for DiversitySpec {
    fn default() -> Self {
        Self {
            metric: Metric::Dpp,
            space: Space::Latent,
            base: BaseDistance::L2,
        }
    }
}

impl DiversitySpec {
    pub fn new(metric: Metric, space: Space, base: BaseDistance) -> Result<Self> {
        let label_based = matches!(
            metric,
            Metric::PredictionCoverage | Metric::DistinctLabels | Metric::LabelEntropy
        );
        if label_based && space != Space::Prediction {
            return Err(Error::InvalidConfig(format!("{} is defined in prediction space only", metric.name())));
        }
        if metric == Metric::Coverage && space == Space::Prediction {
            return Err(Error::InvalidConfig("coverage applies to input or latent space".into()));
        }
        Ok(Self { metric, space, base })
    }
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let first = points.first().ok_or(Error::EmptySet)?;
    let d = first.len();
    if let Some(bad) = points.iter().find(|p| p.len() != d) {
        return Err(Error::Dimension {
            what: "diversity point",
            expected: d,
            got: bad.len(),
        });
    }
    Ok(d)
}

/// Similarity kernel `K_ij = 1 / (1 + d(p_i, p_j))`, row-major.
pub fn dpp_kernel(points: &[Vec<f64>], base: BaseDistance) -> Result<Vec<f64>> {
    check_points(points)?;
    let k = points.len();
    let mut kern = vec![1.0; k * k];
    for i in 0..k {
        for j in i + 1..k {
            let d = base.eval(&points[i], &points[j]);
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("dpp distance between points {i} and {j}"),
                });
            }
            let v = 1.0 / (d + 1.0);
            kern[i * k + j] = v;
            kern[j * k + i] = v;
        }
    }
    Ok(kern)
}

/// Determinant of the similarity kernel, clamped to `[0, 1]`; zero for a
/// single point.
pub fn dpp(points: &[Vec<f64>], base: BaseDistance) -> Result<f64> {
    let kern = dpp_kernel(points, base)?;
    if points.len() == 1 {
        return Ok(0.0);
    }
    Ok(crate::autodiff::linalg::lu_det(&kern, points.len()).clamp(0.0, 1.0))
}

/// Mean pairwise distance; zero for a single point.
pub fn apd(points: &[Vec<f64>], base: BaseDistance) -> Result<f64> {
    check_points(points)?;
    let k = points.len();
    if k == 1 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            total += base.eval(&points[i], &points[j]);
        }
    }
    Ok(total * (1.0 / pairs(k)))
}

fn pairs(k: usize) -> f64 {
    (k * (k - 1) / 2) as f64
}

/// Per coordinate, the largest move above plus the largest move below the
/// reference, averaged over coordinates. Each maximum is kept signed.
pub fn coverage(points: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    let d = check_points(points)?;
    if reference.len() != d {
        return Err(Error::Dimension {
            what: "coverage reference",
            expected: d,
            got: reference.len(),
        });
    }
    let mut total = 0.0;
    for (i, &r) in reference.iter().enumerate() {
        let up = points.iter().map(|p| p[i] - r).fold(f64::NEG_INFINITY, f64::max);
        let down = points.iter().map(|p| -(p[i] - r)).fold(f64::NEG_INFINITY, f64::max);
        total += up + down;
    }
    Ok(total * (1.0 / d as f64))
}

/// Largest attainable coverage for per-coordinate ranges `[lo_i, hi_i]`.
pub fn coverage_max(lo: &[f64], hi: &[f64]) -> Result<f64> {
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(Error::Dimension {
            what: "coverage range",
            expected: lo.len(),
            got: hi.len(),
        });
    }
    if let Some(i) = (0..lo.len()).find(|&i| !(hi[i] >= lo[i])) {
        return Err(Error::InvalidConfig(format!("coordinate {i}: max {} < min {}", hi[i], lo[i])));
    }
    let s_plus: f64 = hi.iter().sum();
    let s_minus: f64 = lo.iter().sum();
    Ok((s_plus - s_minus) / lo.len() as f64)
}

/// Mean over classes of the highest probability any member of the set
/// assigns to that class.
pub fn prediction_coverage(posteriors: &[Vec<f64>]) -> Result<f64> {
    let c = check_points(posteriors)?;
    let total: f64 = (0..c)
        .map(|j| posteriors.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / c as f64)
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptySet);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Dimension {
            what: "label",
            expected: classes,
            got: bad,
        });
    }
    Ok(())
}

pub fn distinct_labels(labels: &[usize], classes: usize) -> Result<f64> {
    check_labels(labels, classes)?;
    let mut seen = vec![false; classes];
    labels.iter().for_each(|&l| seen[l] = true);
    Ok(seen.iter().filter(|&&s| s).count() as f64 / classes as f64)
}

/// Entropy of the label histogram normalised by `ln c`.
pub fn label_entropy(labels: &[usize], classes: usize) -> Result<f64> {
    check_labels(labels, classes)?;
    if classes < 2 {
        return Ok(0.0);
    }
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    let k = labels.len() as f64;
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / k).collect();
    Ok(kernels::entropy(&p) / (classes as f64).ln())
}

/// Appends the metric over the rows of `points` (`[k, d]`) to `g`.
/// `reference` is required for coverage.
pub fn diversity_node(
    g: &mut Graph,
    spec: &DiversitySpec,
    points: NodeId,
    k: usize,
    reference: Option<&[f64]>,
) -> Result<NodeId> {
    if k == 0 {
        return Err(Error::EmptySet);
    }
    match spec.metric {
        Metric::Dpp => {
            if k == 1 {
                return Ok(g.scalar(0.0));
            }
            let rows: Vec<NodeId> = (0..k).map(|i| g.row(points, i)).collect();
            let one = g.scalar(1.0);
            let mut sim = vec![vec![one; k]; k];
            for i in 0..k {
                for j in i + 1..k {
                    let diff = g.sub(rows[i], rows[j]);
                    let d = spec.base.node(g, diff);
                    let d1 = g.add_scalar(d, 1.0);
                    let v = g.recip(d1);
                    sim[i][j] = v;
                    sim[j][i] = v;
                }
            }
            let kern_rows: Vec<NodeId> = sim.iter().map(|r| g.concat(r)).collect();
            let kern = g.stack(&kern_rows);
            Ok(g.det(kern))
        }
        Metric::Apd => {
            if k == 1 {
                return Ok(g.scalar(0.0));
            }
            let rows: Vec<NodeId> = (0..k).map(|i| g.row(points, i)).collect();
            let mut ds = Vec::with_capacity(k * (k - 1) / 2);
            for i in 0..k {
                for j in i + 1..k {
                    let diff = g.sub(rows[i], rows[j]);
                    ds.push(spec.base.node(g, diff));
                }
            }
            let all = g.concat(&ds);
            let s = g.sum(all);
            Ok(g.scale(s, 1.0 / pairs(k)))
        }
        Metric::Coverage => {
            let reference = reference.ok_or_else(|| Error::InvalidConfig("coverage needs a reference point".into()))?;
            let d = reference.len();
            let tiled: Vec<f64> = (0..k).flat_map(|_| reference.iter().copied()).collect();
            let r = g.constant(Tensor::matrix(k, d, tiled)?);
            let diff = g.sub(points, r);
            let up = g.max_rows(diff);
            let neg = g.scale(diff, -1.0);
            let down = g.max_rows(neg);
            let both = g.add(up, down);
            let s = g.sum(both);
            Ok(g.scale(s, 1.0 / d as f64))
        }
        other => Err(Error::NonDifferentiable(other.name())),
    }
}

/// Metric value and its gradient with respect to every point.
pub fn diversity_grad(spec: &DiversitySpec, points: &[Vec<f64>], reference: Option<&[f64]>) -> Result<(f64, Vec<Vec<f64>>)> {
    if !spec.metric.is_differentiable() {
        return Err(Error::NonDifferentiable(spec.metric.name()));
    }
    let d = check_points(points)?;
    let k = points.len();
    let mut g = Graph::new();
    let p = g.input("points");
    let out = diversity_node(&mut g, spec, p, k, reference)?;
    g.set_input("points", Tensor::from_rows(points)?)?;
    g.forward()?;
    let value = g.value(out)?.item();
    let grad = g.backward(out)?.data_or_zeros(p, k * d);
    Ok((value, grad.chunks(d).map(<[f64]>::to_vec).collect()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Metric,
    pub space: Space,
    pub k: usize,
    pub value: f64,
}

/// Every metric in every space it applies to, over `set`. DPP and APD use
/// the l2 base distance; latent coverage is measured around `z0`.
pub fn evaluate_all(set: &[&CandidateCE], x0: &[f64], z0: &[f64], classes: usize) -> Result<Vec<MetricRow>> {
    if set.is_empty() {
        return Ok(Vec::new());
    }
    let k = set.len();
    let xs: Vec<Vec<f64>> = set.iter().map(|c| c.x.clone()).collect();
    let zs: Vec<Vec<f64>> = set.iter().map(|c| c.z.clone()).collect();
    let ys: Vec<Vec<f64>> = set.iter().map(|c| c.posterior.clone()).collect();
    let labels: Vec<usize> = set.iter().map(|c| c.label).collect();
    let l2 = BaseDistance::L2;
    let row = |metric, space, value| MetricRow { metric, space, k, value };
    Ok(vec![
        row(Metric::Dpp, Space::Input, dpp(&xs, l2)?),
        row(Metric::Dpp, Space::Latent, dpp(&zs, l2)?),
        row(Metric::Dpp, Space::Prediction, dpp(&ys, l2)?),
        row(Metric::Apd, Space::Input, apd(&xs, l2)?),
        row(Metric::Apd, Space::Latent, apd(&zs, l2)?),
        row(Metric::Apd, Space::Prediction, apd(&ys, l2)?),
        row(Metric::Coverage, Space::Input, coverage(&xs, x0)?),
        row(Metric::Coverage, Space::Latent, coverage(&zs, z0)?),
        row(Metric::PredictionCoverage, Space::Prediction, prediction_coverage(&ys)?),
        row(Metric::DistinctLabels, Space::Prediction, distinct_labels(&labels, classes)?),
        row(Metric::LabelEntropy, Space::Prediction, label_entropy(&labels, classes)?),
    ])
}

/// Columns `metric, space, k, value`.
pub fn metric_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        return Ok(b"metric,space,k,value\n".to_vec());
    }
    crate::io::to_csv(rows)
}
