//! Running any counterfactual search by name, choosing which inputs to
//! explain, and flattening the results into tables.

use serde::{Deserialize, Serialize};

use crate::clue::{clue, delta_clue, label_distribution, CESet, ExperimentConfig, InitContext};
use crate::data::{Dataset, Split};
use crate::divclue::{diverse_clue, DivMethod};
use crate::diversity::{evaluate_all, MetricRow};
use crate::error::{Error, Result};
use crate::io;
use crate::models::ModelBundle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Clue,
    Dclue,
    DivclueSim,
    DivclueSeq,
    DivcluePen,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Clue, Method::Dclue, Method::DivclueSim, Method::DivclueSeq, Method::DivcluePen];

    pub fn name(self) -> &'static str {
        match self {
            Method::Clue => "clue",
            Method::Dclue => "dclue",
            Method::DivclueSim => "divclue-sim",
            Method::DivclueSeq => "divclue-seq",
            Method::DivcluePen => "divclue-pen",
        }
    }

    pub fn diverse(self) -> Option<DivMethod> {
        match self {
            Method::DivclueSim => Some(DivMethod::Simultaneous),
            Method::DivclueSeq => Some(DivMethod::Sequential),
            Method::DivcluePen => Some(DivMethod::Penalty),
            Method::Clue | Method::Dclue => None,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::InvalidConfig(format!("unknown method {s:?}, expected one of {}", names.join(", ")))
        })
    }
}

/// Output of one search: the set, the joint objective for the diverse
/// variants, and all metrics over the accepted candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub method: Method,
    pub set: CESet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_loss: Option<Vec<f64>>,
    pub evaluation: Vec<MetricRow>,
}

pub fn run(method: Method, x0: &[f64], bundle: &ModelBundle, cfg: &ExperimentConfig, ctx: &InitContext) -> Result<Explanation> {
    if let Some(div) = method.diverse() {
        let rec = diverse_clue(div, x0, bundle, cfg, ctx)?;
        return Ok(Explanation {
            method,
            set: rec.set,
            joint_loss: Some(rec.joint_loss),
            evaluation: rec.evaluation,
        });
    }
    let set = match method {
        Method::Clue => clue(x0, bundle, cfg)?,
        _ => delta_clue(x0, bundle, cfg, ctx)?,
    };
    let accepted: Vec<_> = set.accepted().collect();
    let evaluation = evaluate_all(&accepted, &set.x0, &set.z0, bundle.dims().classes)?;
    Ok(Explanation {
        method,
        set,
        joint_loss: None,
        evaluation,
    })
}

/// Which inputs to explain: the `top` highest-entropy points of a split,
/// optionally restricted to one true class and to points above the
/// uncertainty threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Selector {
    pub split: Split,
    pub top: usize,
    pub group: Option<usize>,
    pub uncertain_only: bool,
}

impl Default for Selector {
    fn default() -> Self {
        Self {
            split: Split::Test,
            top: 8,
            group: None,
            uncertain_only: false,
        }
    }
}

/// Dataset rows chosen by `sel`, highest entropy first; equal entropies
/// keep dataset order.
pub fn select(data: &Dataset, bundle: &ModelBundle, sel: &Selector) -> Result<Vec<usize>> {
    if let Some(g) = sel.group {
        if g >= data.classes {
            return Err(Error::InvalidConfig(format!("group {g} out of range for {} classes", data.classes)));
        }
    }
    if sel.top == 0 {
        return Ok(Vec::new());
    }
    let idx: Vec<usize> = data
        .indices(sel.split)
        .into_iter()
        .filter(|&i| sel.group.is_none_or(|g| data.labels[i] == g))
        .collect();
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let (x, _) = data.gather(&idx);
    let h = bundle.entropies(&x, idx.len())?;
    let tau = bundle.thresholds.tau_high;
    let mut order: Vec<usize> = (0..idx.len()).filter(|&i| !sel.uncertain_only || h[i] > tau).collect();
    order.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
    Ok(order.into_iter().take(sel.top).map(|i| idx[i]).collect())
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    input_id: Option<usize>,
    method: &'a str,
    candidate: usize,
    h: f64,
    d_x: f64,
    d_y: f64,
    rho: f64,
    cost: f64,
    label: usize,
    accepted: bool,
}

/// One row per candidate of every explanation.
pub fn scatter_csv(runs: &[Explanation]) -> Result<Vec<u8>> {
    let rows: Vec<ScatterRow> = runs
        .iter()
        .flat_map(|r| {
            r.set.candidates.iter().map(move |c| ScatterRow {
                input_id: r.set.input_id,
                method: r.method.name(),
                candidate: c.index,
                h: c.h,
                d_x: c.d_x,
                d_y: c.d_y,
                rho: c.rho,
                cost: c.cost,
                label: c.label,
                accepted: c.accepted,
            })
        })
        .collect();
    if rows.is_empty() {
        return Ok(b"input_id,method,candidate,h,d_x,d_y,rho,cost,label,accepted\n".to_vec());
    }
    io::to_csv(&rows)
}

#[derive(Serialize)]
struct LabelRow {
    input_id: Option<usize>,
    class: usize,
    probability: f64,
}

/// Class distribution over accepted candidates, one row per class of every
/// set that has any accepted candidate.
pub fn label_distribution_csv(sets: &[CESet], classes: usize) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for s in sets {
        match label_distribution(s, classes) {
            Ok(dist) => rows.extend(dist.into_iter().enumerate().map(|(class, probability)| LabelRow {
                input_id: s.input_id,
                class,
                probability,
            })),
            Err(Error::EmptySet) => {}
            Err(e) => return Err(e),
        }
    }
    if rows.is_empty() {
        return Ok(b"input_id,class,probability\n".to_vec());
    }
    io::to_csv(&rows)
}

#[derive(Serialize)]
struct MetricCsvRow {
    input_id: Option<usize>,
    metric: &'static str,
    space: &'static str,
    k: usize,
    value: f64,
}

/// Metric rows of every explanation.
pub fn metrics_csv(runs: &[Explanation]) -> Result<Vec<u8>> {
    let rows: Vec<MetricCsvRow> = runs
        .iter()
        .flat_map(|r| {
            r.evaluation.iter().map(|m| MetricCsvRow {
                input_id: r.set.input_id,
                metric: m.metric.name(),
                space: m.space.name(),
                k: m.k,
                value: m.value,
            })
        })
        .collect();
    if rows.is_empty() {
        return Ok(b"input_id,metric,space,k,value\n".to_vec());
    }
    io::to_csv(&rows)
}
