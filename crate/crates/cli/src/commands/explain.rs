use rayon::prelude::*;
use serde::Serialize;

use clueset_core::clue::CESet;
use clueset_core::explain::{label_distribution_csv, metrics_csv, run as run_method, scatter_csv, select, Explanation};
use clueset_core::io;

use super::{init_context, Ctx};
use crate::error::CliResult;

#[derive(Serialize)]
struct JointLossRow {
    input_id: Option<usize>,
    iter: usize,
    loss: f64,
}

pub fn run(ctx: &mut Ctx) -> CliResult<()> {
    let bundle = ctx.bundle()?;
    let data = ctx.data()?;
    let cfg = ctx.cfg.clone();
    let rows = select(&data, &bundle, &cfg.selection)?;
    let init = init_context(&cfg, &data, &bundle)?;
    let method = cfg.explain.method;
    let runs: Vec<Explanation> = ctx.rec.timed("search", || {
        rows.par_iter()
            .map(|&i| {
                let mut e = run_method(method, data.input(i), &bundle, &cfg.search, &init)?;
                e.set.input_id = Some(i);
                Ok(e)
            })
            .collect::<clueset_core::Result<Vec<_>>>()
            .map_err(Into::into)
    })?;
    let sets: Vec<CESet> = runs.iter().map(|r| r.set.clone()).collect();
    ctx.rec.write("cesets.json", &io::to_json(&sets)?)?;
    ctx.rec.write("scatter.csv", &scatter_csv(&runs)?)?;
    ctx.rec.write("label_distribution.csv", &label_distribution_csv(&sets, data.classes)?)?;
    ctx.rec.write("metrics.csv", &metrics_csv(&runs)?)?;
    let losses: Vec<JointLossRow> = runs
        .iter()
        .flat_map(|r| {
            r.joint_loss.iter().flatten().enumerate().map(|(iter, &loss)| JointLossRow {
                input_id: r.set.input_id,
                iter,
                loss,
            })
        })
        .collect();
    let csv = if losses.is_empty() {
        b"input_id,iter,loss\n".to_vec()
    } else {
        io::to_csv(&losses)?
    };
    ctx.rec.write("joint_loss.csv", &csv)
}
