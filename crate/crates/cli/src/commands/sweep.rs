use clueset_core::sweep::{sweep_csv, sweep_lambda_theta, sweep_search, Axis, MapperTask};
use clueset_core::explain::select;

use super::{glam_scoring, group_data, init_context, train_partition, Ctx};
use crate::error::{CliError, CliResult};

pub fn run(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg.clone();
    let axis = cfg
        .sweep
        .axis
        .ok_or_else(|| CliError::Usage("no sweep axis given; pass --axis delta|lambda_D|lambda_theta|n_i".into()))?;
    if cfg.sweep.values.is_empty() {
        return Err(CliError::Usage("sweep grid is empty; pass --values".into()));
    }
    let bundle = ctx.bundle()?;
    let data = ctx.data()?;
    let rows = if axis == Axis::LambdaTheta {
        let g = group_data(&cfg, &data, &train_partition(&data, &bundle)?)?;
        let task = MapperTask {
            xu: &g.xu,
            nu: g.nu,
            xc: &g.xc,
            nc: g.nc,
            source: g.group,
            target: g.group,
        };
        let scoring = glam_scoring(&cfg, &bundle);
        ctx.rec.timed("sweep", || {
            Ok(sweep_lambda_theta(&cfg.sweep.values, &task, &bundle, &cfg.mapper, &scoring)?)
        })?
    } else {
        let picked = select(&data, &bundle, &cfg.selection)?;
        if picked.is_empty() {
            return Err(CliError::Usage("the input selection is empty".into()));
        }
        let inputs: Vec<&[f64]> = picked.iter().map(|&i| data.input(i)).collect();
        let init = init_context(&cfg, &data, &bundle)?;
        ctx.rec.timed("sweep", || {
            Ok(sweep_search(axis, &cfg.sweep.values, cfg.sweep.method, &inputs, &bundle, &cfg.search, &init)?)
        })?
    };
    ctx.rec.write("sweep.csv", &sweep_csv(&rows)?)
}
