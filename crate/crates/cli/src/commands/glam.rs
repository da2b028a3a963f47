use std::time::Instant;

use serde::Serialize;

use clueset_core::glam::{
    comparison_csv, evaluate_schemes, pairs_from_cesets, summarize, train_mapper, CounterfactualMap, DbmInput,
    DbmLatent, GlamMapper, NnInput, NnLatent, SchemePoint,
};
use clueset_core::io;
use clueset_core::models::ModelBundle;

use super::{eval_points, glam_scoring, group_data, train_partition, Ctx, GroupData};
use crate::config::Scheme;
use crate::error::{CliError, CliResult};

/// A fitted counterfactual map of any scheme.
pub enum TrainedScheme {
    Glam(GlamMapper),
    DbmInput(DbmInput),
    DbmLatent(DbmLatent),
    NnInput(NnInput),
    NnLatent(NnLatent),
}

impl TrainedScheme {
    pub fn as_map(&self) -> &dyn CounterfactualMap {
        match self {
            TrainedScheme::Glam(m) => m,
            TrainedScheme::DbmInput(m) => m,
            TrainedScheme::DbmLatent(m) => m,
            TrainedScheme::NnInput(m) => m,
            TrainedScheme::NnLatent(m) => m,
        }
    }
}

#[derive(Serialize)]
struct Translation<'a> {
    scheme: &'a str,
    group: usize,
    delta: &'a [f64],
}

/// Fits one mapping scheme for `g.group`. The glam variants train a latent
/// translation: glam1 on training data, glam2/3 on recorded search outputs.
pub fn fit_scheme(ctx: &mut Ctx, scheme: Scheme, bundle: &ModelBundle, g: &GroupData) -> CliResult<TrainedScheme> {
    let dim = bundle.dims().input;
    let mapper_cfg = ctx.cfg.mapper.clone();
    let fitted = match scheme {
        Scheme::Glam1 => TrainedScheme::Glam(train_mapper(bundle, &g.xu, g.nu, &g.xc, g.nc, g.group, g.group, &mapper_cfg)?),
        Scheme::Glam2 | Scheme::Glam3 => {
            let (path, lambda_x, flag) = match scheme {
                Scheme::Glam2 => (ctx.cfg.paths.glam2_cesets.clone(), "0", "--glam2-cesets"),
                _ => (ctx.cfg.paths.glam3_cesets.clone(), "0.03", "--glam3-cesets"),
            };
            let path = path.ok_or_else(|| {
                CliError::Usage(format!(
                    "{} requires counterfactual sets searched at lambda_x = {lambda_x}; pass {flag} FILE (cesets.json from `explain`)",
                    scheme.name()
                ))
            })?;
            let sets = ctx.cesets(&path)?;
            let (pu, pc, n) = pairs_from_cesets(&sets, g.group);
            if n == 0 {
                return Err(CliError::Usage(format!(
                    "{} has no accepted candidate of class {}",
                    path.display(),
                    g.group
                )));
            }
            TrainedScheme::Glam(train_mapper(bundle, &pu, n, &pc, n, g.group, g.group, &mapper_cfg)?)
        }
        Scheme::DbmInput => TrainedScheme::DbmInput(DbmInput::fit(&g.xu, g.nu, &g.xc, g.nc, dim)?),
        Scheme::DbmLatent => TrainedScheme::DbmLatent(DbmLatent::fit(bundle, &g.xu, g.nu, &g.xc, g.nc)?),
        Scheme::NnInput => TrainedScheme::NnInput(NnInput::new(&g.xc, g.nc, dim)?),
        Scheme::NnLatent => TrainedScheme::NnLatent(NnLatent::new(bundle, &g.xc, g.nc)?),
        Scheme::Dclue => return Err(CliError::Usage("dclue is a per-input search, not a mapping".into())),
    };
    Ok(fitted)
}

fn save_parameters(ctx: &mut Ctx, scheme: Scheme, fitted: &TrainedScheme, group: usize) -> CliResult<()> {
    let path = format!("mappers/{}.json", scheme.name());
    let bytes = match fitted {
        TrainedScheme::Glam(m) => m.to_json()?,
        TrainedScheme::DbmInput(DbmInput { delta }) | TrainedScheme::DbmLatent(DbmLatent { delta }) => {
            io::to_json(&Translation {
                scheme: scheme.name(),
                group,
                delta,
            })?
        }
        TrainedScheme::NnInput(_) | TrainedScheme::NnLatent(_) => return Ok(()),
    };
    ctx.rec.write(&path, &bytes)
}

pub fn run(ctx: &mut Ctx) -> CliResult<()> {
    let bundle = ctx.bundle()?;
    let data = ctx.data()?;
    let variants = ctx.cfg.glam.variants.clone();
    if variants.is_empty() {
        return Err(CliError::Usage("no glam variants selected".into()));
    }
    let g = group_data(&ctx.cfg, &data, &train_partition(&data, &bundle)?)?;
    let mut fitted = Vec::with_capacity(variants.len());
    for &v in &variants {
        let start = Instant::now();
        let f = fit_scheme(ctx, v, &bundle, &g)?;
        ctx.rec.add_time(&format!("fit {}", v.name()), start.elapsed().as_secs_f64());
        save_parameters(ctx, v, &f, g.group)?;
        fitted.push((v, f));
    }
    let rows = eval_points(&ctx.cfg, &data, &bundle, g.group)?;
    let inputs: Vec<(usize, &[f64])> = rows.iter().map(|&i| (i, data.input(i))).collect();
    let schemes: Vec<(&str, &dyn CounterfactualMap)> = fitted.iter().map(|(v, f)| (v.name(), f.as_map())).collect();
    let scoring = glam_scoring(&ctx.cfg, &bundle);
    let cmp = ctx.rec.timed("map", || {
        Ok(evaluate_schemes(&schemes, &bundle, &inputs, g.group, g.group, &scoring, 1)?)
    })?;
    ctx.rec.write("comparison.csv", &comparison_csv(&cmp.points)?)?;
    ctx.rec.write("summary.csv", &io::to_csv(&summarize(&cmp.points))?)?;
    for (v, _) in &fitted {
        let points: Vec<&SchemePoint> = cmp.points.iter().filter(|p| p.scheme == v.name()).collect();
        ctx.rec.write(&format!("distribution_{}.csv", v.name()), &io::to_csv(&points)?)?;
    }
    Ok(())
}
