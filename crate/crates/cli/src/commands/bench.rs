use std::time::Instant;

use serde::Serialize;

use clueset_core::clue::delta_clue;
use clueset_core::io;
use clueset_core::stats;

use super::{eval_points, fit_scheme, group_data, init_context, train_partition, Ctx};
use crate::config::Scheme;
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct TimingRow {
    scheme: &'static str,
    repetitions: usize,
    inputs: usize,
    median_ms_per_input: f64,
    min_ms_per_input: f64,
    max_ms_per_input: f64,
}

#[derive(Serialize)]
struct MeasurementRow {
    scheme: &'static str,
    repetition: usize,
    ms_per_input: f64,
}

/// Model evaluations per input, averaged over the timed inputs.
#[derive(Serialize)]
struct EvalRow {
    scheme: &'static str,
    inputs: usize,
    encode: f64,
    decode: f64,
    predict: f64,
    objective: f64,
}

#[derive(Serialize)]
struct FitRow {
    scheme: &'static str,
    fit_ms: f64,
}

pub fn run(ctx: &mut Ctx) -> CliResult<()> {
    let bundle = ctx.bundle()?;
    let data = ctx.data()?;
    let cfg = ctx.cfg.clone();
    if cfg.bench.repetitions == 0 {
        return Err(CliError::Usage("bench.repetitions must be at least 1".into()));
    }
    if cfg.bench.inputs == 0 {
        return Err(CliError::Usage("bench.inputs must be at least 1".into()));
    }
    let g = group_data(&cfg, &data, &train_partition(&data, &bundle)?)?;
    let rows: Vec<usize> = eval_points(&cfg, &data, &bundle, g.group)?
        .into_iter()
        .take(cfg.bench.inputs)
        .collect();
    let n = rows.len();
    let init = init_context(&cfg, &data, &bundle)?;

    let mut timing = Vec::new();
    let mut measurements = Vec::new();
    let mut evals = Vec::new();
    let mut fits = Vec::new();
    for &scheme in &cfg.bench.schemes {
        let fitted = match scheme {
            Scheme::Dclue => None,
            _ => {
                let start = Instant::now();
                let f = fit_scheme(ctx, scheme, &bundle, &g)?;
                fits.push(FitRow {
                    scheme: scheme.name(),
                    fit_ms: start.elapsed().as_secs_f64() * 1e3,
                });
                Some(f)
            }
        };
        let once = |x: &[f64]| -> clueset_core::Result<()> {
            match &fitted {
                Some(f) => {
                    let mapped = f.as_map().map(&bundle, x)?;
                    bundle.predict(&mapped)?;
                }
                None => {
                    delta_clue(x, &bundle, &cfg.search, &init)?;
                }
            }
            Ok(())
        };
        let before = bundle.evals();
        for &i in &rows {
            once(data.input(i))?;
        }
        let used = bundle.evals().since(before);
        let per = |c: u64| c as f64 / n as f64;
        evals.push(EvalRow {
            scheme: scheme.name(),
            inputs: n,
            encode: per(used.encode),
            decode: per(used.decode),
            predict: per(used.predict),
            objective: per(used.objective),
        });
        let mut times = Vec::with_capacity(cfg.bench.repetitions);
        for rep in 0..cfg.bench.repetitions {
            let start = Instant::now();
            for &i in &rows {
                once(data.input(i))?;
            }
            let ms = start.elapsed().as_secs_f64() * 1e3 / n as f64;
            measurements.push(MeasurementRow {
                scheme: scheme.name(),
                repetition: rep,
                ms_per_input: ms,
            });
            times.push(ms);
        }
        timing.push(TimingRow {
            scheme: scheme.name(),
            repetitions: cfg.bench.repetitions,
            inputs: n,
            median_ms_per_input: stats::median(&times),
            min_ms_per_input: stats::min(&times),
            max_ms_per_input: stats::max(&times),
        });
    }
    if timing.is_empty() {
        return Err(CliError::Usage("no bench schemes selected".into()));
    }
    ctx.rec.write("evals.csv", &io::to_csv(&evals)?)?;
    ctx.rec.write_timing("timing.csv", &io::to_csv(&timing)?)?;
    ctx.rec.write_timing("measurements.csv", &io::to_csv(&measurements)?)?;
    let fit_csv = if fits.is_empty() {
        b"scheme,fit_ms\n".to_vec()
    } else {
        io::to_csv(&fits)?
    };
    ctx.rec.write_timing("fit_time.csv", &fit_csv)
}
