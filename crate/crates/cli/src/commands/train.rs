use serde::Serialize;

use clueset_core::models::{train_bundle, Thresholds, TrainingReport};

use super::Ctx;
use crate::error::CliResult;
use crate::manifest::tree_hash;

#[derive(Serialize)]
struct Report<'a> {
    seed: u64,
    heldout_accuracy: f64,
    heldout_count: usize,
    thresholds: Thresholds,
    /// Hash of the bundle directory tree.
    bundle_sha256: String,
    training: &'a TrainingReport,
}

pub fn run(ctx: &mut Ctx) -> CliResult<()> {
    let data = ctx.data()?;
    let (train_cfg, seed) = (ctx.cfg.train.clone(), ctx.cfg.seed);
    let bundle = ctx.rec.timed("train", || Ok(train_bundle(&data, &train_cfg, seed)?))?;
    let dir = match &ctx.cfg.paths.bundle {
        Some(p) => p.clone(),
        None => ctx.rec.out_dir().join("bundle"),
    };
    bundle.save(&dir)?;
    ctx.rec.written(&dir)?;
    let training = bundle.report.as_ref().expect("freshly trained bundle has a report");
    let report = Report {
        seed,
        heldout_accuracy: training.ensemble.heldout_accuracy,
        heldout_count: training.ensemble.heldout_count,
        thresholds: bundle.thresholds,
        bundle_sha256: tree_hash(&dir)?,
        training,
    };
    eprintln!(
        "held-out accuracy {:.4} on {} points",
        report.heldout_accuracy, report.heldout_count
    );
    ctx.rec.write("training_report.json", &clueset_core::io::to_json(&report)?)
}
