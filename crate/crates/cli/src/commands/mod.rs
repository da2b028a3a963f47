//! The subcommands and the artifact loading they share.

mod bench;
mod explain;
mod gen_data;
mod glam;
mod sweep;
mod train;

use std::fs;
use std::path::{Path, PathBuf};

use clueset_core::clue::{CESet, InitContext, InitScheme, Scoring};
use clueset_core::data::{partition_by_certainty, Certainty, Dataset, GroupPartition, Split};
use clueset_core::models::ModelBundle;

use crate::args::Command;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{Recorder, RunManifest};

pub use glam::{fit_scheme, TrainedScheme};

/// State of one command run: the resolved config and the manifest recorder.
pub struct Ctx {
    pub cfg: RunConfig,
    pub rec: Recorder,
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> CliResult<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("no {what} given; pass {flag}")))?;
    if !p.exists() {
        return Err(CliError::Usage(format!("{what} not found: {}", p.display())));
    }
    Ok(p)
}

impl Ctx {
    pub fn data(&mut self) -> CliResult<Dataset> {
        let p = require(&self.cfg.paths.data, "dataset", "--data DIR")?.to_path_buf();
        if !p.join("dataset.json").is_file() {
            return Err(CliError::Usage(format!("dataset not found: {} has no dataset.json", p.display())));
        }
        self.rec.input(&p)?;
        Ok(Dataset::load(&p)?)
    }

    pub fn bundle(&mut self) -> CliResult<ModelBundle> {
        let p = require(&self.cfg.paths.bundle, "model bundle", "--bundle DIR")?.to_path_buf();
        if !p.join("bundle.json").is_file() {
            return Err(CliError::Usage(format!("model bundle not found: {} has no bundle.json", p.display())));
        }
        self.rec.input(&p)?;
        Ok(ModelBundle::load(&p)?)
    }

    pub fn cesets(&mut self, path: &Path) -> CliResult<Vec<CESet>> {
        let bytes = fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        self.rec.input(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Usage(format!("{} is not a list of counterfactual sets: {e}", path.display())))
    }
}

/// Training-split partition at the bundle's thresholds.
pub fn train_partition(data: &Dataset, bundle: &ModelBundle) -> CliResult<GroupPartition> {
    let t = bundle.thresholds;
    Ok(partition_by_certainty(data, Split::Train, bundle, t.tau_low, t.tau_high)?)
}

/// Initialisation context; only the path schemes need encoded training data.
pub fn init_context(cfg: &RunConfig, data: &Dataset, bundle: &ModelBundle) -> CliResult<InitContext> {
    match cfg.search.scheme {
        InitScheme::S2 => Ok(InitContext::from_partition(bundle, data, &train_partition(data, bundle)?)?),
        _ => Ok(InitContext::default()),
    }
}

/// Uncertain and certain training inputs of one class, for fitting maps.
pub struct GroupData {
    pub group: usize,
    pub xu: Vec<f64>,
    pub nu: usize,
    pub xc: Vec<f64>,
    pub nc: usize,
}

/// The configured class, or among classes with certain training points the
/// one with the most uncertain training points (lowest index on ties).
pub fn group_data(cfg: &RunConfig, data: &Dataset, partition: &GroupPartition) -> CliResult<GroupData> {
    let group = match cfg.glam.group {
        Some(g) if g >= data.classes => {
            return Err(CliError::Usage(format!("group {g} out of range for {} classes", data.classes)));
        }
        Some(g) => g,
        None => (0..data.classes)
            .filter(|&c| !partition.certain(c).is_empty())
            .max_by_key(|&c| (partition.uncertain(c).len(), std::cmp::Reverse(c)))
            .ok_or_else(|| CliError::Usage("no class has certain training points".into()))?,
    };
    let (u, c) = (partition.uncertain(group), partition.certain(group));
    if u.is_empty() {
        return Err(CliError::Usage(format!("class {group} has no uncertain training points")));
    }
    if c.is_empty() {
        return Err(CliError::Usage(format!("class {group} has no certain training points")));
    }
    let (xu, _) = data.gather(&u);
    let (xc, _) = data.gather(&c);
    Ok(GroupData {
        group,
        xu,
        nu: u.len(),
        xc,
        nc: c.len(),
    })
}

/// Uncertain points of `group` in the configured evaluation split.
pub fn eval_points(cfg: &RunConfig, data: &Dataset, bundle: &ModelBundle, group: usize) -> CliResult<Vec<usize>> {
    let t = bundle.thresholds;
    let p = partition_by_certainty(data, cfg.glam.eval_split, bundle, t.tau_low, t.tau_high)?;
    let rows: Vec<usize> = (0..p.points.len())
        .filter(|&i| p.groups[i] == group && p.flags[i] == Certainty::Uncertain)
        .map(|i| p.points[i])
        .collect();
    if rows.is_empty() {
        return Err(CliError::Usage(format!(
            "class {group} has no uncertain points in the {:?} split",
            cfg.glam.eval_split
        )));
    }
    Ok(rows)
}

pub fn glam_scoring(cfg: &RunConfig, bundle: &ModelBundle) -> Scoring {
    Scoring {
        lambda_x: cfg.glam.lambda_x,
        lambda_y: cfg.glam.lambda_y,
        h_threshold: bundle.thresholds.h_threshold,
    }
}

pub fn execute(command: &Command, cfg: RunConfig, out: &Path) -> CliResult<RunManifest> {
    let mut ctx = Ctx {
        cfg,
        rec: Recorder::new(command.name(), out),
    };
    match command {
        Command::GenData(_) => gen_data::run(&mut ctx)?,
        Command::Train(_) => train::run(&mut ctx)?,
        Command::Explain(_) => explain::run(&mut ctx)?,
        Command::Sweep(_) => sweep::run(&mut ctx)?,
        Command::Glam(_) => glam::run(&mut ctx)?,
        Command::Bench(_) => bench::run(&mut ctx)?,
    }
    let Ctx { cfg, rec } = ctx;
    rec.finish(&cfg)
}
