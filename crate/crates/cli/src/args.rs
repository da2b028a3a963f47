//! Command-line flags. Every flag becomes a config override, so flags and
//! config files address the same fields.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use crate::config::Override;

#[derive(Debug, Parser)]
#[command(name = "clueset", version, about = "Counterfactual explanations of classifier uncertainty")]
pub struct Cli {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Model bundle directory (written by `train`, read by the rest).
    #[arg(long, global = true, value_name = "PATH")]
    pub bundle: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Override any config field, e.g. `--set search.delta=inf`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Train the autoencoder and classifier ensemble.
    Train(TrainArgs),
    /// Search counterfactuals for the most uncertain inputs.
    Explain(ExplainArgs),
    /// Repeat a search or mapper fit over a grid of one parameter.
    Sweep(SweepArgs),
    /// Train and compare global translation mappers and baselines.
    Glam(GlamArgs),
    /// Time per-counterfactual inference of each scheme.
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Explain(_) => "explain",
            Command::Sweep(_) => "sweep",
            Command::Glam(_) => "glam",
            Command::Bench(_) => "bench",
        }
    }
}

fn push<T: Into<Value>>(out: &mut Vec<Override>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.into()));
    }
}

fn push_path(out: &mut Vec<Override>, key: &str, v: &Option<PathBuf>) {
    push(out, key, v.as_ref().map(|p| p.display().to_string()));
}

fn push_usize(out: &mut Vec<Override>, key: &str, v: Option<usize>) {
    push(out, key, v.map(|n| n as i64));
}

fn push_list(out: &mut Vec<Override>, key: &str, v: &Option<Vec<String>>) {
    push(out, key, v.as_ref().map(|items| Value::Array(items.iter().cloned().map(Value::String).collect())));
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// `blobs` or `minidigits`.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
}

impl GenDataArgs {
    fn overrides(&self, out: &mut Vec<Override>) {
        push(out, "generator.kind", self.kind.clone());
        push_usize(out, "generator.n", self.n);
        push_usize(out, "generator.classes", self.classes);
        push_usize(out, "generator.dim", self.dim);
        push(out, "generator.spread", self.spread);
    }
}

#[derive(Debug, Args)]
pub struct DataArg {
    /// Dataset directory written by `gen-data`.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long)]
    pub vae_epochs: Option<usize>,
    #[arg(long)]
    pub ensemble_epochs: Option<usize>,
    #[arg(long)]
    pub members: Option<usize>,
}

impl TrainArgs {
    fn overrides(&self, out: &mut Vec<Override>) {
        push_path(out, "paths.data", &self.data.data);
        push_usize(out, "train.vae.epochs", self.vae_epochs);
        push_usize(out, "train.ensemble.epochs", self.ensemble_epochs);
        push_usize(out, "train.ensemble.members", self.members);
    }
}

/// Fields of the search configuration.
#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Latent search radius; `inf` for unconstrained.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Initialisation radius.
    #[arg(long)]
    pub r: Option<f64>,
    /// Initialisation scheme, s1 to s5.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub lambda_x: Option<f64>,
    #[arg(long)]
    pub lambda_y: Option<f64>,
    #[arg(long = "lambda-d")]
    pub lambda_d: Option<f64>,
    /// Diversity pre-search steps.
    #[arg(long = "n-i")]
    pub n_i: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub h_threshold: Option<f64>,
    /// Diversity metric optimised by the diverse methods.
    #[arg(long)]
    pub metric: Option<String>,
    /// Space the diversity metric is measured in.
    #[arg(long)]
    pub space: Option<String>,
    /// Record every iterate.
    #[arg(long)]
    pub trace: bool,
}

impl SearchArgs {
    fn overrides(&self, out: &mut Vec<Override>) {
        push(out, "search.delta", self.delta);
        push_usize(out, "search.k", self.k);
        push(out, "search.r", self.r);
        push(out, "search.scheme", self.scheme.as_ref().map(|s| s.to_ascii_lowercase()));
        push(out, "search.lambda_x", self.lambda_x);
        push(out, "search.lambda_y", self.lambda_y);
        push(out, "search.lambda_d", self.lambda_d);
        push_usize(out, "search.n_i", self.n_i);
        push(out, "search.lr", self.lr);
        push_usize(out, "search.iters", self.iters);
        push(out, "search.h_threshold", self.h_threshold);
        push(out, "search.diversity.metric", self.metric.clone());
        push(out, "search.diversity.space", self.space.clone());
        push(out, "search.trace", self.trace.then_some(true));
    }
}

/// Which inputs to explain.
#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Number of highest-entropy inputs.
    #[arg(long)]
    pub top: Option<usize>,
    /// `train` or `test`.
    #[arg(long)]
    pub split: Option<String>,
    /// Restrict to inputs of this class.
    #[arg(long)]
    pub group: Option<usize>,
    /// Only inputs above the uncertainty threshold.
    #[arg(long)]
    pub uncertain_only: bool,
}

impl SelectArgs {
    fn overrides(&self, out: &mut Vec<Override>) {
        push_usize(out, "selection.top", self.top);
        push(out, "selection.split", self.split.clone());
        push_usize(out, "selection.group", self.group);
        push(out, "selection.uncertain_only", self.uncertain_only.then_some(true));
    }
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// clue, dclue, divclue-sim, divclue-seq or divclue-pen.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// delta, lambda_D, lambda_theta or n_i.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma-separated grid, e.g. `0.5,1,2,inf`.
    #[arg(long, allow_hyphen_values = true)]
    pub values: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    /// Class mapped in a lambda_theta sweep.
    #[arg(long = "mapper-group")]
    pub mapper_group: Option<usize>,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Args)]
pub struct GlamArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Schemes to run (repeatable or comma-separated); all by default.
    #[arg(long = "variant", value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Class whose uncertain points are mapped.
    #[arg(long)]
    pub group: Option<usize>,
    #[arg(long)]
    pub lambda_theta: Option<f64>,
    /// Input-distance weight in the reported cost.
    #[arg(long)]
    pub lambda_x: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Search outputs at lambda_x = 0 (an `explain` cesets.json), for glam2.
    #[arg(long, value_name = "FILE")]
    pub glam2_cesets: Option<PathBuf>,
    /// Search outputs at lambda_x = 0.03, for glam3.
    #[arg(long, value_name = "FILE")]
    pub glam3_cesets: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArg,
    /// Schemes to time, comma-separated: glam1, dclue, dbm-input, dbm-latent, nn-input, nn-latent.
    #[arg(long = "schemes", value_delimiter = ',')]
    pub schemes: Option<Vec<String>>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// Uncertain inputs timed per repetition.
    #[arg(long)]
    pub inputs: Option<usize>,
    #[arg(long)]
    pub group: Option<usize>,
    #[command(flatten)]
    pub search: SearchArgs,
}

impl Cli {
    /// Every flag as a config override, global flags first and `--set`
    /// pairs last.
    pub fn overrides(&self) -> crate::error::CliResult<Vec<Override>> {
        let mut out = Vec::new();
        push(&mut out, "seed", self.seed.map(|s| s as i64));
        push_usize(&mut out, "threads", self.threads);
        push_path(&mut out, "paths.bundle", &self.bundle);
        match &self.command {
            Command::GenData(a) => a.overrides(&mut out),
            Command::Train(a) => a.overrides(&mut out),
            Command::Explain(a) => {
                push_path(&mut out, "paths.data", &a.data.data);
                push(&mut out, "explain.method", a.method.clone());
                a.select.overrides(&mut out);
                a.search.overrides(&mut out);
            }
            Command::Sweep(a) => {
                push_path(&mut out, "paths.data", &a.data.data);
                push(&mut out, "sweep.axis", a.axis.clone());
                if let Some(v) = &a.values {
                    out.push(("sweep.values".into(), grid(v)?));
                }
                push(&mut out, "sweep.method", a.method.clone());
                push_usize(&mut out, "glam.group", a.mapper_group);
                a.select.overrides(&mut out);
                a.search.overrides(&mut out);
            }
            Command::Glam(a) => {
                push_path(&mut out, "paths.data", &a.data.data);
                push_list(&mut out, "glam.variants", &a.variants);
                push_usize(&mut out, "glam.group", a.group);
                push(&mut out, "mapper.lambda_theta", a.lambda_theta);
                push(&mut out, "glam.lambda_x", a.lambda_x);
                push_usize(&mut out, "mapper.steps", a.steps);
                push_path(&mut out, "paths.glam2_cesets", &a.glam2_cesets);
                push_path(&mut out, "paths.glam3_cesets", &a.glam3_cesets);
            }
            Command::Bench(a) => {
                push_path(&mut out, "paths.data", &a.data.data);
                push_list(&mut out, "bench.schemes", &a.schemes);
                push_usize(&mut out, "bench.repetitions", a.repetitions);
                push_usize(&mut out, "bench.inputs", a.inputs);
                push_usize(&mut out, "glam.group", a.group);
                a.search.overrides(&mut out);
            }
        }
        for s in &self.set {
            out.push(crate::config::parse_assignment(s)?);
        }
        Ok(out)
    }
}

/// A comma-separated grid; `inf` and `-inf` are allowed.
fn grid(text: &str) -> crate::error::CliResult<Value> {
    let items = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map(Value::Float)
                .map_err(|_| crate::error::CliError::Usage(format!("grid value {s:?} is not a number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Value::Array(items))
}
