//! The run configuration: a TOML document, overridden by command-line flags
//! and `--set key=value` pairs, then resolved into typed sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use clueset_core::clue::ExperimentConfig;
use clueset_core::data::{GeneratorSpec, Split};
use clueset_core::explain::{Method, Selector};
use clueset_core::glam::MapperConfig;
use clueset_core::models::TrainConfig;
use clueset_core::sweep::Axis;

use crate::error::{CliError, CliResult};

/// Counterfactual schemes the `glam` and `bench` commands know about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Glam1,
    Glam2,
    Glam3,
    DbmInput,
    DbmLatent,
    NnInput,
    NnLatent,
    /// Per-input constrained search; benchmark only.
    Dclue,
}

impl Scheme {
    pub const MAPPERS: [Scheme; 7] = [
        Scheme::Glam1,
        Scheme::Glam2,
        Scheme::Glam3,
        Scheme::DbmInput,
        Scheme::DbmLatent,
        Scheme::NnInput,
        Scheme::NnLatent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Glam1 => "glam1",
            Scheme::Glam2 => "glam2",
            Scheme::Glam3 => "glam3",
            Scheme::DbmInput => "dbm-input",
            Scheme::DbmLatent => "dbm-latent",
            Scheme::NnInput => "nn-input",
            Scheme::NnLatent => "nn-latent",
            Scheme::Dclue => "dclue",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Scheme::MAPPERS
            .into_iter()
            .chain([Scheme::Dclue])
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "unknown scheme {s:?}, expected glam1, glam2, glam3, dbm-input, dbm-latent, nn-input, nn-latent or dclue"
                ))
            })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    /// Search outputs at lambda_x = 0, used to train glam2.
    pub glam2_cesets: Option<PathBuf>,
    /// Search outputs at lambda_x = 0.03, used to train glam3.
    pub glam3_cesets: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub method: Method,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self { method: Method::Dclue }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: Option<Axis>,
    pub values: Vec<f64>,
    pub method: Method,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: None,
            values: Vec::new(),
            method: Method::Dclue,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlamConfig {
    pub variants: Vec<Scheme>,
    /// Class whose uncertain points are mapped; defaults to the class with
    /// the most uncertain training points.
    pub group: Option<usize>,
    /// Split the mapped uncertain points come from.
    pub eval_split: Split,
    /// Cost weights used to score mapped points.
    pub lambda_x: f64,
    pub lambda_y: f64,
}

impl Default for GlamConfig {
    fn default() -> Self {
        Self {
            variants: Scheme::MAPPERS.to_vec(),
            group: None,
            eval_split: Split::Test,
            lambda_x: 0.03,
            lambda_y: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub schemes: Vec<Scheme>,
    pub repetitions: usize,
    /// Uncertain points timed per repetition.
    pub inputs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            schemes: vec![
                Scheme::Glam1,
                Scheme::Dclue,
                Scheme::DbmInput,
                Scheme::DbmLatent,
                Scheme::NnInput,
                Scheme::NnLatent,
            ],
            repetitions: 5,
            inputs: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// The one seed every random stream derives from.
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub generator: GeneratorSpec,
    pub train: TrainConfig,
    pub search: ExperimentConfig,
    pub selection: Selector,
    pub explain: ExplainConfig,
    pub sweep: SweepConfig,
    pub mapper: MapperConfig,
    pub glam: GlamConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            paths: Paths::default(),
            generator: GeneratorSpec::Minidigits { n: 2500 },
            train: TrainConfig::default(),
            search: ExperimentConfig::default(),
            selection: Selector::default(),
            explain: ExplainConfig::default(),
            sweep: SweepConfig::default(),
            mapper: MapperConfig::default(),
            glam: GlamConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// A dotted key and its replacement value.
pub type Override = (String, toml::Value);

/// Reads `text` as a TOML value; anything that does not parse is a string.
pub fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

/// Parses a `key=value` flag.
pub fn parse_assignment(s: &str) -> CliResult<Override> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got {s:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Usage(format!("malformed key in {s:?}")));
    }
    Ok((key.to_string(), parse_value(value.trim())))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("cannot set {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Fills the generator fields not given with the defaults of its kind, so
/// `--kind blobs` alone describes a complete dataset.
fn complete_generator(table: &mut toml::Table) -> CliResult<()> {
    let Some(g) = table.get_mut("generator") else {
        return Ok(());
    };
    let g = g
        .as_table_mut()
        .ok_or_else(|| CliError::Usage("generator must be a table".into()))?;
    let kind = g.get("kind").and_then(|k| k.as_str()).unwrap_or("minidigits").to_string();
    let defaults: &[(&str, toml::Value)] = match kind.as_str() {
        "minidigits" => &[("n", toml::Value::Integer(2500))],
        "blobs" => &[
            ("classes", toml::Value::Integer(4)),
            ("dim", toml::Value::Integer(8)),
            ("n", toml::Value::Integer(2500)),
            ("spread", toml::Value::Float(0.12)),
        ],
        other => return Err(CliError::Usage(format!("unknown generator kind {other:?}, expected blobs or minidigits"))),
    };
    g.insert("kind".into(), toml::Value::String(kind));
    for (k, v) in defaults {
        g.entry(k.to_string()).or_insert_with(|| v.clone());
    }
    Ok(())
}

fn read_table(path: &Path) -> CliResult<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Loads the config file (if any), applies overrides in order, and checks
/// every section.
pub fn resolve(file: Option<&Path>, overrides: &[Override]) -> CliResult<RunConfig> {
    let mut table = match file {
        Some(p) => read_table(p)?,
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        set_path(&mut table, k, v.clone())?;
    }
    complete_generator(&mut table)?;
    if table.get("search").and_then(|s| s.get("seed")).is_some() {
        return Err(CliError::Usage("search.seed is taken from the top-level seed; set `seed` instead".into()));
    }
    let mut cfg: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid configuration: {}", e.message())))?;
    cfg.search.seed = cfg.seed;
    cfg.search.validate()?;
    cfg.mapper.validate()?;
    if cfg.threads == Some(0) {
        return Err(CliError::Usage("threads must be at least 1".into()));
    }
    for (name, v) in [("glam.lambda_x", cfg.glam.lambda_x), ("glam.lambda_y", cfg.glam.lambda_y)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    if let Some(s) = cfg.glam.variants.iter().find(|s| **s == Scheme::Dclue) {
        return Err(CliError::Usage(format!("{} is not a mapping scheme", s.name())));
    }
    Ok(cfg)
}
