use serde::{Deserialize, Serialize};

use crate::diversity::{DiversitySpec, Space};
use crate::error::{Error, Result};
use crate::io::{maybe_inf, maybe_inf_opt};

/// How the k descents are initialised around the encoded input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    /// Uniform radius in `[0, r]`, uniform direction.
    S1,
    /// Evenly spaced along the line to the nearest certain latent of each class.
    S2,
    /// Half-normal radius truncated to `r`, uniform direction.
    S3,
    /// Uniform per coordinate in `[-r, r]`, rejected outside the r-ball.
    S4,
    /// Evenly spaced along a gradient-ascent path on each class probability.
    S5,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Self::S1),
            "s2" => Ok(Self::S2),
            "s3" => Ok(Self::S3),
            "s4" => Ok(Self::S4),
            "s5" => Ok(Self::S5),
            other => Err(Error::InvalidConfig(format!("unknown init scheme {other:?} (expected s1..s5)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Latent search radius around `z0`; infinite means unconstrained.
    #[serde(with = "maybe_inf")]
    pub delta: f64,
    pub k: usize,
    /// Initialisation radius.
    pub r: f64,
    pub scheme: InitScheme,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lambda_d: f64,
    /// Diversity pre-search steps over the initialisations.
    pub n_i: usize,
    /// Step size of the pre-search ascent.
    pub presearch_lr: f64,
    pub lr: f64,
    pub iters: usize,
    /// Acceptance threshold on terminal entropy; `None` uses the bundle's
    /// median training entropy.
    #[serde(with = "maybe_inf_opt")]
    pub h_threshold: Option<f64>,
    pub seed: u64,
    /// Keep every iterate of every descent.
    pub trace: bool,
    /// Set diversity optimised by the diverse variants.
    pub diversity: DiversitySpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            delta: 4.0,
            k: 10,
            r: 4.0,
            scheme: InitScheme::S1,
            lambda_x: 0.0,
            lambda_y: 0.0,
            lambda_d: 0.0,
            n_i: 0,
            presearch_lr: 0.1,
            lr: 0.1,
            iters: 30,
            h_threshold: None,
            seed: 0,
            trace: false,
            diversity: DiversitySpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.delta > 0.0) {
            return bad(format!("delta must be > 0 or inf, got {}", self.delta));
        }
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return bad(format!("r must be finite and >= 0, got {}", self.r));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.iters == 0 {
            return bad("iters must be at least 1".into());
        }
        for (name, v) in [
            ("lambda_x", self.lambda_x),
            ("lambda_y", self.lambda_y),
            ("lambda_d", self.lambda_d),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [("lr", self.lr), ("presearch_lr", self.presearch_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if !self.diversity.metric.is_differentiable() || self.diversity.space == Space::Prediction {
            return bad(format!(
                "diversity objective must be dpp, apd or coverage in input or latent space, got {} in {} space",
                self.diversity.metric.name(),
                self.diversity.space.name()
            ));
        }
        if let Some(h) = self.h_threshold {
            if h.is_nan() {
                return bad("h_threshold is NaN".into());
            }
        }
        Ok(())
    }
}
