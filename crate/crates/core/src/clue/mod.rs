//! Latent counterfactual search: objective, initialisation and constrained
//! descent.

mod ceset;
mod config;
mod descent;
mod init;
mod objective;

pub use ceset::{label_distribution, CESet, CandidateCE, Origin, Scoring, Trajectory};
pub use config::{ExperimentConfig, InitScheme};
pub use descent::{clue, delta_clue, project_to_ball};
pub(crate) use descent::{descend, Problem};
pub use init::{init_point, InitContext};
pub use objective::{label_cross_entropy, objective_value, Evaluation, Objective};
