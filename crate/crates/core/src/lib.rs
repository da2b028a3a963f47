pub mod autodiff;
pub mod clue;
pub mod data;
pub mod divclue;
pub mod diversity;
pub mod error;
pub mod explain;
pub mod glam;
pub mod io;
pub mod models;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod sweep;

pub use autodiff::{Graph, NodeId, Tensor};
pub use error::{Error, Result};
