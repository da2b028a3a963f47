#![allow(dead_code)]

use std::sync::OnceLock;

use clueset_core::data::{gen_blobs, partition_by_certainty, Dataset, GroupPartition, Split};
use clueset_core::models::{Ensemble, EnsembleTrainConfig, Recon, Vae, VaeTrainConfig};
use clueset_core::models::{train_bundle, ModelBundle, Thresholds, TrainConfig};
use clueset_core::nn::{Activation, Mlp};
use clueset_core::rng;

/// Untrained bundle with random weights; good enough for gradient checks.
pub fn random_bundle(seed: u64, input: usize, latent: usize, classes: usize, members: usize) -> ModelBundle {
    let mut r = rng::stream(seed, &[99]);
    let vae = Vae::init(input, latent, &[12], Recon::Bernoulli, &mut r);
    let ensemble = Ensemble {
        members: (0..members)
            .map(|_| Mlp::init(&[input, 10, classes], Activation::Relu, &mut r))
            .collect(),
    };
    let thresholds = Thresholds {
        tau_low: 0.1,
        tau_high: 0.5,
        h_threshold: 0.3,
    };
    ModelBundle::new(vae, ensemble, thresholds).unwrap()
}

pub struct Trained {
    pub data: Dataset,
    pub bundle: ModelBundle,
    pub partition: GroupPartition,
}

/// Four well-separated blobs in eight dimensions with a small trained
/// bundle, built once per test binary.
pub fn blobs() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = gen_blobs(4, 8, 1200, 0.12, 5).unwrap();
        let cfg = TrainConfig {
            vae: VaeTrainConfig {
                latent: 2,
                hidden: vec![32, 32],
                epochs: 40,
                kl_weight: 0.1,
                ..Default::default()
            },
            ensemble: EnsembleTrainConfig {
                members: 3,
                hidden: vec![16],
                epochs: 25,
                ..Default::default()
            },
        };
        let bundle = train_bundle(&data, &cfg, 11).unwrap();
        let t = bundle.thresholds;
        let partition = partition_by_certainty(&data, Split::Train, &bundle, t.tau_low, t.tau_high).unwrap();
        Trained { data, bundle, partition }
    })
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, with both-zero counted as agreement.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}
