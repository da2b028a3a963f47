//! Shared fixture for the benchmarks: a small minidigits bundle and the
//! uncertain and certain training points of its busiest class.

use clueset_core::data::{gen_minidigits, partition_by_certainty, Split};
use clueset_core::models::{train_bundle, EnsembleTrainConfig, ModelBundle, TrainConfig, VaeTrainConfig};

pub struct Fixture {
    pub bundle: ModelBundle,
    pub group: usize,
    /// Uncertain training inputs of `group`, row-major.
    pub xu: Vec<f64>,
    pub nu: usize,
    /// Certain training inputs of `group`, row-major.
    pub xc: Vec<f64>,
    pub nc: usize,
}

impl Fixture {
    pub fn uncertain(&self, i: usize) -> &[f64] {
        let d = self.bundle.dims().input;
        &self.xu[i * d..(i + 1) * d]
    }
}

pub fn fixture() -> Fixture {
    let data = gen_minidigits(1200, 0).expect("minidigits");
    let cfg = TrainConfig {
        vae: VaeTrainConfig {
            epochs: 30,
            ..Default::default()
        },
        ensemble: EnsembleTrainConfig {
            members: 3,
            epochs: 20,
            ..Default::default()
        },
    };
    let bundle = train_bundle(&data, &cfg, 0).expect("training");
    let t = bundle.thresholds;
    let p = partition_by_certainty(&data, Split::Train, &bundle, t.tau_low, t.tau_high).expect("partition");
    let group = (0..data.classes)
        .filter(|&c| !p.certain(c).is_empty())
        .max_by_key(|&c| (p.uncertain(c).len(), std::cmp::Reverse(c)))
        .expect("a class with certain points");
    let (u, c) = (p.uncertain(group), p.certain(group));
    let (xu, _) = data.gather(&u);
    let (xc, _) = data.gather(&c);
    Fixture {
        bundle,
        group,
        xu,
        nu: u.len(),
        xc,
        nc: c.len(),
    }
}
