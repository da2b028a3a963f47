mod common;

use clueset_core::autodiff::kernels;
use clueset_core::clue::{clue, delta_clue, project_to_ball, CESet, ExperimentConfig, InitContext, InitScheme};
use clueset_core::data::Certainty;
use clueset_core::divclue::{diverse_clue, DivMethod};
use clueset_core::diversity::{BaseDistance, DiversitySpec, Metric, Space};
use common::blobs;
use proptest::prelude::*;

fn uncertain_inputs(n: usize) -> Vec<Vec<f64>> {
    let t = blobs();
    let p = &t.partition;
    let mut rows: Vec<usize> = (0..p.points.len()).filter(|&i| p.flags[i] == Certainty::Uncertain).collect();
    rows.sort_by(|&a, &b| p.entropies[b].total_cmp(&p.entropies[a]));
    rows.iter().take(n).map(|&i| t.data.input(p.points[i]).to_vec()).collect()
}

fn ctx() -> InitContext {
    let t = blobs();
    InitContext::from_partition(&t.bundle, &t.data, &t.partition).unwrap()
}

fn same_candidates(a: &CESet, b: &CESet) {
    assert_eq!(a.candidates, b.candidates);
    assert_eq!(a.trajectories, b.trajectories);
}

#[test]
fn zero_diversity_weight_reduces_to_constrained_search() {
    let t = blobs();
    let ctx = ctx();
    for (i, x0) in uncertain_inputs(3).iter().enumerate() {
        for scheme in [InitScheme::S1, InitScheme::S2, InitScheme::S4] {
            let cfg = ExperimentConfig {
                k: 5,
                delta: 1.5,
                r: 1.0,
                scheme,
                lambda_x: 0.02,
                seed: i as u64,
                trace: true,
                iters: 15,
                ..Default::default()
            };
            let base = delta_clue(x0, &t.bundle, &cfg, &ctx).unwrap();
            for m in DivMethod::ALL {
                let rec = diverse_clue(m, x0, &t.bundle, &cfg, &ctx).unwrap();
                same_candidates(&rec.set, &base);
            }
        }
    }
}

#[test]
fn unbounded_single_start_reduces_to_plain_search() {
    let t = blobs();
    let ctx = ctx();
    for x0 in uncertain_inputs(4) {
        for lambda_x in [0.0, 0.05] {
            let cfg = ExperimentConfig {
                delta: f64::INFINITY,
                r: 0.0,
                k: 1,
                lambda_x,
                trace: true,
                ..Default::default()
            };
            let a = delta_clue(&x0, &t.bundle, &cfg, &ctx).unwrap();
            let b = clue(&x0, &t.bundle, &cfg).unwrap();
            same_candidates(&a, &b);
        }
    }
}

#[test]
fn every_iterate_stays_inside_the_radius() {
    let t = blobs();
    let ctx = ctx();
    let specs = [
        DiversitySpec { metric: Metric::Dpp, space: Space::Latent, base: BaseDistance::L2 },
        DiversitySpec { metric: Metric::Apd, space: Space::Input, base: BaseDistance::L1 },
        DiversitySpec { metric: Metric::Coverage, space: Space::Latent, base: BaseDistance::L2 },
    ];
    let mut checked = 0;
    for x0 in uncertain_inputs(3) {
        for delta in [0.05, 0.3, 1.0] {
            for (si, spec) in specs.iter().enumerate() {
                let cfg = ExperimentConfig {
                    k: 4,
                    delta,
                    r: 2.0,
                    lambda_d: 0.5,
                    n_i: 3,
                    diversity: *spec,
                    trace: true,
                    iters: 12,
                    lr: 0.5,
                    seed: si as u64,
                    ..Default::default()
                };
                let mut sets = vec![delta_clue(&x0, &t.bundle, &cfg, &ctx).unwrap()];
                for m in DivMethod::ALL {
                    sets.push(diverse_clue(m, &x0, &t.bundle, &cfg, &ctx).unwrap().set);
                }
                for s in sets {
                    for c in &s.candidates {
                        assert!(c.rho <= delta + 1e-6, "rho {} > {delta}", c.rho);
                    }
                    for tr in s.trajectories.as_ref().unwrap() {
                        for z in &tr.points {
                            assert!(kernels::l2_dist(z, &s.z0) <= delta + 1e-6);
                            checked += 1;
                        }
                    }
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn descents_do_not_end_above_their_start() {
    let t = blobs();
    let ctx = ctx();
    let inputs = uncertain_inputs(10);
    let mut improvements = Vec::new();
    for seed in 0..100u64 {
        let x0 = &inputs[seed as usize % inputs.len()];
        let cfg = ExperimentConfig {
            k: 1,
            delta: 2.0,
            r: 1.0,
            seed,
            lambda_x: 0.01,
            ..Default::default()
        };
        let s = delta_clue(x0, &t.bundle, &cfg, &ctx).unwrap();
        let c = &s.candidates[0];
        let start = c.start_cost.unwrap();
        let end = s.candidates[0].cost;
        assert!(end <= start, "seed {seed}: {start} -> {end}");
        improvements.push(start - end);
    }
    assert!(improvements.iter().sum::<f64>() / 100.0 > 0.0);
}

#[test]
fn reruns_are_bitwise_identical() {
    let t = blobs();
    let ctx = ctx();
    let x0 = &uncertain_inputs(1)[0];
    let cfg = ExperimentConfig {
        k: 6,
        lambda_d: 1.0,
        n_i: 2,
        trace: true,
        ..Default::default()
    };
    for m in DivMethod::ALL {
        let a = diverse_clue(m, x0, &t.bundle, &cfg, &ctx).unwrap();
        let b = diverse_clue(m, x0, &t.bundle, &cfg, &ctx).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }
}

#[test]
fn record_shapes() {
    let t = blobs();
    let ctx = ctx();
    let x0 = &uncertain_inputs(1)[0];
    let cfg = ExperimentConfig { k: 4, iters: 7, lambda_d: 0.3, ..Default::default() };
    for m in DivMethod::ALL {
        let rec = diverse_clue(m, x0, &t.bundle, &cfg, &ctx).unwrap();
        assert_eq!(rec.joint_loss.len(), 7);
        assert_eq!(rec.set.candidates.len(), 4);
        assert!(rec.set.trajectories.is_none());
        let accepted = rec.set.accepted().count();
        assert_eq!(rec.evaluation.is_empty(), accepted == 0);
        if accepted > 0 {
            assert_eq!(rec.evaluation.len(), 11);
            assert!(rec.evaluation.iter().all(|r| r.k == accepted));
        }
    }
}

proptest! {
    #[test]
    fn projection_is_idempotent_bitwise(
        z in prop::collection::vec(-50.0..50.0f64, 1..10),
        shift in -5.0..5.0f64,
        delta in 1e-3..20.0f64,
    ) {
        let z0: Vec<f64> = z.iter().map(|v| v * 0.1 + shift).collect();
        let once = project_to_ball(&z, &z0, delta);
        prop_assert_eq!(project_to_ball(&once, &z0, delta), once.clone());
        prop_assert!(kernels::l2_dist(&once, &z0) <= delta * (1.0 + 1e-12));
    }
}

#[test]
fn search_cost_grows_with_starts_and_iterations() {
    let bundle = blobs().bundle.clone();
    let ctx = ctx();
    let x0 = &uncertain_inputs(1)[0];
    for (k, iters) in [(1, 5), (4, 5), (4, 20)] {
        let cfg = ExperimentConfig { k, iters, ..Default::default() };
        let before = bundle.evals();
        delta_clue(x0, &bundle, &cfg, &ctx).unwrap();
        let used = bundle.evals().since(before);
        assert_eq!(used.objective, (k * (iters + 1)) as u64);
        assert_eq!(used.decode, k as u64);
    }
}
