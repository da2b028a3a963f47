//! Acceptance run over a minidigits bundle trained through the command line.
//! Prints one PASS or FAIL line per criterion and exits nonzero on any FAIL.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use clueset_cli::config::RunConfig;
use clueset_cli::manifest::{RunManifest, MANIFEST_FILE};
use clueset_core::autodiff::kernels;
use clueset_core::clue::{
    clue, delta_clue, objective_value, project_to_ball, CESet, ExperimentConfig, InitContext, InitScheme, Objective,
};
use clueset_core::data::{partition_by_certainty, Certainty, Dataset, GroupPartition, Split};
use clueset_core::divclue::{diverse_clue, penalty_value_and_grad, DivMethod, JointObjective, SetDiversity};
use clueset_core::diversity::{
    apd, coverage, coverage_max, distinct_labels, diversity_grad, dpp, label_entropy, prediction_coverage,
    BaseDistance, DiversitySpec, Metric, Space,
};
use clueset_core::glam::{train_mapper, MapperConfig, MapperLoss};
use clueset_core::io;
use clueset_core::models::{Ensemble, ModelBundle, Recon, Thresholds, Vae};
use clueset_core::nn::{Activation, Mlp};
use clueset_core::rng;
use rand::Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

const SEED: &str = "1";
const FD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const FD_TRIALS: u64 = 100;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// Command line and files

fn clueset(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_clueset"))
        .args(args)
        .output()
        .map_err(|e| format!("cannot start clueset: {e}"))?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`clueset {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn fresh(p: &Path) -> PathBuf {
    let _ = fs::remove_dir_all(p);
    fs::create_dir_all(p).expect("create scratch dir");
    p.to_path_buf()
}

/// Splits a header-plus-rows CSV without quoted fields into column maps.
fn read_csv(p: &Path) -> Result<Vec<BTreeMap<String, String>>, String> {
    let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    Ok(lines
        .map(|l| header.iter().map(|h| h.to_string()).zip(l.split(',').map(str::to_string)).collect())
        .collect())
}

fn num(row: &BTreeMap<String, String>, col: &str) -> Result<f64, String> {
    row.get(col)
        .ok_or_else(|| format!("no column {col}"))?
        .parse()
        .map_err(|e| format!("column {col}: {e}"))
}

/// `statistic -> [(grid value, result)]` from a sweep table, in grid order.
fn sweep_series(p: &Path) -> Result<BTreeMap<String, Vec<(f64, f64)>>, String> {
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in read_csv(p)? {
        out.entry(row["statistic"].clone())
            .or_default()
            .push((num(&row, "value")?, num(&row, "result")?));
    }
    Ok(out)
}

// Statistics oracles

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Steps against the expected direction: `(count, largest magnitude)`.
fn inversions(v: &[f64], increasing: bool) -> (usize, f64) {
    let bad: Vec<f64> = v
        .windows(2)
        .map(|w| if increasing { w[0] - w[1] } else { w[1] - w[0] })
        .filter(|d| *d > 0.0)
        .collect();
    (bad.len(), bad.iter().cloned().fold(0.0, f64::max))
}

fn fmt_series(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

// Shared state

struct Env {
    work: PathBuf,
    data_dir: PathBuf,
    bundle_dir: PathBuf,
    data: Dataset,
    bundle: ModelBundle,
    partition: GroupPartition,
    ctx: InitContext,
    group: usize,
}

impl Env {
    fn build(work: &Path) -> Result<Self, String> {
        let data_dir = work.join("data");
        clueset(&["--seed", SEED, "--out", s(&data_dir), "gen-data", "--kind", "minidigits"])?;
        let train_dir = work.join("train");
        clueset(&["--seed", SEED, "--out", s(&train_dir), "train", "--data", s(&data_dir)])?;
        let bundle_dir = train_dir.join("bundle");
        let data = Dataset::load(&data_dir).map_err(|e| e.to_string())?;
        let bundle = ModelBundle::load(&bundle_dir).map_err(|e| e.to_string())?;
        let t = bundle.thresholds;
        let partition =
            partition_by_certainty(&data, Split::Train, &bundle, t.tau_low, t.tau_high).map_err(|e| e.to_string())?;
        let ctx = InitContext::from_partition(&bundle, &data, &partition).map_err(|e| e.to_string())?;
        let group = clueset_cli::commands::group_data(&RunConfig::default(), &data, &partition)
            .map_err(|e| e.to_string())?
            .group;
        Ok(Self {
            work: work.to_path_buf(),
            data_dir,
            bundle_dir,
            data,
            bundle,
            partition,
            ctx,
            group,
        })
    }

    /// The `n` most uncertain flagged training inputs.
    fn uncertain_inputs(&self, n: usize) -> Vec<Vec<f64>> {
        let p = &self.partition;
        let mut rows: Vec<usize> = (0..p.points.len()).filter(|&i| p.flags[i] == Certainty::Uncertain).collect();
        rows.sort_by(|&a, &b| p.entropies[b].total_cmp(&p.entropies[a]).then(a.cmp(&b)));
        rows.iter().take(n).map(|&i| self.data.input(p.points[i]).to_vec()).collect()
    }

    /// Runs a data-and-bundle command at the shared seed.
    fn cli(&self, out: &Path, command: &str, extra: &[&str]) -> Result<(), String> {
        let mut args = vec!["--seed", SEED, "--out", s(out), "--bundle", s(&self.bundle_dir), command, "--data", s(&self.data_dir)];
        args.extend_from_slice(extra);
        clueset(&args)
    }

    fn dir(&self, name: &str) -> PathBuf {
        fresh(&self.work.join(name))
    }
}

// 1. Gradients

fn random_bundle(seed: u64, input: usize, latent: usize, classes: usize, members: usize) -> ModelBundle {
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
    ModelBundle::new(vae, ensemble, thresholds).expect("valid random bundle")
}

fn normal_vec(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn unit_vec(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(0.0..1.0)).collect()
}

fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_STEP;
            let up = f(&p);
            p[i] = x[i] - FD_STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn entropy_errors() -> Vec<f64> {
    (0..FD_TRIALS)
        .map(|seed| {
            let mut r = rng::stream(seed, &[501]);
            let (d, m, c) = (r.random_range(3..9), r.random_range(2..5), r.random_range(2..6));
            let bundle = random_bundle(seed + 5000, d, m, c, r.random_range(1..4));
            let x0 = unit_vec(&mut r, d);
            let z = normal_vec(&mut r, m);
            let g = Objective::new(&bundle, &x0, 0.0, 0.0).unwrap().value_and_grad(&z).unwrap().grad;
            rel_err(&g, &numeric_grad(&z, |z| objective_value(&bundle, z, &x0, 0.0, 0.0).unwrap()))
        })
        .collect()
}

fn objective_errors() -> Vec<f64> {
    (0..FD_TRIALS)
        .map(|seed| {
            let mut r = rng::stream(seed, &[502]);
            let (d, m, c) = (r.random_range(3..9), r.random_range(2..5), r.random_range(2..6));
            let bundle = random_bundle(seed + 6000, d, m, c, r.random_range(1..4));
            let x0 = unit_vec(&mut r, d);
            let z = normal_vec(&mut r, m);
            let (lx, ly) = (r.random_range(0.01..1.0), r.random_range(0.01..1.0));
            let g = Objective::new(&bundle, &x0, lx, ly).unwrap().value_and_grad(&z).unwrap().grad;
            rel_err(&g, &numeric_grad(&z, |z| objective_value(&bundle, z, &x0, lx, ly).unwrap()))
        })
        .collect()
}

fn mapper_errors() -> Vec<f64> {
    (0..FD_TRIALS)
        .map(|seed| {
            let mut r = rng::stream(seed, &[503]);
            let (d, m) = (r.random_range(3..9), r.random_range(2..5));
            let bundle = random_bundle(seed + 7000, d, m, 3, 1);
            let (nu, nc) = (r.random_range(2..7), r.random_range(2..6));
            let zu = normal_vec(&mut r, nu * m);
            let xc = unit_vec(&mut r, nc * d);
            let theta = normal_vec(&mut r, m);
            let mut loss = MapperLoss::new(&bundle, &zu, nu, &xc, nc).unwrap();
            let (_, g) = loss.value_and_grad(&theta).unwrap();
            rel_err(&g, &numeric_grad(&theta, |t| loss.value_and_grad(t).unwrap().0))
        })
        .collect()
}

fn set_metric_errors(metric: Metric, tag: u64) -> Vec<f64> {
    (0..FD_TRIALS)
        .map(|seed| {
            let mut r = rng::stream(seed, &[tag]);
            let (k, d) = (r.random_range(2..7), r.random_range(2..6));
            let spec = DiversitySpec {
                metric,
                space: Space::Input,
                base: if seed % 2 == 0 { BaseDistance::L2 } else { BaseDistance::L1 },
            };
            let pts: Vec<Vec<f64>> = (0..k).map(|_| unit_vec(&mut r, d)).collect();
            let x0 = unit_vec(&mut r, d);
            let reference = (metric == Metric::Coverage).then_some(x0.as_slice());
            let (_, g) = diversity_grad(&spec, &pts, reference).unwrap();
            let n = numeric_grad(&pts.concat(), |p| {
                let rows: Vec<Vec<f64>> = p.chunks(d).map(<[f64]>::to_vec).collect();
                diversity_grad(&spec, &rows, reference).unwrap().0
            });
            rel_err(&g.concat(), &n)
        })
        .collect()
}

fn decoded_diversity_errors() -> Vec<f64> {
    (0..FD_TRIALS)
        .map(|seed| {
            let mut r = rng::stream(seed, &[507]);
            let (d, m, k) = (r.random_range(3..7), r.random_range(2..4), r.random_range(2..5));
            let bundle = random_bundle(seed + 8000, d, m, 2, 1);
            let cfg = ExperimentConfig {
                diversity: DiversitySpec {
                    metric: [Metric::Dpp, Metric::Apd, Metric::Coverage][seed as usize % 3],
                    space: Space::Input,
                    base: BaseDistance::L2,
                },
                ..Default::default()
            };
            let x0 = unit_vec(&mut r, d);
            let z0 = normal_vec(&mut r, m);
            let zs: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut r, m)).collect();
            let mut div = SetDiversity::new(&bundle, &cfg, &x0, &z0, k).unwrap();
            let (_, g) = div.value_and_grad(&zs).unwrap();
            let n = numeric_grad(&zs.concat(), |p| {
                let rows: Vec<Vec<f64>> = p.chunks(m).map(<[f64]>::to_vec).collect();
                div.value_and_grad(&rows).unwrap().0
            });
            rel_err(&g.concat(), &n)
        })
        .collect()
}

fn joint_errors() -> Vec<f64> {
    (0..FD_TRIALS)
        .map(|seed| {
            let mut r = rng::stream(seed, &[508]);
            let (d, m, c, k) = (r.random_range(3..8), r.random_range(2..4), r.random_range(2..5), r.random_range(2..5));
            let bundle = random_bundle(seed + 9000, d, m, c, r.random_range(1..3));
            let metric = [Metric::Dpp, Metric::Apd, Metric::Coverage][seed as usize % 3];
            let spec = DiversitySpec {
                metric,
                space: Space::Latent,
                base: if seed % 2 == 0 { BaseDistance::L2 } else { BaseDistance::L1 },
            };
            let (lx, ly, ld) = (r.random_range(0.0..0.5), r.random_range(0.0..0.5), r.random_range(0.01..2.0));
            let cfg = ExperimentConfig {
                lambda_x: lx,
                lambda_y: ly,
                lambda_d: ld,
                diversity: spec,
                ..Default::default()
            };
            let x0 = unit_vec(&mut r, d);
            let z0 = bundle.encode(&x0).unwrap();
            let zs: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut r, m)).collect();
            let oracle = |p: &[f64]| {
                let rows: Vec<Vec<f64>> = p.chunks(m).map(<[f64]>::to_vec).collect();
                let mean = rows.iter().map(|z| objective_value(&bundle, z, &x0, lx, ly).unwrap()).sum::<f64>() / k as f64;
                let reference = (metric == Metric::Coverage).then_some(z0.as_slice());
                mean - ld * diversity_grad(&spec, &rows, reference).unwrap().0
            };
            let (_, g) = JointObjective::new(&bundle, &x0, &cfg, k).unwrap().value_and_grad(&zs).unwrap();
            rel_err(&g.concat(), &numeric_grad(&zs.concat(), oracle))
        })
        .collect()
}

fn penalty_errors() -> Vec<f64> {
    (0..FD_TRIALS)
        .map(|seed| {
            let mut r = rng::stream(seed, &[509]);
            let m = r.random_range(2..6);
            let found: Vec<Vec<f64>> = (0..r.random_range(1..5)).map(|_| normal_vec(&mut r, m)).collect();
            let z = normal_vec(&mut r, m);
            let lambda = r.random_range(0.01..2.0);
            let (_, g) = penalty_value_and_grad(&z, &found, lambda);
            rel_err(&g, &numeric_grad(&z, |z| penalty_value_and_grad(z, &found, lambda).0))
        })
        .collect()
}

fn c1_gradients(_: &Env) -> Outcome {
    let suites: [(&str, Vec<f64>); 9] = [
        ("entropy", entropy_errors()),
        ("objective", objective_errors()),
        ("mapper loss", mapper_errors()),
        ("dpp", set_metric_errors(Metric::Dpp, 504)),
        ("apd", set_metric_errors(Metric::Apd, 505)),
        ("coverage", set_metric_errors(Metric::Coverage, 506)),
        ("decoded diversity", decoded_diversity_errors()),
        ("joint diverse objective", joint_errors()),
        ("distance penalty", penalty_errors()),
    ];
    let mut worst_all: f64 = 0.0;
    for (name, errs) in &suites {
        ensure(errs.len() >= 100, || format!("{name}: only {} configurations", errs.len()))?;
        let worst = errs.iter().cloned().fold(0.0, f64::max);
        let fails = errs.iter().filter(|e| !(**e <= FD_TOL)).count();
        ensure(fails == 0, || format!("{name}: {fails}/{} above {FD_TOL:e}, worst {worst:.2e}", errs.len()))?;
        worst_all = worst_all.max(worst);
    }
    Ok(format!("{} suites x {FD_TRIALS} configs, worst relative error {worst_all:.2e}", suites.len()))
}

// 2. Collapse identities

fn set_bytes(set: &CESet) -> Vec<u8> {
    io::to_json(set).expect("sets serialise")
}

fn c2_collapse(env: &Env) -> Outcome {
    let mut checked = 0;
    for (i, x0) in env.uncertain_inputs(3).iter().enumerate() {
        for scheme in [InitScheme::S1, InitScheme::S3, InitScheme::S4, InitScheme::S5] {
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
            let base = set_bytes(&delta_clue(x0, &env.bundle, &cfg, &env.ctx).map_err(|e| e.to_string())?);
            for m in DivMethod::ALL {
                let rec = diverse_clue(m, x0, &env.bundle, &cfg, &env.ctx).map_err(|e| e.to_string())?;
                ensure(set_bytes(&rec.set) == base, || format!("{m:?} at lambda_D = 0 differs from delta-CLUE ({scheme:?})"))?;
                checked += 1;
            }
        }
    }
    for x0 in env.uncertain_inputs(4) {
        for lambda_x in [0.0, 0.05] {
            let cfg = ExperimentConfig {
                delta: f64::INFINITY,
                r: 0.0,
                k: 1,
                lambda_x,
                trace: true,
                ..Default::default()
            };
            let a = delta_clue(&x0, &env.bundle, &cfg, &env.ctx).map_err(|e| e.to_string())?;
            let b = clue(&x0, &env.bundle, &cfg).map_err(|e| e.to_string())?;
            ensure(set_bytes(&a) == set_bytes(&b), || "unbounded single-start delta-CLUE differs from CLUE".into())?;
            checked += 1;
        }
    }
    let (a, b) = (env.dir("c2-clue"), env.dir("c2-dclue"));
    let common = ["--top", "4", "--delta", "inf", "--r", "0", "--k", "1", "--method"];
    env.cli(&a, "explain", &[&common[..], &["clue"]].concat())?;
    env.cli(&b, "explain", &[&common[..], &["dclue"]].concat())?;
    let (fa, fb) = (fs::read(a.join("cesets.json")).unwrap(), fs::read(b.join("cesets.json")).unwrap());
    ensure(fa == fb, || "CLI clue and dclue cesets.json differ".into())?;
    Ok(format!("{} library identities and the CLI clue/dclue output are bitwise equal", checked))
}

// 3. Radius constraint and projection

fn c3_constraint(env: &Env) -> Outcome {
    let specs = [
        DiversitySpec { metric: Metric::Dpp, space: Space::Latent, base: BaseDistance::L2 },
        DiversitySpec { metric: Metric::Apd, space: Space::Input, base: BaseDistance::L1 },
        DiversitySpec { metric: Metric::Coverage, space: Space::Latent, base: BaseDistance::L2 },
    ];
    let mut states = 0usize;
    let mut worst_excess = f64::NEG_INFINITY;
    for x0 in env.uncertain_inputs(3) {
        for delta in [0.05, 0.3, 1.0, 3.0] {
            for (si, spec) in specs.iter().enumerate() {
                let cfg = ExperimentConfig {
                    k: 4,
                    delta,
                    r: 2.0 * delta,
                    lambda_d: 0.5,
                    n_i: 3,
                    diversity: *spec,
                    trace: true,
                    iters: 12,
                    lr: 0.5,
                    seed: si as u64,
                    ..Default::default()
                };
                let mut sets = vec![delta_clue(&x0, &env.bundle, &cfg, &env.ctx).map_err(|e| e.to_string())?];
                for m in DivMethod::ALL {
                    sets.push(diverse_clue(m, &x0, &env.bundle, &cfg, &env.ctx).map_err(|e| e.to_string())?.set);
                }
                for set in &sets {
                    let mut check = |rho: f64| -> Result<(), String> {
                        states += 1;
                        worst_excess = worst_excess.max(rho - delta);
                        ensure(rho <= delta + 1e-6, || format!("rho {rho} exceeds delta {delta}"))
                    };
                    for c in &set.candidates {
                        check(c.rho)?;
                    }
                    for tr in set.trajectories.as_ref().ok_or("trajectories missing")? {
                        for z in &tr.points {
                            check(kernels::l2_dist(z, &set.z0))?;
                        }
                    }
                }
            }
        }
    }
    let mut r = rng::stream(3, &[510]);
    let cases = 10_000;
    for _ in 0..cases {
        let d = r.random_range(1..10);
        let scale = 10f64.powf(r.random_range(-3.0..2.0));
        let z: Vec<f64> = (0..d).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
        let z0: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
        let delta = 10f64.powf(r.random_range(-3.0..1.5));
        let once = project_to_ball(&z, &z0, delta);
        ensure(project_to_ball(&once, &z0, delta) == once, || format!("projection not idempotent at {z:?}"))?;
        ensure(kernels::l2_dist(&once, &z0) <= delta + 1e-6, || "projection leaves the ball".into())?;
    }
    Ok(format!(
        "{states} candidate and trajectory states within delta (max rho - delta {worst_excess:.2e}); {cases} projections idempotent"
    ))
}

// 4. Metric oracles and ranges

fn leibniz_det(m: &[Vec<f64>]) -> f64 {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }
    let n = m.len();
    perms(n)
        .into_iter()
        .map(|p| {
            let inversions = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| p[i] > p[j]).count();
            let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
            sign * (0..n).map(|i| m[i][p[i]]).product::<f64>()
        })
        .sum()
}

fn dist(a: &[f64], b: &[f64], base: BaseDistance) -> f64 {
    match base {
        BaseDistance::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        BaseDistance::L2 => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
    }
}

fn oracle_dpp(pts: &[Vec<f64>], base: BaseDistance) -> f64 {
    if pts.len() == 1 {
        return 0.0;
    }
    let m: Vec<Vec<f64>> = pts.iter().map(|a| pts.iter().map(|b| 1.0 / (1.0 + dist(a, b, base))).collect()).collect();
    leibniz_det(&m).clamp(0.0, 1.0)
}

fn oracle_apd(pts: &[Vec<f64>], base: BaseDistance) -> f64 {
    let k = pts.len();
    if k == 1 {
        return 0.0;
    }
    let total: f64 = pts.iter().flat_map(|a| pts.iter().map(move |b| dist(a, b, base))).sum();
    total / (k * (k - 1)) as f64
}

/// Mean per-coordinate spread (max minus min) of the set.
fn oracle_coverage(pts: &[Vec<f64>]) -> f64 {
    let d = pts[0].len();
    (0..d)
        .map(|i| {
            let hi = pts.iter().map(|p| p[i]).fold(f64::MIN, f64::max);
            let lo = pts.iter().map(|p| p[i]).fold(f64::MAX, f64::min);
            hi - lo
        })
        .sum::<f64>()
        / d as f64
}

fn oracle_label_entropy(labels: &[usize], c: usize) -> f64 {
    let k = labels.len() as f64;
    (0..c)
        .map(|j| labels.iter().filter(|&&l| l == j).count() as f64 / k)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum::<f64>()
        / (c as f64).ln()
}

fn random_simplex(r: &mut impl Rng, c: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..c).map(|_| r.random_range(0.0..1.0f64).powi(3) + 1e-9).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn c4_metrics(_: &Env) -> Outcome {
    let close = |a: f64, b: f64, what: &str| ensure((a - b).abs() <= 1e-10, || format!("{what}: {a} vs oracle {b}"));
    let oracle_sets = 300u64;
    for seed in 0..oracle_sets {
        let mut r = rng::stream(seed, &[520]);
        let k = 1 + seed as usize % 6;
        let d = r.random_range(1..6);
        let pts: Vec<Vec<f64>> = (0..k).map(|_| unit_vec(&mut r, d)).collect();
        let x0 = unit_vec(&mut r, d);
        for base in [BaseDistance::L1, BaseDistance::L2] {
            close(dpp(&pts, base).unwrap(), oracle_dpp(&pts, base), "dpp")?;
            close(apd(&pts, base).unwrap(), oracle_apd(&pts, base), "apd")?;
        }
        close(coverage(&pts, &x0).unwrap(), oracle_coverage(&pts), "coverage")?;
        let c = r.random_range(2..7);
        let ys: Vec<Vec<f64>> = (0..k).map(|_| random_simplex(&mut r, c)).collect();
        let pc = (0..c).map(|j| ys.iter().map(|y| y[j]).fold(0.0, f64::max)).sum::<f64>() / c as f64;
        close(prediction_coverage(&ys).unwrap(), pc, "prediction coverage")?;
        let labels: Vec<usize> = (0..k).map(|_| r.random_range(0..c)).collect();
        let distinct = labels.iter().collect::<HashSet<_>>().len() as f64 / c as f64;
        ensure(distinct_labels(&labels, c).unwrap() == distinct, || "distinct labels".into())?;
        let h = label_entropy(&labels, c).unwrap();
        let want = oracle_label_entropy(&labels, c);
        ensure(h == want, || format!("label entropy {h} vs oracle {want}"))?;
    }
    let fuzz = 1000u64;
    for seed in 0..fuzz {
        let mut r = rng::stream(seed, &[521]);
        let (k, d, c) = (r.random_range(1..9), r.random_range(1..7), r.random_range(2..8));
        let pts: Vec<Vec<f64>> = (0..k).map(|_| unit_vec(&mut r, d)).collect();
        let x0 = unit_vec(&mut r, d);
        for base in [BaseDistance::L1, BaseDistance::L2] {
            let v = dpp(&pts, base).unwrap();
            ensure((0.0..=1.0).contains(&v), || format!("dpp {v} outside [0, 1]"))?;
        }
        let lo: Vec<f64> = (0..d).map(|i| pts.iter().map(|p| p[i]).chain([x0[i]]).fold(f64::MAX, f64::min)).collect();
        let hi: Vec<f64> = (0..d).map(|i| pts.iter().map(|p| p[i]).chain([x0[i]]).fold(f64::MIN, f64::max)).collect();
        let cov = coverage(&pts, &x0).unwrap();
        let cap = coverage_max(&lo, &hi).unwrap();
        ensure(cov >= -1e-12 && cov <= cap + 1e-12, || format!("coverage {cov} outside [0, {cap}]"))?;
        let ys: Vec<Vec<f64>> = (0..k).map(|_| random_simplex(&mut r, c)).collect();
        let pc = prediction_coverage(&ys).unwrap();
        ensure(pc >= 1.0 / c as f64 - 1e-12 && pc <= 1.0 + 1e-12, || format!("prediction coverage {pc}"))?;
        let labels: Vec<usize> = (0..k).map(|_| r.random_range(0..c)).collect();
        let h = label_entropy(&labels, c).unwrap();
        ensure((0.0..=1.0 + 1e-12).contains(&h), || format!("label entropy {h}"))?;
        let dl = distinct_labels(&labels, c).unwrap();
        ensure(dl > 0.0 && dl <= 1.0, || format!("distinct labels {dl}"))?;
    }
    Ok(format!("{oracle_sets} sets match brute-force oracles; ranges hold on {fuzz} fuzzed sets"))
}

// 5, 6. Search sweeps

fn c5_delta_trend(env: &Env) -> Outcome {
    let out = env.dir("c5");
    env.cli(&out, "sweep", &["--axis", "delta", "--values", "0.25,0.5,1,2,4"])?;
    let series = sweep_series(&out.join("sweep.csv"))?;
    let h: Vec<f64> = series["h_min"].iter().map(|p| p.1).collect();
    let dx: Vec<f64> = series["dx_at_h_min"].iter().map(|p| p.1).collect();
    ensure(h.len() >= 5, || format!("only {} grid values", h.len()))?;
    for (name, v, increasing) in [("min H", &h, false), ("d_x of the minimiser", &dx, true)] {
        let (n, worst) = inversions(v, increasing);
        ensure(n <= 1 && worst < 0.01, || format!("{name} {} has {n} inversions, largest {worst:.4}", fmt_series(v)))?;
    }
    Ok(format!("min H {} and minimiser d_x {}", fmt_series(&h), fmt_series(&dx)))
}

fn c6_lambda_d_trend(env: &Env) -> Outcome {
    let out = env.dir("c6");
    env.cli(
        &out,
        "sweep",
        &["--axis", "lambda_D", "--values", "0,0.5,1,2,4", "--method", "divclue-sim", "--metric", "dpp", "--space", "latent"],
    )?;
    let series = sweep_series(&out.join("sweep.csv"))?;
    let target = series.get("dpp_latent").ok_or("no dpp_latent rows")?;
    ensure(target.len() >= 4, || format!("only {} grid values", target.len()))?;
    let (l, v): (Vec<f64>, Vec<f64>) = target.iter().cloned().unzip();
    let rho = spearman(&l, &v);
    ensure(rho > 0.0, || format!("Spearman(dpp_latent, lambda_D) = {rho}"))?;
    let search_stats = ["h_", "dx_", "accepted"];
    let others: Vec<&String> = series
        .keys()
        .filter(|k| k.as_str() != "dpp_latent" && !search_stats.iter().any(|p| k.starts_with(p)))
        .collect();
    let rising: Vec<&str> = others
        .iter()
        .filter(|k| series[k.as_str()].windows(2).all(|w| w[1].1 >= w[0].1))
        .map(|k| k.as_str())
        .collect();
    ensure(rising.len() >= 2, || format!("only {rising:?} of {others:?} are non-decreasing"))?;
    Ok(format!(
        "Spearman {rho:.3} for dpp_latent {}; non-decreasing: {} of {} others ({})",
        fmt_series(&v),
        rising.len(),
        others.len(),
        rising.join(", ")
    ))
}

// 7. Descent versus start

fn c7_descent(env: &Env) -> Outcome {
    let inputs = env.uncertain_inputs(10);
    let mut gains = Vec::new();
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
        let set = delta_clue(x0, &env.bundle, &cfg, &env.ctx).map_err(|e| e.to_string())?;
        let c = &set.candidates[0];
        let start = c.start_cost.ok_or("no start cost recorded")?;
        ensure(c.cost <= start, || format!("seed {seed}: {start} -> {}", c.cost))?;
        gains.push(start - c.cost);
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    ensure(mean > 0.0, || format!("mean improvement {mean}"))?;
    Ok(format!("100/100 starts improve or hold, mean improvement {mean:.4}"))
}

// 8. Planted translation

fn c8_planted(env: &Env) -> Outcome {
    let b = &env.bundle;
    let m = b.dims().latent;
    let rows = env.partition.uncertain(env.group);
    let (xu, _) = env.data.gather(&rows);
    let nu = rows.len();
    let zu = b.encode_batch(&xu, nu).map_err(|e| e.to_string())?;
    let mut r = rng::stream(8, &[530]);
    let planted: Vec<f64> = (0..m).map(|_| r.random_range(-0.3..0.3)).collect();
    let shifted: Vec<f64> = zu.chunks(m).flat_map(|z| z.iter().zip(&planted).map(|(a, t)| a + t)).collect();
    let xc = b.decode_batch(&shifted, nu).map_err(|e| e.to_string())?;
    let cfg = MapperConfig {
        lambda_theta: 0.0,
        steps: 2000,
        ..Default::default()
    };
    let mapper = train_mapper(b, &xu, nu, &xc, nu, env.group, env.group, &cfg).map_err(|e| e.to_string())?;
    let err = mapper.theta.iter().zip(&planted).map(|(a, t)| (a - t).powi(2)).sum::<f64>().sqrt();
    ensure(err <= 1e-2, || format!("theta misses the planted translation by {err:.3e}"))?;
    Ok(format!("{m}-d translation over {nu} points recovered within {err:.2e}"))
}

// 9. Amortisation

fn scheme_row(rows: &[BTreeMap<String, String>], scheme: &str) -> Result<BTreeMap<String, String>, String> {
    rows.iter()
        .find(|r| r["scheme"] == scheme)
        .cloned()
        .ok_or_else(|| format!("no {scheme} row"))
}

fn c9_amortisation(env: &Env) -> Outcome {
    let a = env.dir("c9-a");
    let b = env.dir("c9-b");
    let schemes = ["--schemes", "glam1,dclue", "--inputs", "8", "--repetitions", "5"];
    env.cli(&a, "bench", &schemes)?;
    env.cli(&b, "bench", &[&schemes[..], &["--k", "20", "--iters", "60"]].concat())?;
    let timing = read_csv(&a.join("timing.csv"))?;
    let glam_ms = num(&scheme_row(&timing, "glam1")?, "median_ms_per_input")?;
    let dclue_ms = num(&scheme_row(&timing, "dclue")?, "median_ms_per_input")?;
    let ratio = glam_ms / dclue_ms;
    ensure(ratio <= 1.0 / 50.0, || format!("time ratio {ratio:.4} ({glam_ms:.4} ms vs {dclue_ms:.4} ms)"))?;
    let counts = |dir: &Path, scheme: &str| -> Result<Vec<f64>, String> {
        let row = scheme_row(&read_csv(&dir.join("evals.csv"))?, scheme)?;
        ["encode", "decode", "predict", "objective"].iter().map(|c| num(&row, c)).collect()
    };
    let (ga, gb) = (counts(&a, "glam1")?, counts(&b, "glam1")?);
    ensure(ga == gb && ga == [1.0, 1.0, 1.0, 0.0], || format!("glam1 evaluations {ga:?} and {gb:?}"))?;
    let (da, db) = (counts(&a, "dclue")?, counts(&b, "dclue")?);
    ensure(db[3] > da[3], || format!("dclue objective passes did not grow: {da:?} vs {db:?}"))?;
    Ok(format!(
        "ratio 1/{:.0} ({glam_ms:.4} vs {dclue_ms:.3} ms per input); glam1 uses 1 encode, 1 decode, 1 predict per input \
         at both search budgets, dclue {} then {} objective passes",
        1.0 / ratio,
        da[3],
        db[3]
    ))
}

// 10, 11. Mapping

fn c10_mapping(env: &Env) -> Outcome {
    let group = env.group.to_string();
    let cs0 = env.dir("c10-cesets0");
    let cs3 = env.dir("c10-cesets3");
    let pick = ["--split", "train", "--group", group.as_str(), "--uncertain-only", "--top", "1000", "--method", "dclue"];
    env.cli(&cs0, "explain", &[&pick[..], &["--lambda-x", "0"]].concat())?;
    env.cli(&cs3, "explain", &[&pick[..], &["--lambda-x", "0.03"]].concat())?;
    let out = env.dir("c10");
    env.cli(
        &out,
        "glam",
        &[
            "--group",
            &group,
            "--lambda-x",
            "0.03",
            "--glam2-cesets",
            s(&cs0.join("cesets.json")),
            "--glam3-cesets",
            s(&cs3.join("cesets.json")),
        ],
    )?;
    let summary = read_csv(&out.join("summary.csv"))?;
    let cost = |scheme: &str| -> Result<f64, String> { num(&scheme_row(&summary, scheme)?, "mean_cost") };
    let hit = |scheme: &str| -> Result<f64, String> { num(&scheme_row(&summary, scheme)?, "in_target") };
    let baselines = ["dbm-input", "dbm-latent", "nn-input", "nn-latent"];
    let (worst_name, worst) = baselines
        .iter()
        .map(|b| cost(b).map(|c| (*b, c)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(("", f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let glam1_hit = hit("glam1")?;
    ensure(glam1_hit >= 0.8, || format!("glam1 maps {:.1}% into class {group}", 100.0 * glam1_hit))?;
    let mut parts = Vec::new();
    for g in ["glam1", "glam2", "glam3"] {
        let c = cost(g)?;
        ensure(c <= worst, || format!("{g} mean cost {c:.4} above worst baseline {worst_name} {worst:.4}"))?;
        parts.push(format!("{g} cost {c:.3} in-target {:.0}%", 100.0 * hit(g)?));
    }
    Ok(format!(
        "class {group}: glam1 maps {:.1}% into target; {}; worst baseline {worst_name} {worst:.3}",
        100.0 * glam1_hit,
        parts.join(", ")
    ))
}

fn c11_lambda_theta(env: &Env) -> Outcome {
    let out = env.dir("c11");
    let group = env.group.to_string();
    env.cli(&out, "sweep", &["--axis", "lambda_theta", "--values", "0,0.01,0.1,1", "--mapper-group", &group])?;
    let series = sweep_series(&out.join("sweep.csv"))?;
    let (l, dx): (Vec<f64>, Vec<f64>) = series["dx_mean"].iter().cloned().unzip();
    let h: Vec<f64> = series["h_mean"].iter().map(|p| p.1).collect();
    ensure(l.len() >= 4, || format!("only {} grid values", l.len()))?;
    let (rd, rh) = (spearman(&l, &dx), spearman(&l, &h));
    ensure(rd < 0.0 && rh > 0.0, || {
        format!("Spearman with mean d_x {rd:.3} (want < 0), with mean H {rh:.3} (want > 0)")
    })?;
    Ok(format!("Spearman with mean d_x {rd:.3} {}, with mean H {rh:.3} {}", fmt_series(&dx), fmt_series(&h)))
}

// 12. Determinism

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Manifest with wall-clock content removed: stage times and the hashes of
/// files flagged as timing measurements.
fn stable_manifest(p: &Path) -> Result<serde_json::Value, String> {
    let m: RunManifest = serde_json::from_slice(&fs::read(p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let mut v = serde_json::to_value(&m).map_err(|e| e.to_string())?;
    v.as_object_mut().unwrap().remove("wall_times");
    for rec in v["outputs"].as_array_mut().unwrap() {
        if rec.get("timing").and_then(|t| t.as_bool()) == Some(true) {
            let o = rec.as_object_mut().unwrap();
            o.remove("sha256");
            o.remove("bytes");
        }
    }
    Ok(v)
}

/// Compares two runs' output trees; returns the number of files compared
/// byte for byte.
fn same_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let (fa, fb) = (files(a), files(b));
    ensure(fa == fb, || format!("{} and {} hold different files", a.display(), b.display()))?;
    let manifest: RunManifest = serde_json::from_slice(&fs::read(a.join(MANIFEST_FILE)).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let timing: HashSet<&str> = manifest.outputs.iter().filter(|r| r.timing).map(|r| r.path.as_str()).collect();
    let mut compared = 0;
    for f in &fa {
        let name = f.to_str().unwrap();
        if name == MANIFEST_FILE {
            ensure(stable_manifest(&a.join(f))? == stable_manifest(&b.join(f))?, || {
                format!("{} manifests differ", a.display())
            })?;
        } else if !timing.contains(name) {
            ensure(fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap(), || {
                format!("{name} differs between {} and {}", a.display(), b.display())
            })?;
        }
        compared += 1;
    }
    for r in &manifest.outputs {
        ensure(fa.iter().any(|f| f.to_str() == Some(r.path.as_str())), || format!("manifest lists missing {}", r.path))?;
    }
    Ok(compared)
}

fn c12_determinism(env: &Env) -> Outcome {
    let mut report = Vec::new();
    let mut pair = |name: &str, run: &dyn Fn(&Path) -> Result<(), String>| -> Result<(), String> {
        let a = env.dir(&format!("c12-{name}-a"));
        let b = env.dir(&format!("c12-{name}-b"));
        run(&a)?;
        run(&b)?;
        let n = same_outputs(&a, &b)?;
        report.push(format!("{name} ({n} files)"));
        Ok(())
    };
    pair("gen-data", &|o| clueset(&["--seed", SEED, "--out", s(o), "gen-data", "--kind", "blobs", "--n", "400"]))?;
    pair("train", &|o| {
        clueset(&["--seed", SEED, "--out", s(o), "train", "--data", s(&env.data_dir), "--vae-epochs", "15", "--ensemble-epochs", "10"])
    })?;
    pair("explain", &|o| env.cli(o, "explain", &["--method", "divclue-seq", "--k", "4", "--lambda-d", "0.5", "--trace"]))?;
    pair("sweep", &|o| env.cli(o, "sweep", &["--axis", "n_i", "--values", "0,2", "--top", "4", "--k", "4", "--lambda-d", "0.5"]))?;
    let group = env.group.to_string();
    pair("glam", &|o| env.cli(o, "glam", &["--group", &group, "--variant", "glam1,dbm-latent,nn-input", "--steps", "300"]))?;
    pair("bench", &|o| env.cli(o, "bench", &["--repetitions", "2", "--inputs", "3", "--set", "mapper.steps=200"]))?;
    Ok(format!("byte-identical reruns: {}", report.join(", ")))
}


type Criterion = (u32, &'static str, fn(&Env) -> Outcome);

const CRITERIA: [Criterion; 12] = [
    (1, "gradients match finite differences", c1_gradients),
    (2, "search variants collapse bitwise", c2_collapse),
    (3, "radius constraint and idempotent projection", c3_constraint),
    (4, "diversity metrics match oracles and ranges", c4_metrics),
    (5, "delta trades entropy for distance", c5_delta_trend),
    (6, "lambda_D raises diversity", c6_lambda_d_trend),
    (7, "descent never ends above its start", c7_descent),
    (8, "mapper recovers a planted translation", c8_planted),
    (9, "mapping is amortised", c9_amortisation),
    (10, "mapped points land in target at bounded cost", c10_mapping),
    (11, "lambda_theta trades distance for entropy", c11_lambda_theta),
    (12, "every command reruns byte-identically", c12_determinism),
];

fn main() {
    let start = Instant::now();
    let work = fresh(&Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"));
    std::panic::set_hook(Box::new(|_| {}));
    let env = catch_unwind(|| Env::build(&work)).unwrap_or_else(|_| Err("setup panicked".into()));
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        let t = Instant::now();
        let outcome = match &env {
            Ok(env) => catch_unwind(AssertUnwindSafe(|| check(env))).unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            }),
            Err(e) => Err(format!("setup failed: {e}")),
        };
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        CRITERIA.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
