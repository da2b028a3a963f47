use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::autodiff::{kernels, Graph, Tensor};
use crate::data::{Dataset, GroupPartition};
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::rng;

use super::InitScheme;

/// Rejection budget for S3 and S4 before giving up.
const MAX_REJECTIONS: usize = 1_000_000;
/// Inner ascent of S5: step length as a fraction of r, and step cap.
const S5_STEP_FRACTION: f64 = 1.0 / 32.0;
const S5_MAX_STEPS: usize = 128;

/// Data the path-based schemes need.
#[derive(Clone, Debug, Default)]
pub struct InitContext {
    /// Encoded certain training points, per class.
    pub class_latents: Vec<Vec<Vec<f64>>>,
}

impl InitContext {
    pub fn from_partition(bundle: &ModelBundle, data: &Dataset, partition: &GroupPartition) -> Result<Self> {
        let class_latents = (0..partition.classes)
            .map(|c| {
                let rows = partition.certain(c);
                if rows.is_empty() {
                    return Ok(Vec::new());
                }
                let (x, _) = data.gather(&rows);
                let z = bundle.encode_batch(&x, rows.len())?;
                Ok(z.chunks(bundle.dims().latent).map(<[f64]>::to_vec).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self { class_latents })
    }
}

fn unit_direction(m: usize, r: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| r.sample(StandardNormal)).collect();
        let n = kernels::l2_norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn along(z0: &[f64], dir: &[f64], radius: f64) -> Vec<f64> {
    z0.iter().zip(dir).map(|(a, d)| a + radius * d).collect()
}

/// Path slot of start `i`: class `i mod c` and fraction `j / m` with
/// `j = i / c + 1` and `m = ceil(k / c)`.
fn path_slot(i: usize, k: usize, classes: usize) -> (usize, f64) {
    let m = k.div_ceil(classes).max(1);
    let j = i / classes + 1;
    (i % classes, j as f64 / m as f64)
}

/// Start point `i` of `k` around `z0`. Randomness comes from a stream keyed
/// by `(seed, i)` so starts do not depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn init_point(
    scheme: InitScheme,
    z0: &[f64],
    r: f64,
    i: usize,
    k: usize,
    seed: u64,
    ctx: &InitContext,
    bundle: &ModelBundle,
) -> Result<Vec<f64>> {
    if r == 0.0 {
        return Ok(z0.to_vec());
    }
    let m = z0.len();
    let mut rng = rng::stream(seed, &[rng::INIT, i as u64]);
    match scheme {
        InitScheme::S1 => {
            let radius = rng.random_range(0.0..r);
            let dir = unit_direction(m, &mut rng);
            Ok(along(z0, &dir, radius))
        }
        InitScheme::S3 => {
            let normal = Normal::new(0.0, r / 2.0).expect("finite r");
            let radius = (0..MAX_REJECTIONS)
                .map(|_| normal.sample(&mut rng).abs())
                .find(|&v| v <= r)
                .ok_or_else(|| Error::InvalidConfig("S3 radius rejection budget exhausted".into()))?;
            let dir = unit_direction(m, &mut rng);
            Ok(along(z0, &dir, radius))
        }
        InitScheme::S4 => {
            for _ in 0..MAX_REJECTIONS {
                let v: Vec<f64> = (0..m).map(|_| rng.random_range(-r..=r)).collect();
                if kernels::l2_norm(&v) <= r {
                    return Ok(z0.iter().zip(&v).map(|(a, b)| a + b).collect());
                }
            }
            Err(Error::InvalidConfig(format!(
                "S4 found no point inside the r-ball after {MAX_REJECTIONS} draws in {m} dimensions"
            )))
        }
        InitScheme::S2 => {
            let classes = ctx.class_latents.len();
            if classes == 0 {
                return Err(Error::InvalidConfig("S2 needs certain training latents".into()));
            }
            let missing: Vec<usize> = (0..classes).filter(|&c| ctx.class_latents[c].is_empty()).collect();
            if !missing.is_empty() {
                return Err(Error::MissingCertainClass(missing));
            }
            let (class, frac) = path_slot(i, k, classes);
            let target = ctx.class_latents[class]
                .iter()
                .min_by(|a, b| kernels::sq_l2_dist(a, z0).total_cmp(&kernels::sq_l2_dist(b, z0)))
                .expect("non-empty class");
            let diff: Vec<f64> = target.iter().zip(z0).map(|(t, a)| t - a).collect();
            let n = kernels::l2_norm(&diff);
            if n == 0.0 {
                return Ok(z0.to_vec());
            }
            let dir: Vec<f64> = diff.iter().map(|d| d / n).collect();
            Ok(along(z0, &dir, r * frac))
        }
        InitScheme::S5 => {
            let (class, frac) = path_slot(i, k, bundle.dims().classes);
            let path = ascent_path(bundle, z0, class, r)?;
            Ok(point_at_fraction(&path, frac))
        }
    }
}

/// Normalised gradient ascent on `p(class | decode(z))` from `z0`, stopped
/// on reaching radius `r` (the last step is cut back onto the sphere).
fn ascent_path(bundle: &ModelBundle, z0: &[f64], class: usize, r: f64) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let zi = g.input("z");
    let x = bundle.decode_node(&mut g, zi);
    let probs = bundle.predict_node(&mut g, x);
    let p = g.slice(probs, class, 1);
    let p = g.sum(p);
    let step = r * S5_STEP_FRACTION;
    let mut path = vec![z0.to_vec()];
    let mut z = z0.to_vec();
    for _ in 0..S5_MAX_STEPS {
        g.set_input("z", Tensor::vector(z.clone()))?;
        g.forward()?;
        let grad = g.backward(p)?.data_or_zeros(zi, z.len());
        let n = kernels::l2_norm(&grad);
        if n == 0.0 {
            break;
        }
        let mut next: Vec<f64> = z.iter().zip(&grad).map(|(a, gr)| a + step * gr / n).collect();
        let done = kernels::l2_dist(&next, z0) >= r;
        if done {
            next = super::project_to_ball(&next, z0, r);
        }
        path.push(next.clone());
        z = next;
        if done {
            break;
        }
    }
    Ok(path)
}

/// Point at fraction `t` of the polyline's arc length.
fn point_at_fraction(path: &[Vec<f64>], t: f64) -> Vec<f64> {
    let seg: Vec<f64> = path.windows(2).map(|w| kernels::l2_dist(&w[0], &w[1])).collect();
    let total: f64 = seg.iter().sum();
    if total == 0.0 {
        return path[0].clone();
    }
    let mut remaining = t.clamp(0.0, 1.0) * total;
    for (s, w) in seg.iter().zip(path.windows(2)) {
        if remaining <= *s && *s > 0.0 {
            let a = remaining / s;
            return w[0].iter().zip(&w[1]).map(|(p, q)| p + a * (q - p)).collect();
        }
        remaining -= s;
    }
    path.last().expect("non-empty path").clone()
}
