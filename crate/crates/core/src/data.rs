//! Synthetic datasets and their on-disk form.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{maybe_inf, read_f64_blob, write_atomic, write_f64_blob};
use crate::models::ModelBundle;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Blobs {
        classes: usize,
        dim: usize,
        n: usize,
        spread: f64,
    },
    Minidigits {
        n: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: GeneratorSpec,
    pub seed: u64,
    pub dim: usize,
    pub classes: usize,
    /// Row-major `[n, dim]`, values in `[0, 1]`.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn generate(spec: &GeneratorSpec, seed: u64) -> Result<Self> {
        match *spec {
            GeneratorSpec::Blobs {
                classes,
                dim,
                n,
                spread,
            } => gen_blobs(classes, dim, n, spread, seed),
            GeneratorSpec::Minidigits { n } => gen_minidigits(n, seed),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Rows and labels of `idx`, concatenated.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(self.input(i));
        }
        (x, idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_f64_blob(&dir.join("inputs.bin"), &self.inputs)?;
        let manifest = DatasetManifest {
            spec: self.spec.clone(),
            seed: self.seed,
            n: self.len(),
            dim: self.dim,
            classes: self.classes,
            inputs: "inputs.bin".into(),
            labels: self.labels.clone(),
            splits: self.splits.clone(),
        };
        write_atomic(&dir.join("dataset.json"), &crate::io::to_json(&manifest)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("dataset.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        let blob = dir.join(&m.inputs);
        let inputs = read_f64_blob(&blob)?;
        if inputs.len() != m.n * m.dim || m.labels.len() != m.n || m.splits.len() != m.n {
            return Err(Error::Corrupt {
                path: blob,
                detail: format!("expected {} x {} values", m.n, m.dim),
            });
        }
        Ok(Self {
            spec: m.spec,
            seed: m.seed,
            dim: m.dim,
            classes: m.classes,
            inputs,
            labels: m.labels,
            splits: m.splits,
        })
    }

    /// One row per point: `id, split, label, x0 .. x{d-1}`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string(), "split".into(), "label".into()];
        header.extend((0..self.dim).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                i.to_string(),
                match self.splits[i] {
                    Split::Train => "train".into(),
                    Split::Test => "test".into(),
                },
                self.labels[i].to_string(),
            ];
            rec.extend(self.input(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    spec: GeneratorSpec,
    seed: u64,
    n: usize,
    dim: usize,
    classes: usize,
    inputs: String,
    labels: Vec<usize>,
    splits: Vec<Split>,
}

/// Labels cycle through the classes; within each class every fifth point is
/// held out.
fn round_robin(n: usize, classes: usize) -> (Vec<usize>, Vec<Split>) {
    let labels = (0..n).map(|i| i % classes).collect();
    let splits = (0..n)
        .map(|i| if (i / classes) % 5 == 4 { Split::Test } else { Split::Train })
        .collect();
    (labels, splits)
}

/// Gaussian clusters around class means drawn in `[0.15, 0.85]^dim`, clipped
/// to the unit cube.
pub fn gen_blobs(classes: usize, dim: usize, n: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || dim < 2 {
        return Err(Error::InvalidConfig(format!(
            "blobs need at least 2 classes and 2 dimensions, got {classes} and {dim}"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidConfig(format!("blob spread must be finite and >= 0, got {spread}")));
    }
    if n < 5 * classes {
        return Err(Error::InvalidConfig(format!(
            "need at least {} points so every class has a training point",
            5 * classes
        )));
    }
    let mut r = rng::stream(seed, &[rng::DATA, 0]);
    let means: Vec<f64> = (0..classes * dim).map(|_| r.random_range(0.15..0.85)).collect();
    let noise = Normal::new(0.0, spread).expect("finite spread");
    let (labels, splits) = round_robin(n, classes);
    let mut inputs = Vec::with_capacity(n * dim);
    for &y in &labels {
        for j in 0..dim {
            let v = means[y * dim + j] + noise.sample(&mut r);
            inputs.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(Dataset {
        spec: GeneratorSpec::Blobs {
            classes,
            dim,
            n,
            spread,
        },
        seed,
        dim,
        classes,
        inputs,
        labels,
        splits,
    })
}

const SIDE: usize = 8;

/// Seven-segment strokes on an 8x8 canvas: (row0, col0, row1, col1) inclusive.
const SEGMENTS: [(usize, usize, usize, usize); 7] = [
    (1, 2, 1, 5), // top
    (1, 5, 3, 5), // upper right
    (4, 5, 6, 5), // lower right
    (6, 2, 6, 5), // bottom
    (4, 2, 6, 2), // lower left
    (1, 2, 3, 2), // upper left
    (3, 2, 3, 5), // middle
];

/// Segment masks per digit, bit i meaning `SEGMENTS[i]` is lit.
const GLYPHS: [u8; 10] = [
    0b0111111, // 0
    0b0000110, // 1
    0b1011011, // 2
    0b1001111, // 3
    0b1100110, // 4
    0b1101101, // 5
    0b1111101, // 6
    0b0000111, // 7
    0b1111111, // 8
    0b1101111, // 9
];

fn draw_segment(img: &mut [f64], seg: usize, dr: isize, dc: isize, intensity: f64) {
    let (r0, c0, r1, c1) = SEGMENTS[seg];
    for r in r0..=r1 {
        for c in c0..=c1 {
            let rr = r as isize + dr;
            let cc = c as isize + dc;
            if (0..SIDE as isize).contains(&rr) && (0..SIDE as isize).contains(&cc) {
                let px = &mut img[rr as usize * SIDE + cc as usize];
                *px = px.max(intensity);
            }
        }
    }
}

/// 8x8 digit-like glyphs: seven-segment strokes with shifts, per-stroke
/// intensity, stroke dropout, ghost strokes and pixel noise. Digits that
/// differ by one stroke (0/8, 1/7, 3/9, 5/6, 6/8, 8/9) become ambiguous
/// when a stroke drops out or a ghost stroke appears.
pub fn gen_minidigits(n: usize, seed: u64) -> Result<Dataset> {
    const CLASSES: usize = 10;
    if n < 5 * CLASSES {
        return Err(Error::InvalidConfig(format!("minidigits needs at least {} points", 5 * CLASSES)));
    }
    let mut r = rng::stream(seed, &[rng::DATA, 1]);
    let noise = Normal::new(0.0, 0.05).expect("constant sigma");
    let (labels, splits) = round_robin(n, CLASSES);
    let dim = SIDE * SIDE;
    let mut inputs = Vec::with_capacity(n * dim);
    for &y in &labels {
        let mut img = vec![0.0; dim];
        let dr = r.random_range(-1..=1i64) as isize;
        let dc = r.random_range(-1..=1i64) as isize;
        for seg in 0..7 {
            let lit = GLYPHS[y] & (1 << seg) != 0;
            let u: f64 = r.random();
            let intensity = r.random_range(0.7..1.0);
            if lit && u >= 0.08 {
                draw_segment(&mut img, seg, dr, dc, intensity);
            } else if !lit && u < 0.06 {
                draw_segment(&mut img, seg, dr, dc, intensity * 0.6);
            }
        }
        for px in &mut img {
            *px = (*px + noise.sample(&mut r)).clamp(0.0, 1.0);
        }
        inputs.extend(img);
    }
    Ok(Dataset {
        spec: GeneratorSpec::Minidigits { n },
        seed,
        dim,
        classes: CLASSES,
        inputs,
        labels,
        splits,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Certainty {
    Certain,
    Uncertain,
    Unassigned,
}

/// Group (true class) and certainty flag for a subset of dataset points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub tau_low: f64,
    #[serde(with = "maybe_inf")]
    pub tau_high: f64,
    pub classes: usize,
    /// Dataset row of each partitioned point.
    pub points: Vec<usize>,
    pub groups: Vec<usize>,
    pub entropies: Vec<f64>,
    pub flags: Vec<Certainty>,
}

impl GroupPartition {
    fn select(&self, group: usize, flag: Certainty) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.groups[i] == group && self.flags[i] == flag)
            .map(|i| self.points[i])
            .collect()
    }

    /// Dataset rows of the certain points of `group`.
    pub fn certain(&self, group: usize) -> Vec<usize> {
        self.select(group, Certainty::Certain)
    }

    pub fn uncertain(&self, group: usize) -> Vec<usize> {
        self.select(group, Certainty::Uncertain)
    }

    pub fn count(&self, flag: Certainty) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }

    /// Classes without a single certain point.
    pub fn classes_missing_certain(&self) -> Vec<usize> {
        (0..self.classes).filter(|&c| self.certain(c).is_empty()).collect()
    }
}

/// Certain iff `H <= tau_low`, uncertain iff `H > tau_high`; points in
/// between stay unassigned.
pub fn partition_by_certainty(
    data: &Dataset,
    split: Split,
    bundle: &ModelBundle,
    tau_low: f64,
    tau_high: f64,
) -> Result<GroupPartition> {
    if tau_low.is_nan() || tau_high.is_nan() || tau_low > tau_high {
        return Err(Error::InvalidConfig(format!(
            "need tau_low <= tau_high, got {tau_low} and {tau_high}"
        )));
    }
    let points = data.indices(split);
    let (x, groups) = data.gather(&points);
    let entropies = if points.is_empty() {
        Vec::new()
    } else {
        bundle.entropies(&x, points.len())?
    };
    let flags = entropies
        .iter()
        .map(|&h| {
            if h <= tau_low {
                Certainty::Certain
            } else if h > tau_high {
                Certainty::Uncertain
            } else {
                Certainty::Unassigned
            }
        })
        .collect();
    Ok(GroupPartition {
        tau_low,
        tau_high,
        classes: data.classes,
        points,
        groups,
        entropies,
        flags,
    })
}
