//! Bundle directory layout: `bundle.json` plus one little-endian `f64` blob
//! per parameter tensor under `tensors/`, in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, Ensemble, ModelBundle, Recon, Thresholds, TrainingReport, Vae};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{read_f64_blob, to_json, write_atomic, write_f64_blob};
use crate::nn::{Activation, Dense, Mlp};

const FORMAT: &str = "clueset-bundle/1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    dims: Dims,
    architecture: Architecture,
    thresholds: Thresholds,
    report: Option<TrainingReport>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Architecture {
    encoder: Vec<usize>,
    decoder: Vec<usize>,
    member: Vec<usize>,
    vae_activation: Activation,
    member_activation: Activation,
    recon: Recon,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

fn named<'a>(prefix: &str, mlp: &'a Mlp) -> Vec<(String, &'a Tensor)> {
    mlp.layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| [(format!("{prefix}.{i}.w"), &l.w), (format!("{prefix}.{i}.b"), &l.b)])
        .collect()
}

fn hidden_activation(mlp: &Mlp) -> Activation {
    mlp.layers.first().map_or(Activation::Identity, |l| l.act)
}

impl ModelBundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tdir = dir.join("tensors");
        fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
        let mut all = named("encoder", &self.vae.encoder);
        all.extend(named("decoder", &self.vae.decoder));
        for (k, m) in self.ensemble.members.iter().enumerate() {
            all.extend(named(&format!("member{k}"), m));
        }
        let mut tensors = Vec::with_capacity(all.len());
        for (name, t) in all {
            let file = format!("tensors/{name}.bin");
            write_f64_blob(&dir.join(&file), t.data())?;
            tensors.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                file,
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            dims: self.dims(),
            architecture: Architecture {
                encoder: self.vae.encoder.sizes(),
                decoder: self.vae.decoder.sizes(),
                member: self.ensemble.members[0].sizes(),
                vae_activation: hidden_activation(&self.vae.encoder),
                member_activation: hidden_activation(&self.ensemble.members[0]),
                recon: self.vae.recon,
            },
            thresholds: self.thresholds,
            report: self.report.clone(),
            tensors,
        };
        write_atomic(&dir.join("bundle.json"), &to_json(&manifest)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("bundle.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        let corrupt = |detail: String| Error::Corrupt {
            path: path.clone(),
            detail,
        };
        if m.format != FORMAT {
            return Err(corrupt(format!("unknown format {:?}", m.format)));
        }
        let mut blobs = m.tensors.iter();
        let mut next = |expect_shape: [usize; 2], expect_name: String| -> Result<Tensor> {
            let entry = blobs
                .next()
                .ok_or_else(|| corrupt(format!("missing tensor {expect_name}")))?;
            if entry.name != expect_name {
                return Err(corrupt(format!("expected tensor {expect_name}, found {}", entry.name)));
            }
            let want: Vec<usize> = if expect_shape[0] == 0 {
                vec![expect_shape[1]]
            } else {
                expect_shape.to_vec()
            };
            if entry.shape != want {
                return Err(corrupt(format!("tensor {} has shape {:?}, expected {want:?}", entry.name, entry.shape)));
            }
            let data = read_f64_blob(&dir.join(&entry.file))?;
            Tensor::new(want, data).map_err(|e| corrupt(e.to_string()))
        };
        let mut build = |prefix: &str, sizes: &[usize], act: Activation| -> Result<Mlp> {
            if sizes.len() < 2 {
                return Err(corrupt(format!("{prefix} needs at least two layer sizes")));
            }
            let mut layers = Vec::new();
            for (i, win) in sizes.windows(2).enumerate() {
                let w = next([win[0], win[1]], format!("{prefix}.{i}.w"))?;
                let b = next([0, win[1]], format!("{prefix}.{i}.b"))?;
                let act = if i + 2 == sizes.len() { Activation::Identity } else { act };
                layers.push(Dense { w, b, act });
            }
            Ok(Mlp { layers })
        };
        let a = &m.architecture;
        let encoder = build("encoder", &a.encoder, a.vae_activation)?;
        let decoder = build("decoder", &a.decoder, a.vae_activation)?;
        let members = (0..m.dims.members)
            .map(|k| build(&format!("member{k}"), &a.member, a.member_activation))
            .collect::<Result<Vec<_>>>()?;
        let vae = Vae {
            encoder,
            decoder,
            recon: a.recon,
        };
        let mut bundle = ModelBundle::new(vae, Ensemble { members }, m.thresholds)?;
        bundle.report = m.report;
        if bundle.dims() != m.dims {
            return Err(corrupt(format!("dims {:?} do not match the stored tensors", m.dims)));
        }
        Ok(bundle)
    }
}
