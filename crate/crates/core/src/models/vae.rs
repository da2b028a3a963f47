use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::optim::Adam;
use crate::autodiff::{kernels, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::rng;

/// Likelihood used for the reconstruction term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recon {
    Bernoulli,
    L2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vae {
    /// Outputs `[mean, log-variance]`, each of latent width.
    pub encoder: Mlp,
    /// Outputs logits; the decoded mean is their sigmoid.
    pub decoder: Mlp,
    pub recon: Recon,
}

impl Vae {
    pub fn init(input: usize, latent: usize, hidden: &[usize], recon: Recon, r: &mut impl Rng) -> Self {
        let mut enc = vec![input];
        enc.extend_from_slice(hidden);
        enc.push(2 * latent);
        let mut dec = vec![latent];
        dec.extend_from_slice(hidden);
        dec.push(input);
        Self {
            encoder: Mlp::init(&enc, Activation::Tanh, r),
            decoder: Mlp::init(&dec, Activation::Tanh, r),
            recon,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn encode_mean(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        let m = self.latent_dim();
        let h = self.encoder.forward_batch(x, rows)?;
        Ok(h.chunks(2 * m).flat_map(|r| r[..m].iter().copied()).collect())
    }

    pub fn decode(&self, z: &[f64], rows: usize) -> Result<Vec<f64>> {
        let mut out = self.decoder.forward_batch(z, rows)?;
        out.iter_mut().for_each(|v| *v = kernels::sigmoid(*v));
        Ok(out)
    }

    pub fn decode_node(&self, g: &mut Graph, z: NodeId) -> NodeId {
        let logits = self.decoder.build(g, z);
        g.sigmoid(logits)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeTrainConfig {
    pub latent: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub recon: Recon,
    /// Weight on the KL term; below 1 trades prior fit for reconstruction.
    pub kl_weight: f64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            latent: 8,
            hidden: vec![64, 64],
            epochs: 100,
            batch_size: 64,
            lr: 2e-3,
            recon: Recon::Bernoulli,
            kl_weight: 0.03,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeReport {
    /// Mean negative ELBO per training point, one entry per epoch.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    /// Mean l1 distance between training points and their reconstructions.
    pub mean_recon_l1: f64,
}

/// Fits a VAE to the rows of `x` by minimising the negative ELBO with Adam.
pub fn train_vae(x: &[f64], n: usize, dim: usize, cfg: &VaeTrainConfig, seed: u64) -> Result<(Vae, VaeReport)> {
    if n == 0 || x.len() != n * dim {
        return Err(Error::InvalidConfig(format!("VAE training set is empty or not {n} x {dim}")));
    }
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidConfig("VAE training inputs must lie in [0, 1]".into()));
    }
    if !(cfg.kl_weight > 0.0 && cfg.kl_weight.is_finite()) {
        return Err(Error::InvalidConfig(format!("kl_weight must be finite and > 0, got {}", cfg.kl_weight)));
    }
    if cfg.latent == 0 || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("latent width, batch size and epochs must be positive".into()));
    }
    let m = cfg.latent;
    let mut r = rng::stream(seed, &[rng::VAE]);
    let mut vae = Vae::init(dim, m, &cfg.hidden, cfg.recon, &mut r);

    let mut g = Graph::new();
    let xi = g.input("x");
    let eps = g.input("eps");
    let inv_b = g.input("inv_b");
    let (h, enc_p) = vae.encoder.build_trainable(&mut g, xi, "enc")?;
    let mu = g.slice(h, 0, m);
    let logvar = g.slice(h, m, m);
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let noise = g.mul(std, eps);
    let z = g.add(mu, noise);
    let (logits, dec_p) = vae.decoder.build_trainable(&mut g, z, "dec")?;
    let recon = match cfg.recon {
        Recon::Bernoulli => g.bce_with_logits(logits, xi),
        Recon::L2 => {
            let xh = g.sigmoid(logits);
            let diff = g.sub(xh, xi);
            g.sq_l2(diff)
        }
    };
    let one_plus = g.add_scalar(logvar, 1.0);
    let mu2 = g.mul(mu, mu);
    let var = g.exp(logvar);
    let t = g.sub(one_plus, mu2);
    let t = g.sub(t, var);
    let t = g.sum(t);
    let kl = g.scale(t, -0.5 * cfg.kl_weight);
    let total = g.add(recon, kl);
    let loss = g.mul(total, inv_b);

    let param_ids: Vec<NodeId> = enc_p.iter().chain(&dec_p).flat_map(|p| [p.w, p.b]).collect();
    let sizes: Vec<usize> = vae
        .encoder
        .tensors()
        .into_iter()
        .chain(vae.decoder.tensors())
        .map(Tensor::len)
        .collect();
    let mut adam = Adam::new(cfg.lr, &sizes);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut total_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut xb = Vec::with_capacity(b * dim);
            for &i in batch {
                xb.extend_from_slice(&x[i * dim..(i + 1) * dim]);
            }
            let eb: Vec<f64> = (0..b * m).map(|_| r.sample(StandardNormal)).collect();
            g.set_input("x", Tensor::matrix(b, dim, xb)?)?;
            g.set_input("eps", Tensor::matrix(b, m, eb)?)?;
            g.set_input("inv_b", Tensor::scalar(1.0 / b as f64))?;
            let diverged = |loss: f64| Error::Divergence {
                stage: "vae",
                epoch,
                loss,
            };
            g.forward().map_err(|e| if e.is_numerical() { diverged(f64::NAN) } else { e })?;
            let lv = g.value(loss)?.item();
            if !lv.is_finite() {
                return Err(diverged(lv));
            }
            let grads = g.backward(loss)?;
            let gv: Vec<Vec<f64>> = param_ids
                .iter()
                .zip(&sizes)
                .map(|(&id, &len)| grads.data_or_zeros(id, len))
                .collect();
            let mut params: Vec<&mut Tensor> = vae
                .encoder
                .tensors_mut()
                .into_iter()
                .chain(vae.decoder.tensors_mut())
                .collect();
            adam.step(&mut params, &gv);
            vae.encoder.bind(&mut g, "enc")?;
            vae.decoder.bind(&mut g, "dec")?;
            total_loss += lv * b as f64;
        }
        curve.push(total_loss / n as f64);
    }
    let recon_x = vae.decode(&vae.encode_mean(x, n)?, n)?;
    let mean_recon_l1 = recon_x
        .chunks(dim)
        .zip(x.chunks(dim))
        .map(|(a, b)| kernels::l1_dist(a, b))
        .sum::<f64>()
        / n as f64;
    let report = VaeReport {
        final_loss: *curve.last().expect("at least one epoch"),
        loss_curve: curve,
        mean_recon_l1,
    };
    Ok((vae, report))
}
