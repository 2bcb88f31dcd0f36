//! Contrastive discovery: InfoNCE with a learned bilinear similarity between
//! main-encoder anchors and momentum-encoder positives taken from later in
//! the same trajectory.

use rand::Rng;
use skillgrid_nn::ops::{bilinear_backward, bilinear_logits, cross_entropy_diagonal, l2_normalize_backward, l2_normalize_rows};
use skillgrid_nn::{Adam, AdamConfig, Checkpoint, LayerSpec, Network, Param, Real, Tensor};

use crate::cluster::CentroidSet;
use crate::config::ContrastiveConfig;
use crate::error::{Error, Result};

/// `mean_i −log softmax_j(Z_i W Zp_j)[i]`.
pub fn infonce_loss<T: Real>(z: &Tensor<T>, zp: &Tensor<T>, w: &[T]) -> Result<T> {
    if z.batch() < 2 {
        return Err(Error::Usage("InfoNCE needs at least two pairs".into()));
    }
    let logits = bilinear_logits(z, w, zp)?;
    Ok(cross_entropy_diagonal(&logits)?.0)
}

/// Mean softmax probability of the diagonal (correct) pair.
pub fn diagonal_probability(z: &Tensor<f32>, zp: &Tensor<f32>, w: &[f32]) -> Result<f64> {
    let s = bilinear_logits(z, w, zp)?;
    let n = s.batch();
    let mut total = 0.0;
    for i in 0..n {
        let row: Vec<f64> = s.row(i).iter().map(|&v| f64::from(v)).collect();
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
        total += (row[i] - max).exp() / denom;
    }
    Ok(total / n as f64)
}

/// Convolutional trunk pooled to `hiddens` channels, then a two-layer head to `dim`.
pub fn encoder_specs(obs_size: usize, hiddens: usize, dim: usize) -> Result<Vec<LayerSpec>> {
    if obs_size < 8 || !obs_size.is_power_of_two() {
        return Err(Error::Config("obs_size must be a power of two ≥ 8".into()));
    }
    let downs = (obs_size / 4).trailing_zeros();
    let mut specs = Vec::new();
    let mut c = 3;
    for _ in 0..downs {
        specs.push(LayerSpec::Conv2d { in_channels: c, out_channels: hiddens, kernel: 4, stride: 2, padding: 1 });
        specs.push(LayerSpec::Relu);
        c = hiddens;
    }
    specs.extend([
        LayerSpec::Conv2d { in_channels: hiddens, out_channels: hiddens, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense { inputs: hiddens, outputs: hiddens },
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: hiddens, outputs: dim },
    ]);
    Ok(specs)
}

/// Embeds and L2-normalizes a batch without recording gradients.
pub fn embed_normalized<T: Real>(net: &Network<T>, pixels: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(l2_normalize_rows(&net.infer(pixels)?)?.0)
}

/// InfoNCE of `normalize(encoder(anchors))` against already-embedded
/// positives. Zeroes, then fills, the gradients of `encoder` and `w`.
pub fn infonce_forward_backward<T: Real>(
    encoder: &mut Network<T>,
    w: &mut Param<T>,
    anchors: &Tensor<T>,
    positives: &Tensor<T>,
) -> Result<T> {
    if anchors.batch() < 2 {
        return Err(Error::Usage("InfoNCE needs at least two pairs".into()));
    }
    encoder.zero_grad();
    w.zero_grad();
    let raw = encoder.forward(anchors)?;
    let (z, norms) = l2_normalize_rows(&raw)?;
    let logits = bilinear_logits(&z, &w.value, positives)?;
    let (loss, g) = cross_entropy_diagonal(&logits)?;
    let (dz, dw, _) = bilinear_backward(&z, &w.value, positives, &g)?;
    w.grad.copy_from_slice(&dw);
    encoder.backward_params(&l2_normalize_backward(&z, &norms, &dz)?)?;
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct ContrastiveModel {
    pub encoder: Network<f32>,
    pub momentum: Network<f32>,
    /// `d × d` bilinear similarity, row-major.
    pub w: Param<f32>,
    pub tau: f64,
    pub soft_update: u64,
    adam: Adam<f32>,
    steps: u64,
}

impl ContrastiveModel {
    /// Momentum encoder starts as an exact copy; `W` starts as the identity.
    pub fn new(cfg: &ContrastiveConfig, obs_size: usize, rng: &mut impl Rng) -> Result<Self> {
        let d = cfg.embedding_dim;
        let specs = encoder_specs(obs_size, cfg.num_hiddens, d)?;
        let encoder = Network::new("contrastive.encoder", &[3, obs_size, obs_size], specs.clone(), rng)?;
        let mut momentum = Network::new("contrastive.momentum", &[3, obs_size, obs_size], specs, rng)?;
        momentum.copy_from(&encoder)?;
        let mut eye = vec![0f32; d * d];
        (0..d).for_each(|i| eye[i * d + i] = 1.0);
        if cfg.soft_update == 0 {
            return Err(Error::Config("soft_update must be positive".into()));
        }
        Ok(Self {
            encoder,
            momentum,
            w: Param::from_values("contrastive.w", vec![d, d], eye)?,
            tau: cfg.tau,
            soft_update: cfg.soft_update,
            adam: Adam::new(AdamConfig::new(cfg.learning_rate)),
            steps: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.w.shape[0]
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One InfoNCE step on paired batches; the momentum encoder moves toward
    /// the main encoder after every `soft_update`-th step. Returns the loss.
    pub fn train_step(&mut self, anchors: &Tensor<f32>, positives: &Tensor<f32>) -> Result<f64> {
        if anchors.batch() != positives.batch() {
            return Err(Error::Usage("anchor and positive batches differ in size".into()));
        }
        let zp = embed_normalized(&self.momentum, positives)?;
        let loss = infonce_forward_backward(&mut self.encoder, &mut self.w, anchors, &zp)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite InfoNCE loss at step {}", self.steps)));
        }
        let mut params = self.encoder.params_mut();
        params.push(&mut self.w);
        self.adam.step(&mut params).map_err(|e| Error::Training(e.to_string()))?;
        self.steps += 1;
        if self.steps % self.soft_update == 0 {
            self.momentum.ema_from(&self.encoder, self.tau)?;
        }
        Ok(f64::from(loss))
    }

    /// Normalized momentum-encoder embeddings; these feed clustering and rewards.
    pub fn embed(&self, pixels: &Tensor<f32>) -> Result<Tensor<f32>> {
        embed_normalized(&self.momentum, pixels)
    }

    pub fn to_checkpoint(&self, centroids: Option<&CentroidSet>) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.push_network(&self.encoder)?;
        ck.push_network(&self.momentum)?;
        ck.push(self.w.name.clone(), self.w.shape.clone(), self.w.value.clone())?;
        if let Some(c) = centroids {
            ck.push("centroids", vec![c.k, c.d], c.centroids.clone())?;
            ck.push("centroids.inertia", vec![1], vec![c.inertia as f32])?;
        }
        Ok(ck)
    }

    /// Restores networks and `W`; returns the stored centroids if present.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<Option<CentroidSet>> {
        ck.load_network(&mut self.encoder)?;
        ck.load_network(&mut self.momentum)?;
        let w = ck.get(&self.w.name)?;
        if w.shape != self.w.shape {
            return Err(Error::Malformed("bilinear matrix shape differs".into()));
        }
        self.w.value.copy_from_slice(&w.data);
        let Ok(c) = ck.get("centroids") else { return Ok(None) };
        if c.shape.len() != 2 || c.shape[1] != self.dim() {
            return Err(Error::Malformed("centroid dimension differs from embedding".into()));
        }
        let inertia = ck.get("centroids.inertia").map(|t| f64::from(t.data[0])).unwrap_or(f64::NAN);
        Ok(Some(CentroidSet { k: c.shape[0], d: c.shape[1], centroids: c.data.clone(), inertia, seed: 0, trace: Vec::new() }))
    }
}
