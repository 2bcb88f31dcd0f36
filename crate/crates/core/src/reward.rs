//! Indicator skill rewards over a frozen encoder and a table of `K` skill
//! embeddings: `r(s, k) = 1` iff `k` is the latent the encoder assigns to `s`.

use rand::Rng;
use skillgrid_nn::Tensor;

use crate::cluster::CentroidSet;
use crate::contrastive::{embed_normalized, ContrastiveModel};
use crate::error::{Error, Result};
use crate::trajectory::{hwc_to_chw, Dataset};
use crate::vq::{quantize, VqModel, VqNets};
use crate::world::{Observation, Pose};

#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    /// Nearest table row by squared Euclidean distance.
    SquaredDistance,
    /// Largest `z · W · e_j`, `W` row-major `d × d`.
    Bilinear { w: Vec<f32> },
}

#[derive(Debug, Clone)]
enum FrozenEncoder {
    Vq(VqNets<f32>),
    Contrastive(skillgrid_nn::Network<f32>),
}

#[derive(Debug, Clone)]
pub struct SkillSpace {
    k: usize,
    d: usize,
    table: Vec<f32>,
    metric: Metric,
    encoder: FrozenEncoder,
    obs_size: usize,
}

impl SkillSpace {
    pub fn from_vq(model: &VqModel) -> Self {
        Self {
            k: model.codebook.k,
            d: model.codebook.d,
            table: model.codebook.embeddings.clone(),
            metric: Metric::SquaredDistance,
            encoder: FrozenEncoder::Vq(model.nets.clone()),
            obs_size: model.arch.obs_size,
        }
    }

    /// Uses the momentum encoder, which also produced the clustered embeddings.
    pub fn from_contrastive(model: &ContrastiveModel, centroids: &CentroidSet) -> Result<Self> {
        if centroids.d != model.dim() {
            return Err(Error::Config("centroid dimension differs from embedding dimension".into()));
        }
        Ok(Self {
            k: centroids.k,
            d: centroids.d,
            table: centroids.centroids.clone(),
            metric: Metric::Bilinear { w: model.w.value.clone() },
            encoder: FrozenEncoder::Contrastive(model.momentum.clone()),
            obs_size: model.momentum.input_shape()[1],
        })
    }

    pub fn num_skills(&self) -> usize {
        self.k
    }

    pub fn embed_dim(&self) -> usize {
        self.d
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn table(&self) -> &[f32] {
        &self.table
    }

    pub fn skill_row(&self, k: usize) -> &[f32] {
        &self.table[k * self.d..(k + 1) * self.d]
    }

    pub fn requires_coords(&self) -> bool {
        matches!(&self.encoder, FrozenEncoder::Vq(n) if n.coord_encoder.is_some())
    }

    /// Uniform skill prior.
    pub fn sample_skill(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(0..self.k)
    }

    /// Frozen encoder output for a `[B, 3, H, W]` batch.
    pub fn embed(&self, pixels: &Tensor<f32>, coords: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        match &self.encoder {
            FrozenEncoder::Vq(nets) => nets.encode(pixels, coords),
            FrozenEncoder::Contrastive(net) => embed_normalized(net, pixels),
        }
    }

    /// Latent index of an embedding; ties go to the smallest index.
    pub fn assign_embedding(&self, z: &[f32]) -> usize {
        match &self.metric {
            Metric::SquaredDistance => quantize(z, &self.table, self.d).0,
            Metric::Bilinear { w } => {
                let d = self.d;
                let zw: Vec<f32> = (0..d).map(|j| (0..d).map(|i| z[i] * w[i * d + j]).sum()).collect();
                let mut best = (0, f32::NEG_INFINITY);
                for (j, e) in self.table.chunks_exact(d).enumerate() {
                    let s: f32 = zw.iter().zip(e).map(|(a, b)| a * b).sum();
                    if s > best.1 {
                        best = (j, s);
                    }
                }
                best.0
            }
        }
    }

    /// Embedding of one observation given as HWC pixels.
    pub fn embed_one(&self, pixels: &[f32], coords: Option<&[f32]>) -> Result<Vec<f32>> {
        let s = self.obs_size;
        if pixels.len() != s * s * 3 {
            return Err(Error::Usage(format!("expected {s}×{s}×3 pixels, got {} values", pixels.len())));
        }
        if self.requires_coords() && coords.is_none() {
            return Err(Error::Usage("skill space requires coordinates".into()));
        }
        let mut chw = Vec::with_capacity(pixels.len());
        hwc_to_chw(pixels, s, s, 3, &mut chw);
        let x = Tensor::new(vec![1, 3, s, s], chw)?;
        let c = coords.map(|c| Tensor::new(vec![1, c.len()], c.to_vec())).transpose()?;
        Ok(self.embed(&x, c.as_ref())?.into_data())
    }

    pub fn assign_observation(&self, obs: &Observation) -> Result<usize> {
        let z = self.embed_one(&obs.pixels, obs.coords.as_ref().map(|c| &c[..]))?;
        Ok(self.assign_embedding(&z))
    }

    pub fn reward(&self, obs: &Observation, k: usize) -> Result<u8> {
        Ok(u8::from(self.assign_observation(obs)? == k))
    }

    /// Frozen embeddings of every stored observation, `len × d` row-major.
    pub fn embed_dataset(&self, ds: &Dataset, chunk: usize) -> Result<Vec<f32>> {
        if self.requires_coords() && ds.meta.coord_dim == 0 {
            return Err(Error::Usage("skill space requires coordinates, dataset has none".into()));
        }
        let mut out = Vec::with_capacity(ds.len() * self.d);
        let idx: Vec<usize> = (0..ds.len()).collect();
        for part in idx.chunks(chunk.max(1)) {
            let c = ds.coord_batch(part);
            out.extend_from_slice(self.embed(&ds.pixel_batch(part), c.as_ref())?.data());
        }
        Ok(out)
    }

    pub fn assign_dataset(&self, ds: &Dataset, chunk: usize) -> Result<Vec<usize>> {
        Ok(self.embed_dataset(ds, chunk)?.chunks_exact(self.d).map(|z| self.assign_embedding(z)).collect())
    }

    /// `(pose, r(s, k))` for every stored observation.
    pub fn reward_field(&self, ds: &Dataset, k: usize) -> Result<Vec<(Pose, u8)>> {
        Ok(reward_field(&self.assign_dataset(ds, 256)?, ds.poses(), k))
    }
}

/// Pairs precomputed assignments with poses as indicator rewards for skill `k`.
pub fn reward_field(assignments: &[usize], poses: impl Iterator<Item = Pose>, k: usize) -> Vec<(Pose, u8)> {
    poses.zip(assignments).map(|(p, &a)| (p, u8::from(a == k))).collect()
}
