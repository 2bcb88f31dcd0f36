//! Vector-quantized autoencoder over pixel (and optionally coordinate)
//! observations with an exponential-moving-average codebook.
//!
//! Each observation is encoded to one pooled `D`-vector and snapped to its
//! nearest codebook row. The decoder sees only the code; the encoder is
//! trained through the straight-through estimator plus a commitment term,
//! and codebook rows track the running mean of their assigned encodings.

use rand::Rng;
use skillgrid_nn::ops::mse;
use skillgrid_nn::{Adam, AdamConfig, Checkpoint, LayerSpec, Network, Param, Real, Tensor};

use crate::cluster::kmeans_pp;
use crate::config::VqConfig;
use crate::error::{Error, Result};

const LAPLACE_EPS: f64 = 1e-5;

/// exp of the natural-log entropy of the empirical usage distribution.
pub fn perplexity(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Usage("perplexity of all-zero counts".into()));
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum();
    Ok(h.exp())
}

/// Nearest row of `table` (`· × d`) by squared Euclidean distance; ties go
/// to the smallest index.
pub fn quantize<T: Real>(z: &[T], table: &[T], d: usize) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (j, row) in table.chunks_exact(d).enumerate() {
        let dist: T = z.iter().zip(row).map(|(&a, &b)| (a - b) * (a - b)).sum();
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

pub fn usage_counts(assignments: &[usize], k: usize) -> Vec<u64> {
    let mut c = vec![0u64; k];
    assignments.iter().for_each(|&a| c[a] += 1);
    c
}

/// Mean over rows of `log softmax(−‖z − e_j‖² / T)` at the assigned code,
/// plus `log K`: a soft estimate of the reverse mutual-information bound.
pub fn mi_diagnostic(z: &[f32], table: &[f32], d: usize, temperature: f64) -> Result<f64> {
    if temperature <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    if z.is_empty() {
        return Err(Error::Usage("empty embedding set".into()));
    }
    let k = table.len() / d;
    let mut total = 0.0;
    for row in z.chunks_exact(d) {
        let logits: Vec<f64> = table
            .chunks_exact(d)
            .map(|e| -row.iter().zip(e).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum::<f64>() / temperature)
            .collect();
        let best = quantize(row, table, d).0;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += logits[best] - lse;
    }
    Ok((total / (z.len() / d) as f64 + (k as f64).ln()).min((k as f64).ln()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub k: usize,
    pub d: usize,
    pub embeddings: Vec<f32>,
    pub cluster_size: Vec<f32>,
    pub ema_sum: Vec<f32>,
    /// Consecutive updates in which each code received no assignment.
    pub idle: Vec<u64>,
    pub decay: f64,
}

impl Codebook {
    /// Rows taken as given; EMA statistics start at one pseudo-count per row.
    pub fn from_rows(rows: Vec<f32>, k: usize, d: usize, decay: f64) -> Result<Self> {
        if k < 2 || rows.len() != k * d {
            return Err(Error::Config(format!("codebook needs k ≥ 2 rows of dim {d}")));
        }
        Ok(Self { k, d, ema_sum: rows.clone(), embeddings: rows, cluster_size: vec![1.0; k], idle: vec![0; k], decay })
    }

    pub fn row(&self, j: usize) -> &[f32] {
        &self.embeddings[j * self.d..(j + 1) * self.d]
    }

    pub fn quantize(&self, z: &[f32]) -> (usize, f32) {
        quantize(z, &self.embeddings, self.d)
    }

    /// One EMA step from a batch of encodings `z` (`B × D`) and their codes:
    /// `N ← γN + (1−γ)n`, `S ← γS + (1−γ)Σz`, `e = S / N̂` with Laplace-smoothed
    /// `N̂`. Returns the batch usage counts.
    pub fn ema_update(&mut self, z: &[f32], assignments: &[usize]) -> Vec<u64> {
        let (k, d, g) = (self.k, self.d, self.decay);
        let counts = usage_counts(assignments, k);
        let mut sums = vec![0f64; k * d];
        for (row, &a) in z.chunks_exact(d).zip(assignments) {
            for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(row) {
                *s += f64::from(v);
            }
        }
        for j in 0..k {
            self.cluster_size[j] = (g * f64::from(self.cluster_size[j]) + (1.0 - g) * counts[j] as f64) as f32;
            for i in j * d..(j + 1) * d {
                self.ema_sum[i] = (g * f64::from(self.ema_sum[i]) + (1.0 - g) * sums[i]) as f32;
            }
        }
        let n: f64 = self.cluster_size.iter().map(|&c| f64::from(c)).sum();
        for j in 0..k {
            let smoothed = (f64::from(self.cluster_size[j]) + LAPLACE_EPS) / (n + k as f64 * LAPLACE_EPS) * n;
            for i in j * d..(j + 1) * d {
                self.embeddings[i] = (f64::from(self.ema_sum[i]) / smoothed) as f32;
            }
            self.idle[j] = if counts[j] == 0 { self.idle[j] + 1 } else { 0 };
        }
        counts
    }

    /// Moves every code idle for at least `after` updates onto a random
    /// encoding from `z`, resetting its statistics. Returns the reseeded codes.
    pub fn reseed_dead(&mut self, z: &[f32], after: u64, rng: &mut impl Rng) -> Vec<usize> {
        let d = self.d;
        let rows = z.len() / d;
        let mut reseeded = Vec::new();
        for j in 0..self.k {
            if after == 0 || self.idle[j] < after || rows == 0 {
                continue;
            }
            let src = &z[rng.random_range(0..rows) * d..][..d];
            self.embeddings[j * d..(j + 1) * d].copy_from_slice(src);
            self.ema_sum[j * d..(j + 1) * d].copy_from_slice(src);
            self.cluster_size[j] = 1.0;
            self.idle[j] = 0;
            reseeded.push(j);
        }
        reseeded
    }
}

/// Layer sizes shared by encoder and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct VqArch {
    pub obs_size: usize,
    pub hiddens: usize,
    pub residual_hiddens: usize,
    pub residual_layers: usize,
    pub embedding_dim: usize,
    pub coord_hiddens: usize,
}

impl VqArch {
    pub fn from_config(cfg: &VqConfig, obs_size: usize) -> Self {
        Self {
            obs_size,
            hiddens: cfg.num_hiddens,
            residual_hiddens: cfg.num_residual_hiddens,
            residual_layers: cfg.num_residual_layers,
            embedding_dim: cfg.embedding_dim,
            coord_hiddens: cfg.coord_hiddens,
        }
    }

    fn downsamples(&self) -> Result<usize> {
        let s = self.obs_size;
        if s < 8 || !s.is_power_of_two() || self.hiddens < 2 || self.hiddens % 2 != 0 {
            return Err(Error::Config("obs_size must be a power of two ≥ 8 and num_hiddens even".into()));
        }
        Ok((s / 4).trailing_zeros() as usize)
    }

    /// Stride-2 4×4 convolutions down to 4×4, a 3×3 convolution, the residual
    /// stack, then global average pooling and a projection to `D`.
    pub fn encoder(&self) -> Result<Vec<LayerSpec>> {
        let downs = self.downsamples()?;
        let h = self.hiddens;
        let mut specs = Vec::new();
        let mut c = 3;
        for i in 0..downs {
            let out = if i == 0 && downs > 1 { h / 2 } else { h };
            specs.push(LayerSpec::Conv2d { in_channels: c, out_channels: out, kernel: 4, stride: 2, padding: 1 });
            specs.push(LayerSpec::Relu);
            c = out;
        }
        specs.push(LayerSpec::Conv2d { in_channels: h, out_channels: h, kernel: 3, stride: 1, padding: 1 });
        for _ in 0..self.residual_layers {
            specs.push(LayerSpec::Residual { channels: h, hidden: self.residual_hiddens });
        }
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::GlobalAvgPool);
        specs.push(LayerSpec::Dense { inputs: h, outputs: self.embedding_dim });
        Ok(specs)
    }

    /// Mirror of the encoder ending in a linear 3-channel image.
    pub fn decoder(&self) -> Result<Vec<LayerSpec>> {
        let downs = self.downsamples()?;
        let h = self.hiddens;
        let mut specs = vec![
            LayerSpec::Dense { inputs: self.embedding_dim, outputs: h * 16 },
            LayerSpec::Reshape(vec![h, 4, 4]),
            LayerSpec::Conv2d { in_channels: h, out_channels: h, kernel: 3, stride: 1, padding: 1 },
        ];
        for _ in 0..self.residual_layers {
            specs.push(LayerSpec::Residual { channels: h, hidden: self.residual_hiddens });
        }
        specs.push(LayerSpec::Relu);
        let mut c = h;
        for i in 0..downs {
            let last = i + 1 == downs;
            let out = if last { 3 } else if i + 2 == downs { h / 2 } else { h };
            specs.push(LayerSpec::ConvTranspose2d { in_channels: c, out_channels: out, kernel: 4, stride: 2, padding: 1 });
            if !last {
                specs.push(LayerSpec::Relu);
            }
            c = out;
        }
        Ok(specs)
    }

    pub fn coord_encoder(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense { inputs: 2, outputs: self.coord_hiddens },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: self.coord_hiddens, outputs: self.embedding_dim },
        ]
    }

    pub fn coord_decoder(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense { inputs: self.embedding_dim, outputs: self.coord_hiddens },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: self.coord_hiddens, outputs: 2 },
        ]
    }
}

/// The four networks of a (joint) VQ model.
#[derive(Debug, Clone)]
pub struct VqNets<T: Real = f32> {
    pub encoder: Network<T>,
    pub decoder: Network<T>,
    pub coord_encoder: Option<Network<T>>,
    pub coord_decoder: Option<Network<T>>,
}

/// Everything one loss evaluation produced. Gradients are left in the
/// networks' parameter `grad` fields.
#[derive(Debug, Clone)]
pub struct VqPass<T: Real> {
    pub loss: T,
    pub recon: T,
    pub coord_recon: T,
    pub commitment: T,
    pub assignments: Vec<usize>,
    /// Encoder output `[B, D]`.
    pub z: Tensor<T>,
    /// `∂loss/∂(decoder input)` from the reconstruction terms.
    pub grad_quantized: Tensor<T>,
    /// Gradient delivered to the encoder output.
    pub grad_z: Tensor<T>,
}

impl<T: Real> VqNets<T> {
    pub fn build(arch: &VqArch, coords: bool, rng: &mut impl Rng) -> Result<Self> {
        let s = arch.obs_size;
        let d = arch.embedding_dim;
        let encoder = Network::<f32>::new("vq.encoder", &[3, s, s], arch.encoder()?, rng)?.cast();
        let decoder = Network::<f32>::new("vq.decoder", &[d], arch.decoder()?, rng)?.cast();
        let (coord_encoder, coord_decoder) = if coords {
            (
                Some(Network::<f32>::new("vq.coord_encoder", &[2], arch.coord_encoder(), rng)?.cast()),
                Some(Network::<f32>::new("vq.coord_decoder", &[d], arch.coord_decoder(), rng)?.cast()),
            )
        } else {
            (None, None)
        };
        Ok(Self { encoder, decoder, coord_encoder, coord_decoder })
    }

    pub fn cast<U: Real>(&self) -> VqNets<U> {
        VqNets {
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            coord_encoder: self.coord_encoder.as_ref().map(Network::cast),
            coord_decoder: self.coord_decoder.as_ref().map(Network::cast),
        }
    }

    pub fn networks(&self) -> Vec<&Network<T>> {
        let mut v = vec![&self.encoder, &self.decoder];
        v.extend(self.coord_encoder.iter());
        v.extend(self.coord_decoder.iter());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        for net in [&mut self.coord_encoder, &mut self.coord_decoder].into_iter().flatten() {
            v.extend(net.params_mut());
        }
        v
    }

    fn check_coords(&self, coords: Option<&Tensor<T>>) -> Result<()> {
        match (&self.coord_encoder, coords) {
            (Some(_), None) => Err(Error::Usage("joint model requires coordinates".into())),
            _ => Ok(()),
        }
    }

    /// Pre-quantization encoding: pixel embedding plus coordinate embedding
    /// for joint models. Coordinates passed to a pixel-only model are ignored.
    pub fn encode(&self, pixels: &Tensor<T>, coords: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        self.check_coords(coords)?;
        let mut z = self.encoder.infer(pixels)?;
        if let (Some(ce), Some(c)) = (&self.coord_encoder, coords) {
            z.add_assign(&ce.infer(c)?)?;
        }
        Ok(z)
    }

    /// Evaluates `recon + λ·coord_recon + β·mean‖z − sg(e)‖²` against the
    /// given codebook rows and accumulates straight-through gradients into
    /// the (first zeroed) network parameters.
    pub fn forward_backward(
        &mut self,
        pixels: &Tensor<T>,
        coords: Option<&Tensor<T>>,
        codebook: &[T],
        beta: f64,
        coord_weight: f64,
    ) -> Result<VqPass<T>> {
        self.check_coords(coords)?;
        for net in [Some(&mut self.encoder), Some(&mut self.decoder), self.coord_encoder.as_mut(), self.coord_decoder.as_mut()]
            .into_iter()
            .flatten()
        {
            net.zero_grad();
        }
        let mut z = self.encoder.forward(pixels)?;
        let d = z.item_len();
        if codebook.is_empty() || codebook.len() % d != 0 {
            return Err(Error::Config(format!("codebook length {} is not a multiple of D = {d}", codebook.len())));
        }
        if let (Some(ce), Some(c)) = (self.coord_encoder.as_mut(), coords) {
            z.add_assign(&ce.forward(c)?)?;
        }
        let b = z.batch();
        let mut assignments = Vec::with_capacity(b);
        let mut q = Vec::with_capacity(b * d);
        for i in 0..b {
            let k = quantize(z.row(i), codebook, d).0;
            assignments.push(k);
            q.extend_from_slice(&codebook[k * d..(k + 1) * d]);
        }
        let q = Tensor::new(vec![b, d], q)?;
        let recon_out = self.decoder.forward(&q)?;
        let (recon, g_pix) = mse(&recon_out, pixels)?;
        let mut grad_q = self.decoder.backward(&g_pix)?;
        let mut coord_recon = T::zero();
        let lambda = T::lit(coord_weight);
        if let (Some(cd), Some(c)) = (self.coord_decoder.as_mut(), coords) {
            let out = cd.forward(&q)?;
            let (l, g) = mse(&out, c)?;
            coord_recon = l;
            grad_q.add_assign(&cd.backward(&g.map(|v| v * lambda))?)?;
        }
        let scale = T::lit(beta) / T::lit((b * d) as f64);
        let two = T::lit(2.0);
        let mut commitment = T::zero();
        let mut grad_z = grad_q.clone();
        for ((gz, &zv), &qv) in grad_z.data_mut().iter_mut().zip(z.data()).zip(q.data()) {
            let diff = zv - qv;
            commitment += diff * diff;
            *gz += two * scale * diff;
        }
        let commitment = commitment * scale;
        self.encoder.backward_params(&grad_z)?;
        if let Some(ce) = self.coord_encoder.as_mut() {
            ce.backward_params(&grad_z)?;
        }
        Ok(VqPass {
            loss: recon + lambda * coord_recon + commitment,
            recon,
            coord_recon,
            commitment,
            assignments,
            z,
            grad_quantized: grad_q,
            grad_z,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VqLossReport {
    pub recon: f64,
    pub coord_recon: Option<f64>,
    pub commitment: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone)]
pub struct VqModel {
    pub arch: VqArch,
    pub nets: VqNets<f32>,
    pub codebook: Codebook,
    pub beta: f64,
    pub coord_weight: f64,
    pub dead_code_steps: u64,
    adam: Adam<f32>,
    steps: u64,
    initialized: bool,
}

impl VqModel {
    /// Untrained model. The codebook is placeholder zeros until the first
    /// training step seeds it by k-means++ over that batch's encodings.
    pub fn new(cfg: &VqConfig, obs_size: usize, coords: bool, rng: &mut impl Rng) -> Result<Self> {
        let arch = VqArch::from_config(cfg, obs_size);
        let nets = VqNets::build(&arch, coords, rng)?;
        let (k, d) = (cfg.num_embeddings, cfg.embedding_dim);
        Ok(Self {
            codebook: Codebook::from_rows(vec![0.0; k * d], k, d, cfg.decay)?,
            arch,
            nets,
            beta: cfg.beta,
            coord_weight: cfg.coord_weight,
            dead_code_steps: cfg.dead_code_steps as u64,
            adam: Adam::new(AdamConfig::new(cfg.learning_rate)),
            steps: 0,
            initialized: false,
        })
    }

    pub fn is_joint(&self) -> bool {
        self.nets.coord_encoder.is_some()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn encode(&self, pixels: &Tensor<f32>, coords: Option<&Tensor<f32>>) -> Result<Tensor<f32>> {
        self.nets.encode(pixels, coords)
    }

    /// Code index for every row of a batch.
    pub fn assign(&self, pixels: &Tensor<f32>, coords: Option<&Tensor<f32>>) -> Result<Vec<usize>> {
        let z = self.encode(pixels, coords)?;
        Ok((0..z.batch()).map(|i| self.codebook.quantize(z.row(i)).0).collect())
    }

    pub fn train_step(&mut self, pixels: &Tensor<f32>, coords: Option<&Tensor<f32>>, rng: &mut impl Rng) -> Result<VqLossReport> {
        if pixels.batch() == 0 {
            return Err(Error::Usage("empty batch".into()));
        }
        if !self.initialized {
            let z = self.encode(pixels, coords)?;
            if z.batch() < self.codebook.k {
                return Err(Error::Usage("first batch must hold at least K observations".into()));
            }
            let rows = kmeans_pp(z.data(), self.codebook.d, self.codebook.k, rng);
            self.codebook = Codebook::from_rows(rows, self.codebook.k, self.codebook.d, self.codebook.decay)?;
            self.initialized = true;
        }
        let pass = self.nets.forward_backward(pixels, coords, &self.codebook.embeddings, self.beta, self.coord_weight)?;
        if !pass.loss.is_finite() {
            return Err(Error::Training(format!("non-finite VQ loss at step {}", self.steps)));
        }
        self.adam.step(&mut self.nets.params_mut()).map_err(|e| Error::Training(e.to_string()))?;
        let counts = self.codebook.ema_update(pass.z.data(), &pass.assignments);
        self.codebook.reseed_dead(pass.z.data(), self.dead_code_steps, rng);
        self.steps += 1;
        Ok(VqLossReport {
            recon: f64::from(pass.recon),
            coord_recon: self.is_joint().then_some(f64::from(pass.coord_recon)),
            commitment: f64::from(pass.commitment),
            perplexity: perplexity(&counts)?,
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        for net in self.nets.networks() {
            ck.push_network(net)?;
        }
        let (k, d) = (self.codebook.k, self.codebook.d);
        ck.push("codebook.embeddings", vec![k, d], self.codebook.embeddings.clone())?;
        ck.push("codebook.cluster_size", vec![k], self.codebook.cluster_size.clone())?;
        ck.push("codebook.ema_sum", vec![k, d], self.codebook.ema_sum.clone())?;
        Ok(ck)
    }

    /// Restores parameters and codebook into a model built from the same configuration.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.load_network(&mut self.nets.encoder)?;
        ck.load_network(&mut self.nets.decoder)?;
        for net in [&mut self.nets.coord_encoder, &mut self.nets.coord_decoder].into_iter().flatten() {
            ck.load_network(net)?;
        }
        let (k, d) = (self.codebook.k, self.codebook.d);
        let get = |name: &str, shape: Vec<usize>| -> Result<Vec<f32>> {
            let t = ck.get(name)?;
            if t.shape != shape {
                return Err(Error::Malformed(format!("{name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            Ok(t.data.clone())
        };
        self.codebook.embeddings = get("codebook.embeddings", vec![k, d])?;
        self.codebook.cluster_size = get("codebook.cluster_size", vec![k])?;
        self.codebook.ema_sum = get("codebook.ema_sum", vec![k, d])?;
        self.codebook.idle = vec![0; k];
        self.initialized = true;
        Ok(())
    }
}
