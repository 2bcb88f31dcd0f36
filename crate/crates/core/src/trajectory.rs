//! Random-policy exploration data, its binary file format, and samplers.
//!
//! File layout (all integers little-endian): magic `SKLD`, version `u32`,
//! 32-byte environment hash, episode count `u32`, seed `u64`, map id
//! (`u32` length + UTF-8), then per episode: step count `u32`, pixel dims
//! `H, W, C` and coordinate dim (`u32` each), `f32` pixels for every
//! observation (`H·W·C` each, row-major HWC), `f32` coordinates, one byte
//! per action, and an `f32` triple `(x, y, heading)` per observation.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use skillgrid_nn::Tensor;

use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::world::{Action, Env, Heading, Pose, TileMap};

pub const MAGIC: &[u8; 4] = b"SKLD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub pixels: Vec<f32>,
    pub coords: Vec<f32>,
    pub actions: Vec<u8>,
    pub poses: Vec<Pose>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub map_id: String,
    pub seed: u64,
    pub env_hash: [u8; 32],
    /// Pixel dims `(H, W, C)`.
    pub obs_dims: (usize, usize, usize),
    /// 2 when observations carry coordinates, else 0.
    pub coord_dim: usize,
}

/// One stored observation.
#[derive(Debug, Clone, Copy)]
pub struct ObsRef<'a> {
    pub pixels: &'a [f32],
    pub coords: Option<&'a [f32]>,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayedPair {
    pub episode: usize,
    pub anchor: usize,
    pub delay: usize,
}

impl DelayedPair {
    pub fn positive(&self) -> usize {
        self.anchor + self.delay
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    episodes: Vec<Episode>,
    /// Global index of each episode's first observation, plus the total.
    offsets: Vec<usize>,
}

/// SHA-256 of the canonical environment configuration and the map it builds.
pub fn env_hash(cfg: &EnvConfig, map: &TileMap) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(toml::to_string(cfg).expect("env config serializes").as_bytes());
    h.update(map.to_text().as_bytes());
    h.finalize().into()
}

impl Dataset {
    pub fn new(meta: DatasetMeta, episodes: Vec<Episode>) -> Result<Self> {
        let (h, w, c) = meta.obs_dims;
        let obs_len = h * w * c;
        for (i, e) in episodes.iter().enumerate() {
            let n = e.poses.len();
            if n == 0
                || e.actions.len() + 1 != n
                || e.pixels.len() != n * obs_len
                || e.coords.len() != n * meta.coord_dim
            {
                return Err(Error::Malformed(format!("episode {i} has inconsistent lengths")));
            }
        }
        let mut offsets = Vec::with_capacity(episodes.len() + 1);
        let mut total = 0;
        for e in &episodes {
            offsets.push(total);
            total += e.len();
        }
        offsets.push(total);
        Ok(Self { meta, episodes, offsets })
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    /// Total number of observations.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obs_len(&self) -> usize {
        let (h, w, c) = self.meta.obs_dims;
        h * w * c
    }

    /// `(episode, step)` of a global observation index.
    pub fn locate(&self, index: usize) -> (usize, usize) {
        let ep = self.offsets.partition_point(|&o| o <= index) - 1;
        (ep, index - self.offsets[ep])
    }

    pub fn global_index(&self, episode: usize, step: usize) -> usize {
        self.offsets[episode] + step
    }

    pub fn get(&self, index: usize) -> ObsRef<'_> {
        let (ep, t) = self.locate(index);
        self.at(ep, t)
    }

    pub fn at(&self, episode: usize, step: usize) -> ObsRef<'_> {
        let e = &self.episodes[episode];
        let n = self.obs_len();
        let cd = self.meta.coord_dim;
        ObsRef {
            pixels: &e.pixels[step * n..(step + 1) * n],
            coords: (cd > 0).then(|| &e.coords[step * cd..(step + 1) * cd]),
            pose: e.poses[step],
        }
    }

    pub fn poses(&self) -> impl Iterator<Item = Pose> + '_ {
        self.episodes.iter().flat_map(|e| e.poses.iter().copied())
    }

    /// `n` observation indices drawn uniformly with replacement.
    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if n == 0 {
            return Err(Error::Usage("batch size must be positive".into()));
        }
        if self.is_empty() {
            return Err(Error::Usage("cannot sample from an empty dataset".into()));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.len())).collect())
    }

    /// Uniform episode (among those with at least one step) and anchor, then
    /// `k = round(N(k_mu, k_sigma))` clamped to `[1, remaining steps]`.
    pub fn sample_delayed_pair(&self, k_mu: f64, k_sigma: f64, rng: &mut impl Rng) -> Result<DelayedPair> {
        let usable: Vec<usize> = (0..self.episodes.len()).filter(|&i| self.episodes[i].len() > 1).collect();
        if usable.is_empty() {
            return Err(Error::Usage("no episode has a step to pair".into()));
        }
        let normal = Normal::new(k_mu, k_sigma).map_err(|e| Error::Config(format!("delay distribution: {e}")))?;
        let episode = usable[rng.random_range(0..usable.len())];
        let anchor = rng.random_range(0..self.episodes[episode].len() - 1);
        let remaining = self.episodes[episode].len() - 1 - anchor;
        let k = normal.sample(rng).round().clamp(1.0, remaining as f64) as usize;
        Ok(DelayedPair { episode, anchor, delay: k })
    }

    /// Pixels of the given observations as a `[B, C, H, W]` tensor.
    pub fn pixel_batch(&self, indices: &[usize]) -> Tensor<f32> {
        let (h, w, c) = self.meta.obs_dims;
        let mut data = Vec::with_capacity(indices.len() * h * w * c);
        for &i in indices {
            hwc_to_chw(self.get(i).pixels, h, w, c, &mut data);
        }
        Tensor::new(vec![indices.len(), c, h, w], data).expect("batch dims")
    }

    /// Coordinates as a `[B, 2]` tensor; `None` when the dataset has none.
    pub fn coord_batch(&self, indices: &[usize]) -> Option<Tensor<f32>> {
        let cd = self.meta.coord_dim;
        if cd == 0 {
            return None;
        }
        let data = indices.iter().flat_map(|&i| self.get(i).coords.unwrap_or(&[]).iter().copied()).collect();
        Some(Tensor::new(vec![indices.len(), cd], data).expect("coord dims"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.len() * (self.obs_len() + 5) * 4);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        out.extend_from_slice(&self.meta.env_hash);
        put_u32(&mut out, self.episodes.len() as u32);
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        put_u32(&mut out, self.meta.map_id.len() as u32);
        out.extend_from_slice(self.meta.map_id.as_bytes());
        let (h, w, c) = self.meta.obs_dims;
        for e in &self.episodes {
            put_u32(&mut out, e.actions.len() as u32);
            for d in [h, w, c, self.meta.coord_dim] {
                put_u32(&mut out, d as u32);
            }
            e.pixels.iter().chain(&e.coords).for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            out.extend_from_slice(&e.actions);
            for p in &e.poses {
                for v in [p.x, p.y, f32::from(p.heading.index())] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch { found: version, expected: VERSION });
        }
        let env_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let count = r.u32()? as usize;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let len = r.u32()? as usize;
        let map_id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Malformed("map id is not UTF-8".into()))?
            .to_string();
        let mut dims = None;
        let mut episodes = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let steps = r.u32()? as usize;
            let d = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            if *dims.get_or_insert(d) != d {
                return Err(Error::Malformed("episodes disagree on observation dims".into()));
            }
            let n = steps + 1;
            let pixels = r.f32s(n * d.0 * d.1 * d.2)?;
            let coords = r.f32s(n * d.3)?;
            let actions = r.take(steps)?.to_vec();
            if actions.iter().any(|&a| Action::from_index(a).is_none()) {
                return Err(Error::Malformed("unknown action id".into()));
            }
            let raw = r.f32s(n * 3)?;
            let poses = raw
                .chunks_exact(3)
                .map(|p| {
                    let heading = Heading::from_index(p[2] as u8)
                        .filter(|_| p[2].fract() == 0.0)
                        .ok_or_else(|| Error::Malformed("bad heading".into()))?;
                    Ok(Pose { x: p[0], y: p[1], heading })
                })
                .collect::<Result<Vec<_>>>()?;
            episodes.push(Episode { pixels, coords, actions, poses });
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed("trailing bytes".into()));
        }
        let (h, w, c, cd) = dims.unwrap_or((0, 0, 0, 0));
        Self::new(DatasetMeta { map_id, seed, env_hash, obs_dims: (h, w, c), coord_dim: cd }, episodes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn hwc_to_chw(src: &[f32], h: usize, w: usize, c: usize, out: &mut Vec<f32>) {
    for ch in 0..c {
        out.extend((0..h * w).map(|p| src[p * c + ch]));
    }
}

/// Rolls `episodes` episodes of uniformly random actions, each starting from
/// a fresh reset, until the step limit.
pub fn collect_random(env: &mut Env, episodes: usize, rng: &mut impl Rng, meta: DatasetMeta) -> Result<Dataset> {
    if episodes == 0 {
        return Err(Error::Usage("at least one episode is required".into()));
    }
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng)?;
        let mut e = Episode { pixels: Vec::new(), coords: Vec::new(), actions: Vec::new(), poses: Vec::new() };
        loop {
            e.pixels.extend_from_slice(&obs.pixels);
            e.coords.extend(obs.coords.iter().flatten());
            e.poses.push(obs.pose);
            if env.is_done() {
                break;
            }
            let a = Action::ALL[rng.random_range(0..Action::COUNT)];
            e.actions.push(a.index());
            obs = env.step(a)?.0;
        }
        out.push(e);
    }
    Dataset::new(meta, out)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or(Error::Truncated)?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}
