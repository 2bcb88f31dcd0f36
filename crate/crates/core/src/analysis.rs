//! Diagnostic artifacts: latent index maps, reward heatmaps, trajectory
//! overlays (binary PPM), reward curves (CSV), and per-region purity.

use std::fmt::Write as _;
use std::path::Path;

use crate::agent::EvalReport;
use crate::error::{Error, Result};
use crate::world::{Heading, Palette, Pose, TileMap, WALL_COLOR};

pub const BACKGROUND: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self { width, height, data: fill.iter().copied().cycle().take(width * height * 3).collect() }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    fn fill_cell(&mut self, tx: usize, ty: usize, cell: usize, c: [u8; 3]) {
        for y in ty * cell..(ty + 1) * cell {
            for x in tx * cell..(tx + 1) * cell {
                self.set(x, y, c);
            }
        }
    }

    /// Binary `P6` encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm())?;
        Ok(())
    }
}

fn to_u8(c: [f32; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// `k` colours evenly spaced in hue.
pub fn latent_palette(k: usize) -> Vec<[u8; 3]> {
    (0..k)
        .map(|i| {
            let h = i as f32 / k.max(1) as f32 * 6.0;
            let (s, v) = if i % 2 == 0 { (0.85, 0.95) } else { (0.65, 0.70) };
            let f = h.fract();
            let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
            let rgb = match h as u32 {
                0 => [v, t, p],
                1 => [q, v, p],
                2 => [p, v, t],
                3 => [p, q, v],
                4 => [t, p, v],
                _ => [v, p, q],
            };
            to_u8(rgb)
        })
        .collect()
}

fn tile_index(map: &TileMap, p: &Pose) -> Option<usize> {
    let (x, y) = p.tile();
    (x >= 0 && y >= 0 && (x as u32) < map.width() && (y as u32) < map.height()).then(|| (y as u32 * map.width() + x as u32) as usize)
}

/// Most frequent latent per tile (ties to the smallest index), over
/// observations matching `heading` when given. `None` for unvisited tiles.
pub fn tile_plurality(map: &TileMap, poses: &[Pose], assignments: &[usize], k: usize, heading: Option<Heading>) -> Vec<Option<usize>> {
    let n = (map.width() * map.height()) as usize;
    let mut counts = vec![0u32; n * k];
    for (p, &a) in poses.iter().zip(assignments) {
        if heading.is_some_and(|h| h != p.heading) {
            continue;
        }
        if let Some(t) = tile_index(map, p) {
            counts[t * k + a] += 1;
        }
    }
    counts
        .chunks_exact(k)
        .map(|c| {
            let best = c.iter().enumerate().fold(0, |b, (i, &v)| if v > c[b] { i } else { b });
            (c[best] > 0).then_some(best)
        })
        .collect()
}

/// Top-down map with each visited tile coloured by its plurality latent.
pub fn index_map(map: &TileMap, poses: &[Pose], assignments: &[usize], k: usize, heading: Option<Heading>, cell: usize) -> Image {
    let palette = latent_palette(k);
    let mut img = Image::new(map.width() as usize * cell, map.height() as usize * cell, BACKGROUND);
    for (t, best) in tile_plurality(map, poses, assignments, k, heading).into_iter().enumerate() {
        let (tx, ty) = (t % map.width() as usize, t / map.width() as usize);
        if !map.is_passable(tx as i32, ty as i32) {
            img.fill_cell(tx, ty, cell, to_u8(WALL_COLOR));
        } else if let Some(b) = best {
            img.fill_cell(tx, ty, cell, palette[b]);
        }
    }
    img
}

/// Fraction of observations per tile that earn reward; `None` if unvisited.
pub fn reward_fractions(map: &TileMap, field: &[(Pose, u8)]) -> Vec<Option<f64>> {
    let n = (map.width() * map.height()) as usize;
    let mut hits = vec![(0u32, 0u32); n];
    for (p, r) in field {
        if let Some(t) = tile_index(map, p) {
            hits[t].0 += u32::from(*r);
            hits[t].1 += 1;
        }
    }
    hits.into_iter().map(|(h, c)| (c > 0).then(|| f64::from(h) / f64::from(c))).collect()
}

/// Grey-level heatmap of [`reward_fractions`]; black is always rewarded,
/// unvisited tiles are background.
pub fn reward_heatmap(map: &TileMap, field: &[(Pose, u8)], cell: usize) -> Image {
    let mut img = Image::new(map.width() as usize * cell, map.height() as usize * cell, BACKGROUND);
    for (t, f) in reward_fractions(map, field).into_iter().enumerate() {
        let (tx, ty) = (t % map.width() as usize, t / map.width() as usize);
        if let Some(f) = f {
            let v = (230.0 * (1.0 - f)).round() as u8;
            img.fill_cell(tx, ty, cell, [v, v, v]);
        } else if !map.is_passable(tx as i32, ty as i32) {
            img.fill_cell(tx, ty, cell, to_u8(WALL_COLOR));
        }
    }
    img
}

/// Dimmed floor colours with each trajectory's tiles drawn in its own colour.
pub fn trajectory_image(map: &TileMap, palette: &Palette, trajectories: &[Vec<Pose>], cell: usize) -> Image {
    let mut img = Image::new(map.width() as usize * cell, map.height() as usize * cell, BACKGROUND);
    for ty in 0..map.height() as i32 {
        for tx in 0..map.width() as i32 {
            let c = match map.floor(tx, ty) {
                Some(f) if map.is_passable(tx, ty) => palette.color(f).map(|v| 0.55 + 0.45 * v),
                _ => WALL_COLOR,
            };
            img.fill_cell(tx as usize, ty as usize, cell, to_u8(c));
        }
    }
    let colors = latent_palette(trajectories.len().max(1));
    for (traj, &c) in trajectories.iter().zip(&colors) {
        let dark = c.map(|v| v / 2);
        for p in traj {
            if let Some(t) = tile_index(map, p) {
                let (tx, ty) = (t % map.width() as usize, t / map.width() as usize);
                let m = cell / 4;
                for y in ty * cell + m..(ty + 1) * cell - m {
                    for x in tx * cell + m..(tx + 1) * cell - m {
                        img.set(x, y, dark);
                    }
                }
            }
        }
    }
    img
}

/// `skill,step,mean_reward` rows, one per skill and step.
pub fn reward_curves_csv(report: &EvalReport) -> String {
    let mut s = String::from("skill,step,mean_reward\n");
    for ev in &report.skills {
        for (t, m) in ev.mean_curve().iter().enumerate() {
            let _ = writeln!(s, "{},{},{:.6}", ev.skill, t, m);
        }
    }
    s
}

/// Parses [`reward_curves_csv`] output back into `(skill, step, mean)` rows.
pub fn parse_reward_curves(csv: &str) -> Result<Vec<(usize, usize, f64)>> {
    let bad = |l: &str| Error::Malformed(format!("reward curve row `{l}`"));
    csv.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(bad(l));
            }
            Ok((f[0].parse().map_err(|_| bad(l))?, f[1].parse().map_err(|_| bad(l))?, f[2].parse().map_err(|_| bad(l))?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionPurity {
    pub region: u8,
    pub observations: usize,
    /// Most frequent latent among the region's observations.
    pub majority: usize,
    /// Share of the region's observations carrying the majority latent.
    pub purity: f64,
}

/// Majority latent and purity for each map region, keyed by the region
/// label of the tile the agent stands on.
pub fn region_purity(map: &TileMap, poses: &[Pose], assignments: &[usize], k: usize) -> Vec<RegionPurity> {
    let r = map.num_regions();
    let mut counts = vec![0usize; r * k];
    for (p, &a) in poses.iter().zip(assignments) {
        let (x, y) = p.tile();
        if let Some(reg) = map.region(x, y) {
            counts[reg as usize * k + a] += 1;
        }
    }
    counts
        .chunks_exact(k)
        .enumerate()
        .map(|(region, c)| {
            let total: usize = c.iter().sum();
            let majority = c.iter().enumerate().fold(0, |b, (i, &v)| if v > c[b] { i } else { b });
            RegionPurity {
                region: region as u8,
                observations: total,
                majority,
                purity: if total > 0 { c[majority] as f64 / total as f64 } else { 0.0 },
            }
        })
        .collect()
}

/// Region purity read off the index map: each visited tile contributes its
/// plurality latent once, so the share is over tiles rather than observations.
pub fn index_map_purity(map: &TileMap, poses: &[Pose], assignments: &[usize], k: usize) -> Vec<RegionPurity> {
    let plurality = tile_plurality(map, poses, assignments, k, None);
    let mut tiles = Vec::new();
    let mut latents = Vec::new();
    for (t, best) in plurality.into_iter().enumerate() {
        if let Some(b) = best {
            let (x, y) = (t % map.width() as usize, t / map.width() as usize);
            tiles.push(Pose { x: x as f32 + 0.5, y: y as f32 + 0.5, heading: Heading::N });
            latents.push(b);
        }
    }
    region_purity(map, &tiles, &latents, k)
}
