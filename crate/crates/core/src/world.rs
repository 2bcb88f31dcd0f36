//! Bounded tile world with egocentric pixel observations.
//!
//! Positions are tile centres (`x + 0.5`). Heading `N` points toward
//! decreasing `y`; rows grow southward. Each agent step repeats its primitive
//! motion for `frame_skip` ticks; forward motion advances one tile per tick
//! and stops at the first impassable tile.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EnvConfig, MapKind, SpawnSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Heading> {
        Self::ALL.get(i as usize).copied()
    }

    pub fn left(self) -> Heading {
        Self::ALL[(self.index() as usize + 3) % 4]
    }

    pub fn right(self) -> Heading {
        Self::ALL[(self.index() as usize + 1) % 4]
    }

    /// Unit step `(dx, dy)` in map coordinates.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];
    pub const COUNT: usize = 3;

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Action> {
        Self::ALL.get(i as usize).copied()
    }
}

/// Ground-truth agent pose, kept for analysis only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f32,
    pub y: f32,
    pub heading: Heading,
}

impl Pose {
    pub fn tile(&self) -> (i32, i32) {
        (self.x.floor() as i32, self.y.floor() as i32)
    }
}

pub const WALL_COLOR: [f32; 3] = [0.12, 0.12, 0.12];

const DEFAULT_COLORS: [[f32; 3]; 12] = [
    [0.90, 0.20, 0.20],
    [0.20, 0.75, 0.25],
    [0.20, 0.35, 0.90],
    [0.95, 0.85, 0.20],
    [0.80, 0.30, 0.85],
    [0.20, 0.85, 0.85],
    [0.95, 0.55, 0.15],
    [0.55, 0.35, 0.20],
    [0.92, 0.92, 0.92],
    [0.45, 0.60, 0.30],
    [0.60, 0.60, 0.95],
    [0.85, 0.60, 0.65],
];

/// Side of the per-floor-type texture pattern, in samples per tile.
const TEXTURE: usize = 4;

/// Floor colours plus a seeded brightness dither per floor type.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    colors: Vec<[f32; 3]>,
    textures: Vec<[f32; TEXTURE * TEXTURE]>,
    wall: [f32; TEXTURE * TEXTURE],
}

impl Palette {
    pub fn new(colors: Vec<[f32; 3]>) -> Result<Self> {
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("palette colours must lie in [0, 1]".into()));
        }
        let pattern = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x7e47_0000 + id);
            let mut t = [0f32; TEXTURE * TEXTURE];
            t.iter_mut().for_each(|v| *v = rng.random_range(-0.15..0.15));
            t
        };
        let textures = (0..colors.len() as u64).map(pattern).collect();
        Ok(Self { colors, textures, wall: pattern(u64::from(u32::MAX)) })
    }

    pub fn default_for(num_types: usize) -> Result<Self> {
        if num_types > DEFAULT_COLORS.len() {
            return Err(Error::Config(format!("no built-in palette for {num_types} floor types")));
        }
        Self::new(DEFAULT_COLORS[..num_types].to_vec())
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, floor: u8) -> [f32; 3] {
        self.colors[floor as usize]
    }

    /// Colour of a sample at sub-tile position `(u, v)` ∈ [0,1)²; `None` is a wall.
    fn sample(&self, floor: Option<u8>, u: f32, v: f32) -> [f32; 3] {
        let ti = ((v * TEXTURE as f32) as usize).min(TEXTURE - 1) * TEXTURE
            + ((u * TEXTURE as f32) as usize).min(TEXTURE - 1);
        let (base, tex) = match floor {
            Some(f) => (self.colors[f as usize], &self.textures[f as usize]),
            None => (WALL_COLOR, &self.wall),
        };
        let s = 1.0 + tex[ti];
        [(base[0] * s).clamp(0.0, 1.0), (base[1] * s).clamp(0.0, 1.0), (base[2] * s).clamp(0.0, 1.0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileMap {
    pub name: String,
    width: u32,
    height: u32,
    floor: Vec<u8>,
    passable: Vec<bool>,
    /// Analysis label per tile (the region of the handcrafted map, the side of the twin map).
    region: Vec<u8>,
    num_types: usize,
    num_regions: usize,
}

impl TileMap {
    fn from_parts(name: &str, width: u32, height: u32, floor: Vec<u8>, passable: Vec<bool>, region: Vec<u8>) -> Result<Self> {
        let n = (width * height) as usize;
        if width < 3 || height < 3 || floor.len() != n || passable.len() != n || region.len() != n {
            return Err(Error::Config(format!("map `{name}` has inconsistent dimensions")));
        }
        let num_types = floor.iter().map(|&f| f as usize + 1).max().unwrap_or(0);
        let num_regions = region.iter().map(|&r| r as usize + 1).max().unwrap_or(0);
        let mut map = Self { name: name.to_string(), width, height, floor, passable, region, num_types, num_regions };
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x == width - 1 || y == height - 1 {
                    let i = map.index(x, y);
                    map.passable[i] = false;
                }
            }
        }
        if !map.passable.iter().any(|&p| p) {
            return Err(Error::Config(format!("map `{name}` has no passable tile")));
        }
        Ok(map)
    }

    /// 3×3 equal square regions with distinct floor types 0..9 in row-major
    /// order, surrounded by a wall border.
    pub fn handcrafted(size: u32) -> Result<Self> {
        if size < 9 {
            return Err(Error::Config("handcrafted map needs at least 9 tiles per side".into()));
        }
        let n = (size * size) as usize;
        let mut floor = vec![0u8; n];
        for y in 0..size {
            for x in 0..size {
                floor[(y * size + x) as usize] = ((y * 3 / size) * 3 + x * 3 / size) as u8;
            }
        }
        Self::from_parts("handcrafted", size, size, floor.clone(), vec![true; n], floor)
    }

    /// A `2s × s` field of floor type B holding two identical `s/2`-square
    /// islands of floor type A, centred in the left and right halves and a
    /// quarter side away from the boundary walls. Regions are labelled
    /// 0 (left island), 1 (field), 2 (right island).
    pub fn twin(size: u32) -> Result<Self> {
        if size < 16 {
            return Err(Error::Config("twin map needs size ≥ 16".into()));
        }
        let (w, h) = (2 * size, size);
        let (lo, hi) = (size / 4, size / 4 + size / 2);
        let n = (w * h) as usize;
        let mut floor = vec![1u8; n];
        let mut region = vec![1u8; n];
        for y in lo..hi {
            for x in lo..hi {
                for (dx, label) in [(0, 0u8), (size, 2)] {
                    let i = (y * w + x + dx) as usize;
                    floor[i] = 0;
                    region[i] = label;
                }
            }
        }
        Self::from_parts("twin", w, h, floor, vec![true; n], region)
    }

    /// Seeded value-noise terrain quantized into six equally frequent floor
    /// types, with scattered obstacles. Only the largest connected passable
    /// component stays passable.
    pub fn realistic(seed: u64, size: u32) -> Result<Self> {
        const TYPES: usize = 6;
        if size < 9 {
            return Err(Error::Config("realistic map needs at least 9 tiles per side".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut height_field = vec![0f64; (size * size) as usize];
        for (spacing, amp) in [(12u32, 1.0), (6, 0.5), (3, 0.25)] {
            let g = size / spacing + 2;
            let lattice: Vec<f64> = (0..g * g).map(|_| rng.random::<f64>()).collect();
            for y in 0..size {
                for x in 0..size {
                    let (fx, fy) = (x as f64 / spacing as f64, y as f64 / spacing as f64);
                    let (ix, iy) = (fx as u32, fy as u32);
                    let (tx, ty) = (smooth(fx.fract()), smooth(fy.fract()));
                    let at = |a: u32, b: u32| lattice[(b * g + a) as usize];
                    let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
                    let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
                    height_field[(y * size + x) as usize] += amp * (top * (1.0 - ty) + bottom * ty);
                }
            }
        }
        let mut order: Vec<usize> = (0..height_field.len()).collect();
        order.sort_by(|&a, &b| height_field[a].total_cmp(&height_field[b]).then(a.cmp(&b)));
        let mut floor = vec![0u8; order.len()];
        for (rank, &i) in order.iter().enumerate() {
            floor[i] = (rank * TYPES / order.len()) as u8;
        }
        let passable: Vec<bool> = (0..floor.len()).map(|_| rng.random::<f64>() >= 0.06).collect();
        let mut map = Self::from_parts("realistic", size, size, floor.clone(), passable, floor)?;
        map.keep_largest_component();
        Ok(map)
    }

    pub fn from_config(cfg: &EnvConfig) -> Result<Self> {
        if let Some(path) = &cfg.map_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read map file {path}: {e}")))?;
            return Self::from_text(&text);
        }
        match cfg.map {
            MapKind::Handcrafted => Self::handcrafted(cfg.map_size),
            MapKind::Realistic => Self::realistic(cfg.map_seed, cfg.map_size),
            MapKind::Twin => Self::twin(cfg.map_size),
        }
    }

    fn keep_largest_component(&mut self) {
        let mut label = vec![usize::MAX; self.passable.len()];
        let mut best = (0, 0);
        let mut next = 0;
        for start in 0..self.passable.len() {
            if !self.passable[start] || label[start] != usize::MAX {
                continue;
            }
            let size = self.flood(start, next, &mut label);
            if size > best.1 {
                best = (next, size);
            }
            next += 1;
        }
        for (p, &l) in self.passable.iter_mut().zip(&label) {
            *p = *p && l == best.0;
        }
    }

    fn flood(&self, start: usize, id: usize, label: &mut [usize]) -> usize {
        let mut queue = VecDeque::from([start]);
        label[start] = id;
        let mut count = 0;
        while let Some(i) = queue.pop_front() {
            count += 1;
            let (x, y) = ((i as u32 % self.width) as i32, (i as u32 / self.width) as i32);
            for h in Heading::ALL {
                let (dx, dy) = h.delta();
                if self.is_passable(x + dx, y + dy) {
                    let j = self.index((x + dx) as u32, (y + dy) as u32);
                    if label[j] == usize::MAX {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        count
    }

    /// Number of 4-connected components of passable tiles.
    pub fn passable_components(&self) -> usize {
        let mut label = vec![usize::MAX; self.passable.len()];
        let mut n = 0;
        for i in 0..self.passable.len() {
            if self.passable[i] && label[i] == usize::MAX {
                self.flood(i, n, &mut label);
                n += 1;
            }
        }
        n
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    fn index(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height
    }

    pub fn is_passable(&self, x: i32, y: i32) -> bool {
        self.in_bounds(x, y) && self.passable[self.index(x as u32, y as u32)]
    }

    pub fn floor(&self, x: i32, y: i32) -> Option<u8> {
        self.in_bounds(x, y).then(|| self.floor[self.index(x as u32, y as u32)])
    }

    pub fn region(&self, x: i32, y: i32) -> Option<u8> {
        self.in_bounds(x, y).then(|| self.region[self.index(x as u32, y as u32)])
    }

    /// Passable tiles, row-major.
    pub fn passable_tiles(&self) -> Vec<(u32, u32)> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.passable[self.index(x, y)])
            .collect()
    }

    /// Plain-text form: a header line `skillgrid-map <width> <height> <types>`
    /// followed by one line per row of tile ids, `#` for impassable tiles.
    pub fn to_text(&self) -> String {
        let mut s = format!("skillgrid-map {} {} {}\n", self.width, self.height, self.num_types);
        for y in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|x| {
                    let i = self.index(x, y);
                    if self.passable[i] { self.floor[i].to_string() } else { "#".into() }
                })
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    /// Parses [`TileMap::to_text`] output. Wall tiles get floor type 0 and
    /// region labels equal floor types.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("map file: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != "skillgrid-map" {
            return Err(bad("expected header `skillgrid-map <width> <height> <types>`"));
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| bad("non-numeric header"));
        let (w, h, types) = (num(header[1])?, num(header[2])?, num(header[3])?);
        let mut floor = Vec::with_capacity((w * h) as usize);
        let mut passable = Vec::with_capacity(floor.capacity());
        for _ in 0..h {
            let row: Vec<&str> = lines.next().ok_or_else(|| bad("too few rows"))?.split_whitespace().collect();
            if row.len() != w as usize {
                return Err(bad("row length differs from width"));
            }
            for tok in row {
                if tok == "#" {
                    floor.push(0);
                    passable.push(false);
                } else {
                    let f = num(tok)?;
                    if f >= types {
                        return Err(bad("tile id outside the declared floor types"));
                    }
                    floor.push(f as u8);
                    passable.push(true);
                }
            }
        }
        if lines.next().is_some() {
            return Err(bad("too many rows"));
        }
        Self::from_parts("file", w, h, floor.clone(), passable, floor)
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub x: f32,
    pub y: f32,
    pub heading: Heading,
    pub tick: u64,
    pub steps: u32,
    pub spawn: (f32, f32),
}

impl AgentState {
    pub fn pose(&self) -> Pose {
        Pose { x: self.x, y: self.y, heading: self.heading }
    }

    fn tile(&self) -> (i32, i32) {
        (self.x.floor() as i32, self.y.floor() as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Row-major `H × W × 3`, values in [0, 1].
    pub pixels: Vec<f32>,
    pub coords: Option<[f32; 2]>,
    pub pose: Pose,
}

/// Static rendering and stepping parameters, separated from the map so that
/// many environments can share one map.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvParams {
    pub obs_size: usize,
    pub view_tiles: u32,
    pub view_behind: u32,
    pub frame_skip: u32,
    pub max_steps: u32,
    pub coords: bool,
    pub spawn: SpawnSpec,
}

impl From<&EnvConfig> for EnvParams {
    fn from(c: &EnvConfig) -> Self {
        Self {
            obs_size: c.obs_size,
            view_tiles: c.view_tiles,
            view_behind: c.view_behind,
            frame_skip: c.frame_skip,
            max_steps: c.max_steps,
            coords: c.coords,
            spawn: c.spawn.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Env {
    map: Arc<TileMap>,
    palette: Arc<Palette>,
    params: EnvParams,
    state: Option<AgentState>,
    done: bool,
}

impl Env {
    pub fn new(map: Arc<TileMap>, palette: Arc<Palette>, params: EnvParams) -> Result<Self> {
        if palette.len() < map.num_types() {
            return Err(Error::Config(format!(
                "palette has {} colours, map uses {} floor types",
                palette.len(),
                map.num_types()
            )));
        }
        Ok(Self { map, palette, params, state: None, done: false })
    }

    /// Builds the map and palette described by `cfg`.
    pub fn from_config(cfg: &EnvConfig) -> Result<Self> {
        let map = TileMap::from_config(cfg)?;
        let palette = match &cfg.palette {
            Some(colors) => Palette::new(colors.clone())?,
            None => Palette::default_for(map.num_types())?,
        };
        Self::new(Arc::new(map), Arc::new(palette), cfg.into())
    }

    pub fn map(&self) -> &Arc<TileMap> {
        &self.map
    }

    pub fn palette(&self) -> &Arc<Palette> {
        &self.palette
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn state(&self) -> Option<&AgentState> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Pixel tensor dimensions `(H, W, C)`.
    pub fn obs_dims(&self) -> (usize, usize, usize) {
        (self.params.obs_size, self.params.obs_size, 3)
    }

    /// Starts an episode at a spawn drawn from the configured spec; the
    /// heading is drawn uniformly.
    pub fn reset(&mut self, rng: &mut impl Rng) -> Result<Observation> {
        let tile = match self.params.spawn {
            SpawnSpec::Uniform => {
                let tiles = self.map.passable_tiles();
                tiles[rng.random_range(0..tiles.len())]
            }
            SpawnSpec::Region(r) => {
                let tiles: Vec<_> = self
                    .map
                    .passable_tiles()
                    .into_iter()
                    .filter(|&(x, y)| self.map.region(x as i32, y as i32) == Some(r))
                    .collect();
                if tiles.is_empty() {
                    return Err(Error::Config(format!("region {r} has no passable tile")));
                }
                tiles[rng.random_range(0..tiles.len())]
            }
            SpawnSpec::Tile(x, y) => (x, y),
            SpawnSpec::Centre => {
                let (cx, cy) = (self.map.width() as f64 / 2.0, self.map.height() as f64 / 2.0);
                let d = |&(x, y): &(u32, u32)| (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                self.map
                    .passable_tiles()
                    .into_iter()
                    .min_by(|a, b| d(a).total_cmp(&d(b)))
                    .expect("maps have a passable tile")
            }
        };
        let heading = Heading::ALL[rng.random_range(0..4)];
        self.reset_at(tile, heading)
    }

    /// Starts an episode at a specific tile and heading.
    pub fn reset_at(&mut self, tile: (u32, u32), heading: Heading) -> Result<Observation> {
        if !self.map.is_passable(tile.0 as i32, tile.1 as i32) {
            return Err(Error::Config(format!("spawn tile {tile:?} is not passable")));
        }
        let (x, y) = (tile.0 as f32 + 0.5, tile.1 as f32 + 0.5);
        self.state = Some(AgentState { x, y, heading, tick: 0, steps: 0, spawn: (x, y) });
        self.done = false;
        Ok(self.observe())
    }

    /// Applies one agent step without rendering; returns `done`.
    pub fn advance(&mut self, action: Action) -> Result<bool> {
        if self.done {
            return Err(Error::Usage("step after episode end".into()));
        }
        let state = self.state.as_mut().ok_or_else(|| Error::Usage("step before reset".into()))?;
        match action {
            Action::Forward => {
                let (dx, dy) = state.heading.delta();
                for _ in 0..self.params.frame_skip {
                    let (tx, ty) = state.tile();
                    if !self.map.is_passable(tx + dx, ty + dy) {
                        break;
                    }
                    state.x += dx as f32;
                    state.y += dy as f32;
                }
            }
            Action::TurnLeft => state.heading = state.heading.left(),
            Action::TurnRight => state.heading = state.heading.right(),
        }
        state.tick += u64::from(self.params.frame_skip);
        state.steps += 1;
        self.done = state.steps >= self.params.max_steps;
        Ok(self.done)
    }

    pub fn step(&mut self, action: Action) -> Result<(Observation, bool)> {
        let done = self.advance(action)?;
        Ok((self.observe(), done))
    }

    /// Renders the current state. Panics before the first reset.
    pub fn observe(&self) -> Observation {
        let state = self.state.as_ref().expect("observe after reset");
        Observation {
            pixels: self.render(state),
            coords: self.params.coords.then(|| self.rel_coords(state)),
            pose: state.pose(),
        }
    }

    /// Egocentric `V × V` tile window, heading up, agent on row
    /// `V − 1 − view_behind` of the centre column.
    pub fn render(&self, state: &AgentState) -> Vec<f32> {
        let s = self.params.obs_size;
        let v = self.params.view_tiles as f32;
        let agent_row = (self.params.view_tiles - 1 - self.params.view_behind) as i32;
        let centre_col = (self.params.view_tiles / 2) as i32;
        let (fx, fy) = state.heading.delta();
        let (rx, ry) = state.heading.right().delta();
        let (ax, ay) = state.tile();
        let mut out = vec![0f32; s * s * 3];
        for py in 0..s {
            let vy = (py as f32 + 0.5) * v / s as f32;
            let row = vy.floor() as i32;
            for px in 0..s {
                let vx = (px as f32 + 0.5) * v / s as f32;
                let col = vx.floor() as i32;
                let ahead = agent_row - row;
                let side = col - centre_col;
                let (tx, ty) = (ax + ahead * fx + side * rx, ay + ahead * fy + side * ry);
                let floor = if self.map.is_passable(tx, ty) { self.map.floor(tx, ty) } else { None };
                let c = self.palette.sample(floor, vx.fract(), vy.fract());
                out[(py * s + px) * 3..][..3].copy_from_slice(&c);
            }
        }
        out
    }

    /// Displacement from spawn divided by half the larger map side, clamped to [−1, 1].
    pub fn rel_coords(&self, state: &AgentState) -> [f32; 2] {
        let half = self.map.width().max(self.map.height()) as f32 / 2.0;
        [
            ((state.x - state.spawn.0) / half).clamp(-1.0, 1.0),
            ((state.y - state.spawn.1) / half).clamp(-1.0, 1.0),
        ]
    }
}
