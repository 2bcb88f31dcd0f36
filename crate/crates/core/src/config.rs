//! Run configuration. Every field has a default; hyperparameter defaults are
//! the published values, and [`AgentConfig::scale`] shrinks the frame and
//! capacity counts for desk-sized runs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub env: EnvConfig,
    pub explore: ExploreConfig,
    pub vq: VqConfig,
    pub contrastive: ContrastiveConfig,
    pub agent: AgentConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::Config(format!("config not found: {}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.env;
        if e.view_tiles == 0 || e.view_tiles % 2 == 0 || e.view_behind >= e.view_tiles {
            return Err(Error::Config("view_tiles must be odd and exceed view_behind".into()));
        }
        if e.obs_size < 8 || !e.obs_size.is_power_of_two() {
            return Err(Error::Config("obs_size must be a power of two ≥ 8".into()));
        }
        if e.frame_skip == 0 || e.max_steps == 0 {
            return Err(Error::Config("frame_skip and max_steps must be positive".into()));
        }
        if self.vq.num_embeddings < 2 || self.contrastive.num_skills < 2 {
            return Err(Error::Config("at least two latent codes are required".into()));
        }
        for (name, v) in [("vq.beta", self.vq.beta), ("vq.decay", self.vq.decay)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(0.0..=1.0).contains(&self.contrastive.tau) {
            return Err(Error::Config("contrastive.tau must lie in [0, 1]".into()));
        }
        if self.agent.scale <= 0.0 || !(0.0..1.0).contains(&self.agent.gamma) {
            return Err(Error::Config("agent.scale must be positive and gamma in [0, 1)".into()));
        }
        if self.vq.mi_temperature <= 0.0 {
            return Err(Error::Config("vq.mi_temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Handcrafted,
    Realistic,
    Twin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpawnSpec {
    /// Any passable tile, uniformly.
    Uniform,
    /// Any passable tile of the given region label.
    Region(u8),
    /// A fixed tile.
    Tile(u32, u32),
    /// The passable tile nearest the map centre.
    Centre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub map: MapKind,
    /// Optional map file; overrides `map` when set.
    pub map_file: Option<String>,
    pub map_seed: u64,
    /// Side length in tiles of generated maps.
    pub map_size: u32,
    pub obs_size: usize,
    pub view_tiles: u32,
    /// Tiles visible behind the agent.
    pub view_behind: u32,
    pub frame_skip: u32,
    pub max_steps: u32,
    pub coords: bool,
    pub spawn: SpawnSpec,
    /// RGB per floor type in [0, 1]; built-in colours when absent.
    pub palette: Option<Vec<[f32; 3]>>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            map: MapKind::Handcrafted,
            map_file: None,
            map_seed: 0,
            map_size: 48,
            obs_size: 64,
            view_tiles: 9,
            view_behind: 2,
            frame_skip: 10,
            max_steps: 500,
            coords: false,
            spawn: SpawnSpec::Uniform,
            palette: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreConfig {
    pub episodes: usize,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self { episodes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub num_hiddens: usize,
    pub num_residual_hiddens: usize,
    pub num_residual_layers: usize,
    pub embedding_dim: usize,
    pub num_embeddings: usize,
    pub beta: f64,
    pub decay: f64,
    pub steps: usize,
    /// Weight of the coordinate reconstruction term in the joint model.
    pub coord_weight: f64,
    pub coord_hiddens: usize,
    /// Codes unused this many consecutive steps are reseeded.
    pub dead_code_steps: usize,
    pub mi_temperature: f64,
    pub log_interval: usize,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            num_hiddens: 64,
            num_residual_hiddens: 32,
            num_residual_layers: 2,
            embedding_dim: 256,
            num_embeddings: 10,
            beta: 0.25,
            decay: 0.99,
            steps: 10_000,
            coord_weight: 1.0,
            coord_hiddens: 64,
            dead_code_steps: 5000,
            mi_temperature: 1.0,
            log_interval: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub soft_update: u64,
    pub embedding_dim: usize,
    pub num_hiddens: usize,
    pub k_mu: f64,
    pub k_sigma: f64,
    pub steps: usize,
    pub num_skills: usize,
    pub kmeans_restarts: usize,
    pub kmeans_iters: usize,
    /// Observations embedded for clustering; larger datasets are subsampled.
    pub kmeans_points: usize,
    pub log_interval: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            tau: 5e-3,
            soft_update: 2,
            embedding_dim: 128,
            num_hiddens: 64,
            k_mu: 15.0,
            k_sigma: 5.0,
            steps: 10_000,
            num_skills: 10,
            kmeans_restarts: 10,
            kmeans_iters: 100,
            kmeans_points: 20_000,
            log_interval: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub prioritized: bool,
    pub update_interval: u64,
    pub gamma: f64,
    pub adam_eps: f64,
    pub final_epsilon: f64,
    pub final_exploration_frames: f64,
    pub eval_epsilon: f64,
    pub replay_capacity: f64,
    pub replay_start: f64,
    pub target_update_interval: f64,
    /// Environment frames of skill training.
    pub total_frames: u64,
    pub hidden: usize,
    pub priority_alpha: f64,
    pub priority_beta: f64,
    pub priority_eps: f64,
    /// Divides capacity, replay start, exploration frames, and target interval.
    pub scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.5e-4,
            batch_size: 64,
            prioritized: true,
            update_interval: 4,
            gamma: 0.99,
            adam_eps: 1e-8,
            final_epsilon: 0.01,
            final_exploration_frames: 3.5e5,
            eval_epsilon: 0.001,
            replay_capacity: 10e6,
            replay_start: 1e4,
            target_update_interval: 2e4,
            total_frames: 1_000_000,
            hidden: 256,
            priority_alpha: 0.6,
            priority_beta: 0.4,
            priority_eps: 1e-6,
            scale: 1.0,
        }
    }
}

/// Frame and capacity counts after applying [`AgentConfig::scale`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledAgent {
    pub replay_capacity: usize,
    pub replay_start: usize,
    pub final_exploration_frames: u64,
    pub target_update_interval: u64,
}

impl AgentConfig {
    pub fn scaled(&self) -> ScaledAgent {
        let s = |v: f64| (v / self.scale).round().max(1.0);
        ScaledAgent {
            replay_capacity: s(self.replay_capacity) as usize,
            replay_start: s(self.replay_start) as usize,
            final_exploration_frames: s(self.final_exploration_frames) as u64,
            target_update_interval: s(self.target_update_interval) as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes_per_skill: usize,
    /// Trailing steps averaged for the per-skill score.
    pub final_window: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes_per_skill: 10, final_window: 100 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = Config::default();
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = Config::from_toml("[vq]\nsteps = 5\n[env]\nobs_size = 16\nspawn = { tile = [3, 4] }\n").unwrap();
        assert_eq!(cfg.vq.steps, 5);
        assert_eq!(cfg.vq.beta, 0.25);
        assert_eq!(cfg.env.obs_size, 16);
        assert_eq!(cfg.env.spawn, SpawnSpec::Tile(3, 4));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(Config::from_toml("[vq]\nbogus = 1\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[vq]\nbeta = 1.5\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[env]\nview_tiles = 8\n"), Err(Error::Config(_))));
    }

    #[test]
    fn scale_divides_counts() {
        let a = AgentConfig { scale: 10.0, ..AgentConfig::default() };
        let s = a.scaled();
        assert_eq!(s.replay_start, 1000);
        assert_eq!(s.final_exploration_frames, 35_000);
        assert_eq!(s.target_update_interval, 2000);
        assert_eq!(s.replay_capacity, 1_000_000);
    }
}
