//! End-to-end stages (explore → discover → train skills → evaluate) and the
//! run-directory layout they read and write.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillgrid_nn::Checkpoint;

use crate::agent::{evaluate, train_skills, EvalReport, GridSkillEnv, QPolicy, TrainLogRow};
use crate::cluster::{kmeans, CentroidSet};
use crate::config::Config;
use crate::contrastive::ContrastiveModel;
use crate::error::{Error, Result};
use crate::reward::SkillSpace;
use crate::trajectory::{collect_random, env_hash, Dataset, DatasetMeta};
use crate::vq::{mi_diagnostic, VqModel};
use crate::world::Env;

/// Independent seed for one pipeline stage (SplitMix64 finalizer).
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const EXPLORE: u64 = 1;
const VQ: u64 = 2;
const CONTRASTIVE: u64 = 3;
const AGENT: u64 = 4;
const EVAL: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Vq,
    Contrastive,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Vq => "vq",
            Backend::Contrastive => "contrastive",
        }
    }
}

pub fn explore(cfg: &Config, seed: u64) -> Result<Dataset> {
    let mut env = Env::from_config(&cfg.env)?;
    let meta = DatasetMeta {
        map_id: env.map().name.clone(),
        seed,
        env_hash: env_hash(&cfg.env, env.map()),
        obs_dims: env.obs_dims(),
        coord_dim: if cfg.env.coords { 2 } else { 0 },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, EXPLORE));
    collect_random(&mut env, cfg.explore.episodes, &mut rng, meta)
}

fn check_dataset(cfg: &Config, ds: &Dataset) -> Result<()> {
    let env = Env::from_config(&cfg.env)?;
    if ds.meta.env_hash != env_hash(&cfg.env, env.map()) {
        return Err(Error::Config("dataset was collected under a different environment configuration".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqLogRow {
    pub step: u64,
    pub recon: f64,
    pub coord_recon: f64,
    pub commitment: f64,
    pub perplexity: f64,
    pub mi: f64,
}

/// Untrained model shaped by `cfg`; also used to restore checkpoints.
pub fn build_vq(cfg: &Config, seed: u64) -> Result<(VqModel, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, VQ));
    let model = VqModel::new(&cfg.vq, cfg.env.obs_size, cfg.env.coords, &mut rng)?;
    Ok((model, rng))
}

pub fn train_vq(cfg: &Config, ds: &Dataset, seed: u64) -> Result<(VqModel, Vec<VqLogRow>)> {
    check_dataset(cfg, ds)?;
    let (mut model, mut rng) = build_vq(cfg, seed)?;
    let probe = ds.sample_batch(cfg.vq.batch_size, &mut rng)?;
    let (probe_x, probe_c) = (ds.pixel_batch(&probe), ds.coord_batch(&probe));
    let mut log = Vec::new();
    for step in 1..=cfg.vq.steps as u64 {
        let idx = ds.sample_batch(cfg.vq.batch_size, &mut rng)?;
        let c = ds.coord_batch(&idx);
        let report = model.train_step(&ds.pixel_batch(&idx), c.as_ref(), &mut rng)?;
        if step % cfg.vq.log_interval.max(1) as u64 == 0 || step == cfg.vq.steps as u64 {
            let z = model.encode(&probe_x, probe_c.as_ref())?;
            let mi = mi_diagnostic(z.data(), &model.codebook.embeddings, model.codebook.d, cfg.vq.mi_temperature)?;
            log.push(VqLogRow {
                step,
                recon: report.recon,
                coord_recon: report.coord_recon.unwrap_or(0.0),
                commitment: report.commitment,
                perplexity: report.perplexity,
                mi,
            });
        }
    }
    Ok((model, log))
}

pub fn build_contrastive(cfg: &Config, seed: u64) -> Result<(ContrastiveModel, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, CONTRASTIVE));
    let model = ContrastiveModel::new(&cfg.contrastive, cfg.env.obs_size, &mut rng)?;
    Ok((model, rng))
}

/// InfoNCE training on delayed pairs, then K-Means over normalized momentum
/// embeddings of (at most `kmeans_points` uniformly chosen) observations.
pub fn train_contrastive(cfg: &Config, ds: &Dataset, seed: u64) -> Result<(ContrastiveModel, CentroidSet, Vec<(u64, f64)>)> {
    check_dataset(cfg, ds)?;
    let c = &cfg.contrastive;
    let (mut model, mut rng) = build_contrastive(cfg, seed)?;
    let mut log = Vec::new();
    for step in 1..=c.steps as u64 {
        let mut anchors = Vec::with_capacity(c.batch_size);
        let mut positives = Vec::with_capacity(c.batch_size);
        for _ in 0..c.batch_size {
            let p = ds.sample_delayed_pair(c.k_mu, c.k_sigma, &mut rng)?;
            anchors.push(ds.global_index(p.episode, p.anchor));
            positives.push(ds.global_index(p.episode, p.positive()));
        }
        let loss = model.train_step(&ds.pixel_batch(&anchors), &ds.pixel_batch(&positives))?;
        if step % c.log_interval.max(1) as u64 == 0 || step == c.steps as u64 {
            log.push((step, loss));
        }
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    if idx.len() > c.kmeans_points {
        idx = rand::seq::index::sample(&mut rng, ds.len(), c.kmeans_points).into_vec();
        idx.sort_unstable();
    }
    let mut emb = Vec::with_capacity(idx.len() * model.dim());
    for part in idx.chunks(256) {
        emb.extend_from_slice(model.embed(&ds.pixel_batch(part))?.data());
    }
    let centroids = kmeans(&emb, model.dim(), c.num_skills, c.kmeans_iters, c.kmeans_restarts, stage_seed(seed, CONTRASTIVE + 100))?;
    Ok((model, centroids, log))
}

pub fn agent_env(cfg: &Config, space: SkillSpace) -> Result<GridSkillEnv> {
    GridSkillEnv::new(Env::from_config(&cfg.env)?, space)
}

pub fn train_agent(cfg: &Config, space: SkillSpace, seed: u64) -> Result<(QPolicy, GridSkillEnv, Vec<TrainLogRow>)> {
    let mut env = agent_env(cfg, space)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, AGENT));
    let (policy, log) = train_skills(&mut env, &cfg.agent, &mut rng)?;
    Ok((policy, env, log))
}

/// Untrained policy shaped for `env`; used to restore checkpoints.
pub fn build_policy(cfg: &Config, env: &GridSkillEnv, seed: u64) -> Result<QPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, AGENT));
    QPolicy::for_env(env, cfg.agent.hidden, cfg.agent.gamma, &mut rng)
}

pub fn evaluate_agent(cfg: &Config, policy: &QPolicy, env: &mut GridSkillEnv, seed: u64) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, EVAL));
    let skills: Vec<usize> = (0..crate::agent::SkillEnv::num_skills(env)).collect();
    evaluate(policy, env, &skills, cfg.eval.episodes_per_skill, cfg.agent.eval_epsilon, &mut rng)
}

pub fn vq_log_csv(rows: &[VqLogRow]) -> String {
    let mut s = String::from("step,recon,coord_recon,commitment,perplexity,mi\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.step, r.recon, r.coord_recon, r.commitment, r.perplexity, r.mi);
    }
    s
}

pub fn contrastive_log_csv(rows: &[(u64, f64)]) -> String {
    let mut s = String::from("step,loss\n");
    for (step, loss) in rows {
        let _ = writeln!(s, "{step},{loss}");
    }
    s
}

pub fn train_log_csv(rows: &[TrainLogRow]) -> String {
    let mut s = String::from("frame,episode,skill,return,loss,epsilon\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.frame, r.episode, r.skill, r.episode_return, r.loss, r.epsilon);
    }
    s
}

/// File layout of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.skld")
    }

    pub fn map(&self) -> PathBuf {
        self.root.join("map.txt")
    }

    pub fn discovery_checkpoint(&self, b: Backend) -> PathBuf {
        self.root.join(format!("{}.nnck", b.name()))
    }

    pub fn policy_checkpoint(&self, b: Backend) -> PathBuf {
        self.root.join(format!("policy_{}.nnck", b.name()))
    }

    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(name)
    }

    pub fn figure(&self, name: &str) -> PathBuf {
        self.root.join("figures").join(name)
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(self.root.join("logs"))?;
        std::fs::create_dir_all(self.root.join("figures"))?;
        Ok(())
    }

    /// Writes the configuration snapshot, or checks that an existing one is identical.
    pub fn snapshot_config(&self, cfg: &Config) -> Result<()> {
        self.create()?;
        let text = cfg.to_toml();
        match std::fs::read_to_string(self.config()) {
            Ok(existing) if existing == text => Ok(()),
            Ok(_) => Err(Error::Config(format!("{} holds a different configuration", self.root.display()))),
            Err(_) => {
                std::fs::write(self.config(), text)?;
                Ok(())
            }
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let p = self.dataset();
        if !p.exists() {
            return Err(Error::Usage(format!("dataset required: run `explore` first ({} missing)", p.display())));
        }
        Dataset::load(&p)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
        if !path.exists() {
            return Err(Error::Usage(format!("checkpoint required: {} missing", path.display())));
        }
        Ok(Checkpoint::load(path)?)
    }

    /// Restores the frozen skill space of a discovery backend.
    pub fn load_skill_space(&self, cfg: &Config, backend: Backend, seed: u64) -> Result<SkillSpace> {
        let ck = Self::load_checkpoint(&self.discovery_checkpoint(backend))?;
        match backend {
            Backend::Vq => {
                let (mut m, _) = build_vq(cfg, seed)?;
                m.load_checkpoint(&ck)?;
                Ok(SkillSpace::from_vq(&m))
            }
            Backend::Contrastive => {
                let (mut m, _) = build_contrastive(cfg, seed)?;
                let c = m.load_checkpoint(&ck)?.ok_or_else(|| Error::Malformed("checkpoint lacks centroids".into()))?;
                SkillSpace::from_contrastive(&m, &c)
            }
        }
    }
}

const CELL: usize = 6;

fn index_maps(run: &RunDir, tag: &str, map: &crate::world::TileMap, ds: &Dataset, assignments: &[usize], k: usize) -> Result<()> {
    use crate::analysis::index_map;
    use crate::world::Heading;
    let poses: Vec<_> = ds.poses().collect();
    index_map(map, &poses, assignments, k, None, CELL).save_ppm(&run.figure(&format!("index_map_{tag}.ppm")))?;
    for h in [Heading::N, Heading::E, Heading::S, Heading::W] {
        let name = format!("index_map_{tag}_{}.ppm", ["n", "e", "s", "w"][h.index() as usize]);
        index_map(map, &poses, assignments, k, Some(h), CELL).save_ppm(&run.figure(&name))?;
    }
    Ok(())
}

/// `explore`: random-policy dataset plus the map it was collected on.
pub fn cmd_explore(run: &RunDir, cfg: &Config, seed: u64) -> Result<String> {
    run.snapshot_config(cfg)?;
    let ds = explore(cfg, seed)?;
    ds.save(&run.dataset())?;
    let env = Env::from_config(&cfg.env)?;
    std::fs::write(run.map(), env.map().to_text())?;
    Ok(format!("explore: {} episodes, {} observations -> {}", ds.episodes().len(), ds.len(), run.dataset().display()))
}

/// `discover-vq` / `discover-contrastive`: trains the backend, writes its
/// checkpoint, training log, and index maps.
pub fn cmd_discover(run: &RunDir, cfg: &Config, seed: u64, backend: Backend) -> Result<String> {
    run.snapshot_config(cfg)?;
    let ds = run.load_dataset()?;
    let (ck, csv, space, last) = match backend {
        Backend::Vq => {
            let (m, log) = train_vq(cfg, &ds, seed)?;
            let last = log.last().map_or(String::new(), |r| format!("recon {:.5}, perplexity {:.3}", r.recon, r.perplexity));
            (m.to_checkpoint()?, vq_log_csv(&log), SkillSpace::from_vq(&m), last)
        }
        Backend::Contrastive => {
            let (m, c, log) = train_contrastive(cfg, &ds, seed)?;
            let last = log.last().map_or(String::new(), |(_, l)| format!("loss {l:.5}, inertia {:.4}", c.inertia));
            (m.to_checkpoint(Some(&c))?, contrastive_log_csv(&log), SkillSpace::from_contrastive(&m, &c)?, last)
        }
    };
    ck.save(run.discovery_checkpoint(backend))?;
    std::fs::write(run.log(&format!("{}_log.csv", backend.name())), csv)?;
    let env = Env::from_config(&cfg.env)?;
    let a = space.assign_dataset(&ds, 256)?;
    index_maps(run, backend.name(), env.map(), &ds, &a, space.num_skills())?;
    Ok(format!("discover-{}: {last} -> {}", backend.name(), run.discovery_checkpoint(backend).display()))
}

/// `train-skills`: latent-conditioned policy over a trained skill space.
pub fn cmd_train_skills(run: &RunDir, cfg: &Config, seed: u64, backend: Backend) -> Result<String> {
    run.snapshot_config(cfg)?;
    let space = run.load_skill_space(cfg, backend, seed)?;
    let (policy, _, log) = train_agent(cfg, space, seed)?;
    policy.to_checkpoint()?.save(run.policy_checkpoint(backend))?;
    std::fs::write(run.log(&format!("train_log_{}.csv", backend.name())), train_log_csv(&log))?;
    let frames = log.last().map_or(0, |r| r.frame);
    Ok(format!("train-skills: {} episodes, {frames} frames -> {}", log.len(), run.policy_checkpoint(backend).display()))
}

fn load_policy(run: &RunDir, cfg: &Config, seed: u64, backend: Backend) -> Result<(QPolicy, GridSkillEnv)> {
    let space = run.load_skill_space(cfg, backend, seed)?;
    let env = agent_env(cfg, space)?;
    let ck = RunDir::load_checkpoint(&run.policy_checkpoint(backend))?;
    let mut policy = build_policy(cfg, &env, seed)?;
    policy.load_checkpoint(&ck)?;
    Ok((policy, env))
}

/// `evaluate`: reward curves and trajectory overlays for every skill.
pub fn cmd_evaluate(run: &RunDir, cfg: &Config, seed: u64, backend: Backend) -> Result<String> {
    use crate::analysis::{reward_curves_csv, trajectory_image};
    run.snapshot_config(cfg)?;
    let (policy, mut env) = load_policy(run, cfg, seed, backend)?;
    let report = evaluate_agent(cfg, &policy, &mut env, seed)?;
    std::fs::write(run.log(&format!("eval_rewards_{}.csv", backend.name())), reward_curves_csv(&report))?;
    let mut summary = Vec::new();
    for ev in &report.skills {
        let img = trajectory_image(env.env().map(), env.env().palette(), &ev.trajectories, CELL);
        img.save_ppm(&run.figure(&format!("trajectories_{}_k{}.ppm", backend.name(), ev.skill)))?;
        summary.push(format!("{:.2}", ev.final_mean(cfg.eval.final_window)));
    }
    Ok(format!("evaluate-{}: final mean reward per skill [{}]", backend.name(), summary.join(", ")))
}

/// `render`: index maps and per-skill reward heatmaps from a discovery checkpoint.
pub fn cmd_render(run: &RunDir, cfg: &Config, seed: u64, backend: Backend) -> Result<String> {
    use crate::analysis::reward_heatmap;
    run.snapshot_config(cfg)?;
    let space = run.load_skill_space(cfg, backend, seed)?;
    let ds = run.load_dataset()?;
    let env = Env::from_config(&cfg.env)?;
    let a = space.assign_dataset(&ds, 256)?;
    index_maps(run, backend.name(), env.map(), &ds, &a, space.num_skills())?;
    for k in 0..space.num_skills() {
        let field = crate::reward::reward_field(&a, ds.poses(), k);
        reward_heatmap(env.map(), &field, CELL).save_ppm(&run.figure(&format!("reward_{}_k{k}.ppm", backend.name())))?;
    }
    Ok(format!("render-{}: {} skills -> {}", backend.name(), space.num_skills(), run.root.join("figures").display()))
}
