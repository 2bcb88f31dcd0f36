//! Latent-conditioned double Q-learning with (optionally prioritized)
//! experience replay.
//!
//! The Q-network reads `concat(features(s), skill_row(k))`, where features
//! come from the frozen discovery encoder. Environments expose states as
//! integer ids into a feature table, so replay stores ids instead of frames.

use std::collections::HashMap;

use rand::Rng;
use skillgrid_nn::ops::huber;
use skillgrid_nn::{Adam, AdamConfig, Checkpoint, LayerSpec, Network, Real, Tensor};

use crate::config::AgentConfig;
use crate::error::{Error, Result};
use crate::reward::SkillSpace;
use crate::world::{Action, Env, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: u32,
    /// Episode over (time limit or terminal state).
    pub done: bool,
    /// Genuine terminal state: no bootstrapping past it.
    pub terminal: bool,
}

/// What the learner needs from a world: state features, skill rows, and the
/// intrinsic reward of arriving in a state.
pub trait SkillEnv {
    fn num_actions(&self) -> usize;
    fn num_skills(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn skill_dim(&self) -> usize;
    fn reset<R: Rng>(&mut self, rng: &mut R) -> Result<u32>;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
    fn features(&self, state: u32) -> &[f32];
    fn skill_row(&self, skill: usize) -> &[f32];
    fn reward(&self, state: u32, skill: usize) -> f32;
    fn pose(&self, _state: u32) -> Option<Pose> {
        None
    }
}

/// The gridworld seen through a frozen skill space. Observations are a
/// deterministic function of pose (and spawn, with coordinates), so each
/// distinct state is rendered and encoded once.
#[derive(Debug, Clone)]
pub struct GridSkillEnv {
    env: Env,
    space: SkillSpace,
    ids: HashMap<(i32, i32, u8, i32, i32), u32>,
    features: Vec<f32>,
    codes: Vec<u16>,
    poses: Vec<Pose>,
}

impl GridSkillEnv {
    pub fn new(env: Env, space: SkillSpace) -> Result<Self> {
        if space.requires_coords() && !env.params().coords {
            return Err(Error::Config("skill space needs coordinates; enable env.coords".into()));
        }
        Ok(Self { env, space, ids: HashMap::new(), features: Vec::new(), codes: Vec::new(), poses: Vec::new() })
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn space(&self) -> &SkillSpace {
        &self.space
    }

    /// Latent assigned to a state.
    pub fn code(&self, state: u32) -> usize {
        usize::from(self.codes[state as usize])
    }

    fn current(&mut self) -> Result<u32> {
        let s = *self.env.state().ok_or_else(|| Error::Usage("environment not reset".into()))?;
        let (tx, ty) = (s.x.floor() as i32, s.y.floor() as i32);
        let spawn = if self.env.params().coords { (s.spawn.0.floor() as i32, s.spawn.1.floor() as i32) } else { (0, 0) };
        let key = (tx, ty, s.heading.index(), spawn.0, spawn.1);
        if let Some(&id) = self.ids.get(&key) {
            return Ok(id);
        }
        let obs = self.env.observe();
        let z = self.space.embed_one(&obs.pixels, obs.coords.as_ref().map(|c| &c[..]))?;
        let id = self.poses.len() as u32;
        self.codes.push(self.space.assign_embedding(&z) as u16);
        self.features.extend_from_slice(&z);
        self.poses.push(obs.pose);
        self.ids.insert(key, id);
        Ok(id)
    }
}

impl SkillEnv for GridSkillEnv {
    fn num_actions(&self) -> usize {
        Action::COUNT
    }

    fn num_skills(&self) -> usize {
        self.space.num_skills()
    }

    fn feature_dim(&self) -> usize {
        self.space.embed_dim()
    }

    fn skill_dim(&self) -> usize {
        self.space.embed_dim()
    }

    fn reset<R: Rng>(&mut self, rng: &mut R) -> Result<u32> {
        self.env.reset(rng)?;
        self.current()
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        let a = Action::from_index(action as u8).ok_or_else(|| Error::Usage(format!("unknown action {action}")))?;
        let done = self.env.advance(a)?;
        Ok(StepOutcome { state: self.current()?, done, terminal: false })
    }

    fn features(&self, state: u32) -> &[f32] {
        let d = self.space.embed_dim();
        &self.features[state as usize * d..(state as usize + 1) * d]
    }

    fn skill_row(&self, skill: usize) -> &[f32] {
        self.space.skill_row(skill)
    }

    fn reward(&self, state: u32, skill: usize) -> f32 {
        f32::from(u8::from(self.code(state) == skill))
    }

    fn pose(&self, state: u32) -> Option<Pose> {
        Some(self.poses[state as usize])
    }
}

/// Linear decay from 1 at frame 0 to `final_epsilon` at `final_frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub final_epsilon: f64,
    pub final_frame: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, frame: u64) -> f64 {
        if frame >= self.final_frame {
            return self.final_epsilon;
        }
        1.0 + (self.final_epsilon - 1.0) * frame as f64 / self.final_frame as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: u32,
    pub skill: u16,
    pub action: u8,
    pub reward: f32,
    pub next: u32,
    pub terminal: bool,
}

/// Binary sum tree over leaf priorities, grown by doubling.
#[derive(Debug, Clone, Default)]
struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn ensure(&mut self, n: usize) {
        if n <= self.leaves {
            return;
        }
        let leaves = n.next_power_of_two().max(1);
        let mut nodes = vec![0.0; 2 * leaves];
        if self.leaves > 0 {
            nodes[leaves..leaves + self.leaves].copy_from_slice(&self.nodes[self.leaves..]);
        }
        for i in (1..leaves).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        self.leaves = leaves;
        self.nodes = nodes;
    }

    fn set(&mut self, i: usize, p: f64) {
        let mut j = i + self.leaves;
        self.nodes[j] = p;
        while j > 1 {
            j /= 2;
            self.nodes[j] = self.nodes[2 * j] + self.nodes[2 * j + 1];
        }
    }

    fn get(&self, i: usize) -> f64 {
        self.nodes[i + self.leaves]
    }

    fn total(&self) -> f64 {
        self.nodes.get(1).copied().unwrap_or(0.0)
    }

    /// Leaf whose cumulative interval contains `u ∈ [0, total)`.
    fn find(&self, mut u: f64) -> usize {
        let mut j = 1;
        while j < self.leaves {
            if u < self.nodes[2 * j] || self.nodes[2 * j + 1] <= 0.0 {
                j *= 2;
            } else {
                u -= self.nodes[2 * j];
                j = 2 * j + 1;
            }
        }
        j - self.leaves
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBatch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    /// Importance weights, max-normalized within the batch.
    pub weights: Vec<f32>,
}

/// Ring buffer with oldest-first eviction and proportional prioritization.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
    pub prioritized: bool,
    pub alpha: f64,
    pub priority_eps: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, prioritized: bool, alpha: f64, priority_eps: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::new(), next: 0, tree: SumTree::default(), max_priority: 1.0, prioritized, alpha, priority_eps })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Transition] {
        &self.items
    }

    /// Stores a transition with the current maximum priority.
    pub fn push(&mut self, t: Transition) {
        let i = self.next;
        if i == self.items.len() {
            self.items.push(t);
            self.tree.ensure(self.items.len());
        } else {
            self.items[i] = t;
        }
        self.tree.set(i, self.max_priority.powf(self.alpha));
        self.next = (self.next + 1) % self.capacity;
    }

    /// Sampling probability of slot `i`.
    pub fn probability(&self, i: usize) -> f64 {
        if self.prioritized {
            self.tree.get(i) / self.tree.total()
        } else {
            1.0 / self.items.len() as f64
        }
    }

    /// Draws `n` transitions. Prioritized sampling is stratified over `n`
    /// equal slices of the priority mass.
    pub fn sample(&self, n: usize, beta: f64, min_size: usize, rng: &mut impl Rng) -> Result<ReplayBatch> {
        if self.items.len() < min_size.max(1) {
            return Err(Error::Usage(format!("replay holds {} transitions, sampling needs {min_size}", self.items.len())));
        }
        let len = self.items.len();
        let indices: Vec<usize> = if self.prioritized {
            let seg = self.tree.total() / n as f64;
            (0..n).map(|i| self.tree.find((i as f64 + rng.random::<f64>()) * seg).min(len - 1)).collect()
        } else {
            (0..n).map(|_| rng.random_range(0..len)).collect()
        };
        let raw: Vec<f64> = indices.iter().map(|&i| (len as f64 * self.probability(i)).powf(-beta)).collect();
        let max = raw.iter().copied().fold(0.0, f64::max);
        Ok(ReplayBatch {
            transitions: indices.iter().map(|&i| self.items[i]).collect(),
            weights: raw.iter().map(|w| (w / max) as f32).collect(),
            indices,
        })
    }

    /// Sets priority `|δ| + ε` for the sampled slots.
    pub fn update(&mut self, indices: &[usize], td_errors: &[f32]) {
        for (&i, &td) in indices.iter().zip(td_errors) {
            let p = f64::from(td.abs()) + self.priority_eps;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p.powf(self.alpha));
        }
    }
}

/// `r` for terminal transitions, else `r + γ · Q_target(s′, argmax_a Q_online(s′, a))`.
pub fn td_target(reward: f32, terminal: bool, gamma: f64, q_online_next: &[f32], q_target_next: &[f32]) -> f32 {
    if terminal {
        return reward;
    }
    let a = argmax(q_online_next);
    (f64::from(reward) + gamma * f64::from(q_target_next[a])) as f32
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax<T: PartialOrd + Copy>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Importance-weighted mean Huber loss of `Q(s, a)` against fixed targets.
/// Zeroes, then fills, the online gradients; returns the loss and TD errors.
pub fn q_forward_backward<T: Real>(
    online: &mut Network<T>,
    inputs: &Tensor<T>,
    actions: &[usize],
    targets: &[T],
    weights: &[T],
) -> Result<(T, Vec<T>)> {
    online.zero_grad();
    let q = online.forward(inputs)?;
    let a_n = q.item_len();
    let pred: Vec<T> = actions.iter().enumerate().map(|(i, &a)| q.row(i)[a]).collect();
    let (loss, g) = huber(&pred, targets, Some(weights));
    let mut grad = Tensor::zeros(q.shape().to_vec());
    for (i, (&a, &gi)) in actions.iter().zip(&g).enumerate() {
        grad.data_mut()[i * a_n + a] = gi;
    }
    online.backward_params(&grad)?;
    let td = pred.iter().zip(targets).map(|(&p, &t)| p - t).collect();
    Ok((loss, td))
}

pub fn q_network_specs(input: usize, hidden: usize, actions: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense { inputs: input, outputs: hidden },
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: hidden, outputs: hidden },
        LayerSpec::Relu,
        LayerSpec::Dense { inputs: hidden, outputs: actions },
    ]
}

#[derive(Debug, Clone)]
pub struct QPolicy {
    pub online: Network<f32>,
    pub target: Network<f32>,
    pub gamma: f64,
    feature_dim: usize,
}

impl QPolicy {
    pub fn new(feature_dim: usize, skill_dim: usize, hidden: usize, actions: usize, gamma: f64, rng: &mut impl Rng) -> Result<Self> {
        let specs = q_network_specs(feature_dim + skill_dim, hidden, actions);
        let online = Network::new("policy.online", &[feature_dim + skill_dim], specs.clone(), rng)?;
        let mut target = Network::new("policy.target", &[feature_dim + skill_dim], specs, rng)?;
        target.copy_from(&online)?;
        Ok(Self { online, target, gamma, feature_dim })
    }

    pub fn for_env<E: SkillEnv>(env: &E, hidden: usize, gamma: f64, rng: &mut impl Rng) -> Result<Self> {
        Self::new(env.feature_dim(), env.skill_dim(), hidden, env.num_actions(), gamma, rng)
    }

    pub fn input_dim(&self) -> usize {
        self.online.input_shape()[0]
    }

    fn input<E: SkillEnv>(&self, env: &E, state: u32, skill: usize, out: &mut Vec<f32>) {
        out.extend_from_slice(env.features(state));
        out.extend_from_slice(env.skill_row(skill));
    }

    fn batch<E: SkillEnv>(&self, env: &E, pairs: impl Iterator<Item = (u32, usize)>) -> Tensor<f32> {
        let mut data = Vec::new();
        for (s, k) in pairs {
            self.input(env, s, k, &mut data);
        }
        let n = data.len() / self.input_dim();
        Tensor::new(vec![n, self.input_dim()], data).expect("input dims")
    }

    pub fn q_values<E: SkillEnv>(&self, env: &E, state: u32, skill: usize) -> Result<Vec<f32>> {
        debug_assert_eq!(env.feature_dim(), self.feature_dim);
        Ok(self.online.infer(&self.batch(env, std::iter::once((state, skill))))?.into_data())
    }

    /// ε-greedy: uniform with probability `epsilon`, else the greedy action.
    pub fn act<E: SkillEnv>(&self, env: &E, state: u32, skill: usize, epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
        if rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..env.num_actions()));
        }
        Ok(argmax(&self.q_values(env, state, skill)?))
    }

    /// Double-Q targets for a batch of transitions.
    pub fn targets<E: SkillEnv>(&self, env: &E, batch: &[Transition]) -> Result<Vec<f32>> {
        let next = self.batch(env, batch.iter().map(|t| (t.next, usize::from(t.skill))));
        let qo = self.online.infer(&next)?;
        let qt = self.target.infer(&next)?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| td_target(t.reward, t.terminal, self.gamma, qo.row(i), qt.row(i)))
            .collect())
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.online)?;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        ck.push_network(&self.online)?;
        ck.push_network(&self.target)?;
        Ok(ck)
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        ck.load_network(&mut self.online)?;
        ck.load_network(&mut self.target)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub frame: u64,
    pub episode: u64,
    pub skill: usize,
    pub episode_return: f64,
    /// Mean loss of the episode's gradient steps; NaN when none ran.
    pub loss: f64,
    pub epsilon: f64,
}

/// Runs latent-conditioned training for `cfg.total_frames` frames: one skill
/// per episode, ε-greedy acting, a gradient step every `update_interval`
/// frames once replay holds `replay_start` transitions, and target syncs at
/// multiples of the target interval.
pub fn train_skills<E: SkillEnv>(env: &mut E, cfg: &AgentConfig, rng: &mut impl Rng) -> Result<(QPolicy, Vec<TrainLogRow>)> {
    train_skills_observed(env, cfg, rng, |_, _| {})
}

/// [`train_skills`] that hands the policy to `observe` after every frame.
pub fn train_skills_observed<E: SkillEnv>(
    env: &mut E,
    cfg: &AgentConfig,
    rng: &mut impl Rng,
    mut observe: impl FnMut(u64, &QPolicy),
) -> Result<(QPolicy, Vec<TrainLogRow>)> {
    let scaled = cfg.scaled();
    let mut policy = QPolicy::for_env(env, cfg.hidden, cfg.gamma, rng)?;
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate).with_eps(cfg.adam_eps));
    let mut replay = ReplayBuffer::new(scaled.replay_capacity, cfg.prioritized, cfg.priority_alpha, cfg.priority_eps)?;
    let schedule = EpsilonSchedule { final_epsilon: cfg.final_epsilon, final_frame: scaled.final_exploration_frames };
    let mut log = Vec::new();
    let mut frame = 0u64;
    let mut episode = 0u64;
    while frame < cfg.total_frames {
        let skill = rng.random_range(0..env.num_skills());
        let mut state = env.reset(rng)?;
        let (mut ret, mut loss_sum, mut loss_n) = (0.0, 0.0, 0u32);
        loop {
            let eps = schedule.value(frame);
            let action = policy.act(env, state, skill, eps, rng)?;
            let out = env.step(action)?;
            let reward = env.reward(out.state, skill);
            ret += f64::from(reward);
            replay.push(Transition {
                state,
                skill: skill as u16,
                action: action as u8,
                reward,
                next: out.state,
                terminal: out.terminal,
            });
            frame += 1;
            if replay.len() >= scaled.replay_start && frame % cfg.update_interval == 0 {
                let beta = cfg.priority_beta + (1.0 - cfg.priority_beta) * (frame as f64 / cfg.total_frames as f64).min(1.0);
                let batch = replay.sample(cfg.batch_size, beta, scaled.replay_start, rng)?;
                let targets = policy.targets(env, &batch.transitions)?;
                let inputs = policy.batch(env, batch.transitions.iter().map(|t| (t.state, usize::from(t.skill))));
                let actions: Vec<usize> = batch.transitions.iter().map(|t| usize::from(t.action)).collect();
                let (loss, td) = q_forward_backward(&mut policy.online, &inputs, &actions, &targets, &batch.weights)?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!("non-finite Q loss at frame {frame}")));
                }
                adam.step(&mut policy.online.params_mut()).map_err(|e| Error::Training(e.to_string()))?;
                replay.update(&batch.indices, &td);
                loss_sum += f64::from(loss);
                loss_n += 1;
            }
            if frame % scaled.target_update_interval == 0 {
                policy.sync_target()?;
            }
            observe(frame, &policy);
            state = out.state;
            if out.done || frame >= cfg.total_frames {
                break;
            }
        }
        log.push(TrainLogRow {
            frame,
            episode,
            skill,
            episode_return: ret,
            loss: if loss_n > 0 { loss_sum / f64::from(loss_n) } else { f64::NAN },
            epsilon: schedule.value(frame),
        });
        episode += 1;
    }
    Ok((policy, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkillEval {
    pub skill: usize,
    /// Poses visited per episode, starting with the reset pose.
    pub trajectories: Vec<Vec<Pose>>,
    /// Per-episode, per-step rewards.
    pub rewards: Vec<Vec<u8>>,
}

impl SkillEval {
    /// Mean reward across episodes at each step.
    pub fn mean_curve(&self) -> Vec<f64> {
        let steps = self.rewards.iter().map(Vec::len).max().unwrap_or(0);
        (0..steps)
            .map(|t| {
                let vals: Vec<f64> = self.rewards.iter().filter_map(|r| r.get(t)).map(|&v| f64::from(v)).collect();
                vals.iter().sum::<f64>() / vals.len() as f64
            })
            .collect()
    }

    /// Mean of the last `window` points of the mean curve.
    pub fn final_mean(&self, window: usize) -> f64 {
        let c = self.mean_curve();
        let tail = &c[c.len().saturating_sub(window)..];
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub skills: Vec<SkillEval>,
}

/// Rolls `episodes` full episodes per skill at exploration rate `epsilon`.
pub fn evaluate<E: SkillEnv>(
    policy: &QPolicy,
    env: &mut E,
    skills: &[usize],
    episodes: usize,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<EvalReport> {
    let mut out = Vec::with_capacity(skills.len());
    for &skill in skills {
        if skill >= env.num_skills() {
            return Err(Error::Usage(format!("skill {skill} out of range")));
        }
        let mut ev = SkillEval { skill, trajectories: Vec::new(), rewards: Vec::new() };
        for _ in 0..episodes {
            let mut state = env.reset(rng)?;
            let mut poses: Vec<Pose> = env.pose(state).into_iter().collect();
            let mut rewards = Vec::new();
            loop {
                let a = policy.act(env, state, skill, epsilon, rng)?;
                let o = env.step(a)?;
                rewards.push(env.reward(o.state, skill) as u8);
                poses.extend(env.pose(o.state));
                state = o.state;
                if o.done {
                    break;
                }
            }
            ev.trajectories.push(poses);
            ev.rewards.push(rewards);
        }
        out.push(ev);
    }
    Ok(EvalReport { skills: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn epsilon_endpoints_and_midpoint() {
        let s = EpsilonSchedule { final_epsilon: 0.01, final_frame: 350_000 };
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(175_000) - 0.505).abs() < 1e-12);
        assert_eq!(s.value(350_000), 0.01);
        assert_eq!(s.value(10_000_000), 0.01);
    }

    #[test]
    fn td_target_cases() {
        assert_eq!(td_target(1.0, true, 0.99, &[5.0], &[5.0]), 1.0);
        assert_eq!(td_target(1.0, false, 0.0, &[5.0, 1.0], &[3.0, 2.0]), 1.0);
        // online argmax picks action 1; the target network supplies its value 2.
        assert!((td_target(1.0, false, 0.99, &[0.0, 9.0], &[7.0, 2.0]) - 2.98).abs() < 1e-6);
    }

    fn t(i: u32) -> Transition {
        Transition { state: i, skill: 0, action: 0, reward: 0.0, next: i, terminal: false }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut r = ReplayBuffer::new(2, true, 0.6, 1e-6).unwrap();
        for i in 0..3 {
            r.push(t(i));
        }
        let states: Vec<u32> = r.items().iter().map(|t| t.state).collect();
        assert_eq!(states, vec![2, 1]);
    }

    #[test]
    fn sampling_before_start_is_usage_error() {
        let mut r = ReplayBuffer::new(10, true, 0.6, 1e-6).unwrap();
        r.push(t(0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(r.sample(4, 0.4, 5, &mut rng), Err(Error::Usage(_))));
    }

    #[test]
    fn alpha_zero_is_uniform_with_unit_weights() {
        let mut r = ReplayBuffer::new(8, true, 0.0, 1e-6).unwrap();
        for i in 0..8 {
            r.push(t(i));
        }
        r.update(&[0, 3], &[10.0, 0.1]);
        for i in 0..8 {
            assert!((r.probability(i) - 0.125).abs() < 1e-12);
        }
        let b = r.sample(16, 0.4, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(b.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn priorities_skew_sampling() {
        let mut r = ReplayBuffer::new(4, true, 1.0, 0.0).unwrap();
        for i in 0..4 {
            r.push(t(i));
        }
        r.update(&[0, 1, 2, 3], &[1.0, 1.0, 1.0, 7.0]);
        assert!((r.probability(3) - 0.7).abs() < 1e-12);
        let b = r.sample(1000, 1.0, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let hits = b.indices.iter().filter(|&&i| i == 3).count();
        assert!((650..=750).contains(&hits), "{hits}");
        assert!(b.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn argmax_ties_pick_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
