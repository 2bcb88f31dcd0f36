//! Small hand-built environments for checking the learner against exact answers.
#![allow(dead_code)]

use rand::Rng;
use skillgrid::agent::{SkillEnv, StepOutcome};
use skillgrid::Result;

/// One state whose every transition pays `reward`; episodes end by time
/// limit only, so values bootstrap forever.
pub struct ConstantReward {
    pub reward: f32,
    pub horizon: usize,
    t: usize,
}

impl ConstantReward {
    pub fn new(reward: f32, horizon: usize) -> Self {
        Self { reward, horizon, t: 0 }
    }
}

impl SkillEnv for ConstantReward {
    fn num_actions(&self) -> usize {
        3
    }
    fn num_skills(&self) -> usize {
        1
    }
    fn feature_dim(&self) -> usize {
        1
    }
    fn skill_dim(&self) -> usize {
        1
    }
    fn reset<R: Rng>(&mut self, _rng: &mut R) -> Result<u32> {
        self.t = 0;
        Ok(0)
    }
    fn step(&mut self, _action: usize) -> Result<StepOutcome> {
        self.t += 1;
        Ok(StepOutcome { state: 0, done: self.t >= self.horizon, terminal: false })
    }
    fn features(&self, _state: u32) -> &[f32] {
        &[1.0]
    }
    fn skill_row(&self, _skill: usize) -> &[f32] {
        &[1.0]
    }
    fn reward(&self, _state: u32, _skill: usize) -> f32 {
        self.reward
    }
}

/// Three states in a row with actions left / stay / right; arriving in the
/// middle state pays 1.
pub struct ThreeStates {
    pub horizon: usize,
    state: u32,
    t: usize,
}

pub const THREE_FEATURES: [[f32; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl ThreeStates {
    pub fn new(horizon: usize) -> Self {
        Self { horizon, state: 0, t: 0 }
    }

    pub fn transition(state: u32, action: usize) -> u32 {
        match action {
            0 => state.saturating_sub(1),
            1 => state,
            _ => (state + 1).min(2),
        }
    }
}

impl SkillEnv for ThreeStates {
    fn num_actions(&self) -> usize {
        3
    }
    fn num_skills(&self) -> usize {
        1
    }
    fn feature_dim(&self) -> usize {
        3
    }
    fn skill_dim(&self) -> usize {
        1
    }
    fn reset<R: Rng>(&mut self, rng: &mut R) -> Result<u32> {
        self.t = 0;
        self.state = rng.random_range(0..3);
        Ok(self.state)
    }
    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        self.t += 1;
        self.state = Self::transition(self.state, action);
        Ok(StepOutcome { state: self.state, done: self.t >= self.horizon, terminal: false })
    }
    fn features(&self, state: u32) -> &[f32] {
        &THREE_FEATURES[state as usize]
    }
    fn skill_row(&self, _skill: usize) -> &[f32] {
        &[1.0]
    }
    fn reward(&self, state: u32, _skill: usize) -> f32 {
        f32::from(u8::from(state == 1))
    }
}

/// Greedy action per state from value iteration on [`ThreeStates`].
pub fn three_state_oracle(gamma: f64) -> [usize; 3] {
    let mut q = [[0.0f64; 3]; 3];
    for _ in 0..5000 {
        let v: Vec<f64> = q.iter().map(|r| r.iter().copied().fold(f64::MIN, f64::max)).collect();
        for s in 0..3u32 {
            for a in 0..3 {
                let n = ThreeStates::transition(s, a);
                q[s as usize][a] = f64::from(u8::from(n == 1)) + gamma * v[n as usize];
            }
        }
    }
    q.map(|r| (0..3).fold(0, |b, a| if r[a] > r[b] { a } else { b }))
}
