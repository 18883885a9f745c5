//! Desk-scale environments: the two-region maze with a dividing wall, a
//! two-armed Bernoulli bandit, and a one-dimensional sparse chain, plus the
//! episodic and noisy reward wrappers and visitation instrumentation.

use crate::seeding::{episode_rng, StreamId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A single-owner episodic environment. `step` after `done` is a contract
/// violation and panics.
pub trait Env: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> StepResult;

    /// Undiscounted sum of the *base* environment's rewards this episode,
    /// before any wrapper reshapes them. Used for reporting.
    fn raw_return(&self) -> f64;

    /// Env-specific notion of success for the current episode, if it has one.
    fn succeeded(&self) -> Option<bool> {
        None
    }
}

// ---------------------------------------------------------------------------
// Maze
// ---------------------------------------------------------------------------

/// Unit-square arena split by a vertical wall with a gap near the top. The
/// red disc (reward 1/step) sits on the start side; the green disc (reward
/// 10/step) is reachable only through the gap.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MazeSpec {
    pub wall_x: f64,
    pub wall_y_top: f64,
    pub start: [f64; 2],
    pub start_noise: f64,
    pub red_center: [f64; 2],
    pub red_radius: f64,
    pub red_reward: f64,
    pub green_center: [f64; 2],
    pub green_radius: f64,
    pub green_reward: f64,
    pub max_speed: f64,
    pub motion_noise: f64,
    pub horizon: usize,
}

impl Default for MazeSpec {
    fn default() -> Self {
        MazeSpec {
            wall_x: 0.5,
            wall_y_top: 0.7,
            start: [0.25, 0.25],
            start_noise: 0.01,
            red_center: [0.25, 0.6],
            red_radius: 0.1,
            red_reward: 1.0,
            green_center: [0.75, 0.25],
            green_radius: 0.1,
            green_reward: 10.0,
            max_speed: 0.05,
            motion_noise: 0.005,
            horizon: 250,
        }
    }
}

pub struct MazeEnv {
    spec: MazeSpec,
    pos: [f64; 2],
    t: usize,
    done: bool,
    raw_return: f64,
    reached_green: bool,
    rng: ChaCha8Rng,
}

impl MazeEnv {
    pub fn new(spec: MazeSpec, rng: ChaCha8Rng) -> Self {
        MazeEnv {
            spec,
            pos: [0.0, 0.0],
            t: 0,
            done: true,
            raw_return: 0.0,
            reached_green: false,
            rng,
        }
    }

    pub fn position(&self) -> [f64; 2] {
        self.pos
    }

    fn in_disc(p: [f64; 2], c: [f64; 2], r: f64) -> bool {
        let dx = p[0] - c[0];
        let dy = p[1] - c[1];
        dx * dx + dy * dy <= r * r
    }

    /// Moves from `from` toward `to`, blocking at the wall plane if the
    /// segment crosses it below the gap. The agent slides along the wall: x
    /// is pinned a hair onto the starting side, y keeps its attempted value.
    fn resolve_wall(&self, from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
        let w = self.spec.wall_x;
        let crosses = (from[0] - w).signum() != (to[0] - w).signum() && from[0] != to[0];
        if !crosses {
            return to;
        }
        let t = (w - from[0]) / (to[0] - from[0]);
        if !(0.0..=1.0).contains(&t) {
            return to;
        }
        let y_cross = from[1] + t * (to[1] - from[1]);
        if y_cross > self.spec.wall_y_top {
            return to; // passes above the wall, through the gap
        }
        let side = if from[0] < w { -1e-9 } else { 1e-9 };
        [w + side, to[1]]
    }
}

impl Env for MazeEnv {
    fn obs_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn reset(&mut self) -> Vec<f64> {
        let nx: f64 = self.rng.sample(StandardNormal);
        let ny: f64 = self.rng.sample(StandardNormal);
        self.pos = [
            (self.spec.start[0] + self.spec.start_noise * nx).clamp(0.0, 1.0),
            (self.spec.start[1] + self.spec.start_noise * ny).clamp(0.0, 1.0),
        ];
        self.t = 0;
        self.done = false;
        self.raw_return = 0.0;
        self.reached_green = false;
        self.pos.to_vec()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        assert!(!self.done, "env_step called after episode end");
        assert_eq!(action.len(), 2, "maze action must be 2-dim");
        let v = self.spec.max_speed;
        let nx: f64 = self.rng.sample(StandardNormal);
        let ny: f64 = self.rng.sample(StandardNormal);
        let target = [
            (self.pos[0] + action[0].clamp(-v, v) + self.spec.motion_noise * nx).clamp(0.0, 1.0),
            (self.pos[1] + action[1].clamp(-v, v) + self.spec.motion_noise * ny).clamp(0.0, 1.0),
        ];
        self.pos = self.resolve_wall(self.pos, target);

        let reward = if Self::in_disc(self.pos, self.spec.green_center, self.spec.green_radius) {
            self.reached_green = true;
            self.spec.green_reward
        } else if Self::in_disc(self.pos, self.spec.red_center, self.spec.red_radius) {
            self.spec.red_reward
        } else {
            0.0
        };
        self.raw_return += reward;
        self.t += 1;
        self.done = self.t >= self.spec.horizon;
        StepResult { obs: self.pos.to_vec(), reward, done: self.done }
    }

    fn raw_return(&self) -> f64 {
        self.raw_return
    }

    fn succeeded(&self) -> Option<bool> {
        Some(self.reached_green)
    }
}

// ---------------------------------------------------------------------------
// Bandit
// ---------------------------------------------------------------------------

/// Two-armed Bernoulli bandit with success probabilities p and p + eps.
/// One step per episode; the (continuous) action's sign picks the arm:
/// negative -> arm 1, non-negative -> arm 2 (the better one).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BanditSpec {
    pub p: f64,
    pub eps: f64,
}

impl Default for BanditSpec {
    fn default() -> Self {
        BanditSpec { p: 0.45, eps: 0.1 }
    }
}

pub struct BanditEnv {
    spec: BanditSpec,
    done: bool,
    raw_return: f64,
    rng: ChaCha8Rng,
}

impl BanditEnv {
    pub fn new(spec: BanditSpec, rng: ChaCha8Rng) -> Self {
        assert!(
            spec.p >= 0.0 && spec.p + spec.eps <= 1.0 && spec.eps >= 0.0,
            "bandit probabilities must satisfy 0 <= p <= p+eps <= 1"
        );
        BanditEnv { spec, done: true, raw_return: 0.0, rng }
    }
}

impl Env for BanditEnv {
    fn obs_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        1
    }

    fn reset(&mut self) -> Vec<f64> {
        self.done = false;
        self.raw_return = 0.0;
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        assert!(!self.done, "env_step called after episode end");
        let p = if action[0] >= 0.0 { self.spec.p + self.spec.eps } else { self.spec.p };
        let reward = if self.rng.gen::<f64>() < p { 1.0 } else { 0.0 };
        self.raw_return = reward;
        self.done = true;
        StepResult { obs: vec![0.0], reward, done: true }
    }

    fn raw_return(&self) -> f64 {
        self.raw_return
    }
}

// ---------------------------------------------------------------------------
// Sparse chain
// ---------------------------------------------------------------------------

/// One-dimensional navigation: position starts at 0, each step moves by the
/// action (clamped to +-max_step), reward is goal_reward per step spent at or
/// beyond the goal distance minus a quadratic action cost. Reaching the goal
/// requires a long streak of aligned actions, which makes the reward sparse.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SparseChainSpec {
    pub goal_distance: f64,
    pub goal_reward: f64,
    pub action_cost: f64,
    pub max_step: f64,
    pub horizon: usize,
}

impl Default for SparseChainSpec {
    fn default() -> Self {
        SparseChainSpec {
            goal_distance: 1.0,
            goal_reward: 1.0,
            action_cost: 0.001,
            max_step: 0.05,
            horizon: 100,
        }
    }
}

pub struct ChainEnv {
    spec: SparseChainSpec,
    x: f64,
    t: usize,
    done: bool,
    raw_return: f64,
    reached: bool,
}

impl ChainEnv {
    pub fn new(spec: SparseChainSpec) -> Self {
        ChainEnv { spec, x: 0.0, t: 0, done: true, raw_return: 0.0, reached: false }
    }
}

impl Env for ChainEnv {
    fn obs_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn reset(&mut self) -> Vec<f64> {
        self.x = 0.0;
        self.t = 0;
        self.done = false;
        self.raw_return = 0.0;
        self.reached = false;
        vec![0.0]
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        assert!(!self.done, "env_step called after episode end");
        let a = action[0].clamp(-self.spec.max_step, self.spec.max_step);
        self.x += a;
        let mut reward = -self.spec.action_cost * a * a;
        if self.x >= self.spec.goal_distance {
            reward += self.spec.goal_reward;
            self.reached = true;
        }
        self.raw_return += reward;
        self.t += 1;
        self.done = self.t >= self.spec.horizon;
        StepResult { obs: vec![self.x], reward, done: self.done }
    }

    fn raw_return(&self) -> f64 {
        self.raw_return
    }

    fn succeeded(&self) -> Option<bool> {
        Some(self.reached)
    }
}

// ---------------------------------------------------------------------------
// Reward wrappers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    Dense,
    Episodic,
    Noisy,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RewardWrapperConfig {
    pub mode: RewardMode,
    /// Masking probability; only read in noisy mode.
    pub p_m: f64,
}

impl Default for RewardWrapperConfig {
    fn default() -> Self {
        RewardWrapperConfig { mode: RewardMode::Dense, p_m: 0.0 }
    }
}

/// Accumulates per-step rewards and emits the sum at the final step only.
pub struct Episodic {
    inner: Box<dyn Env>,
    acc: f64,
}

pub fn wrap_episodic(inner: Box<dyn Env>) -> Box<dyn Env> {
    Box::new(Episodic { inner, acc: 0.0 })
}

impl Env for Episodic {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.acc = 0.0;
        self.inner.reset()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let mut r = self.inner.step(action);
        self.acc += r.reward;
        r.reward = if r.done { self.acc } else { 0.0 };
        r
    }

    fn raw_return(&self) -> f64 {
        self.inner.raw_return()
    }

    fn succeeded(&self) -> Option<bool> {
        self.inner.succeeded()
    }
}

/// Masks each timestep's reward independently with probability p_m; masks are
/// redrawn for every step of every episode.
pub struct Noisy {
    inner: Box<dyn Env>,
    p_m: f64,
    rng: ChaCha8Rng,
}

pub fn wrap_noisy(inner: Box<dyn Env>, p_m: f64, rng: ChaCha8Rng) -> Box<dyn Env> {
    assert!((0.0..=1.0).contains(&p_m), "p_m must be in [0,1]");
    Box::new(Noisy { inner, p_m, rng })
}

impl Env for Noisy {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.inner.reset()
    }

    fn step(&mut self, action: &[f64]) -> StepResult {
        let mut r = self.inner.step(action);
        if self.rng.gen::<f64>() < self.p_m {
            r.reward = 0.0;
        }
        r
    }

    fn raw_return(&self) -> f64 {
        self.inner.raw_return()
    }

    fn succeeded(&self) -> Option<bool> {
        self.inner.succeeded()
    }
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvKind {
    Maze(MazeSpec),
    Bandit(BanditSpec),
    Chain(SparseChainSpec),
}

impl EnvKind {
    pub fn obs_dim(&self) -> usize {
        match self {
            EnvKind::Maze(_) => 2,
            EnvKind::Bandit(_) | EnvKind::Chain(_) => 1,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            EnvKind::Maze(_) => 2,
            EnvKind::Bandit(_) | EnvKind::Chain(_) => 1,
        }
    }
}

/// Everything needed to build a fresh, seeded environment for one episode.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub wrapper: RewardWrapperConfig,
}

impl EnvConfig {
    pub fn obs_dim(&self) -> usize {
        self.kind.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.kind.action_dim()
    }

    pub fn horizon(&self) -> usize {
        match &self.kind {
            EnvKind::Maze(s) => s.horizon,
            EnvKind::Bandit(_) => 1,
            EnvKind::Chain(s) => s.horizon,
        }
    }

    /// Builds the env for (agent seed, iteration, episode), with independent
    /// rng streams for base-env noise and wrapper masking.
    pub fn build(&self, seed: u64, iteration: usize, episode: usize) -> Box<dyn Env> {
        let env_rng = episode_rng(seed, iteration, episode, StreamId::EnvNoise);
        let base: Box<dyn Env> = match &self.kind {
            EnvKind::Maze(s) => Box::new(MazeEnv::new(s.clone(), env_rng)),
            EnvKind::Bandit(s) => Box::new(BanditEnv::new(s.clone(), env_rng)),
            EnvKind::Chain(s) => Box::new(ChainEnv::new(s.clone())),
        };
        match self.wrapper.mode {
            RewardMode::Dense => base,
            RewardMode::Episodic => wrap_episodic(base),
            RewardMode::Noisy => wrap_noisy(
                base,
                self.wrapper.p_m,
                episode_rng(seed, iteration, episode, StreamId::WrapperNoise),
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Visitation instrumentation
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
#[error("visitation_histogram: no states supplied")]
pub struct EmptyTrajectories;

/// Normalized occupancy over a `grid x grid` lattice covering [lo, hi]^2 on
/// the first two state dimensions. Row index = y cell, column index = x cell.
pub fn visitation_histogram(
    trajectories: &[Vec<Vec<f64>>],
    grid: usize,
    lo: [f64; 2],
    hi: [f64; 2],
) -> Result<Vec<Vec<f64>>, EmptyTrajectories> {
    let total: usize = trajectories.iter().map(|t| t.len()).sum();
    if total == 0 {
        return Err(EmptyTrajectories);
    }
    let mut cells = vec![vec![0.0; grid]; grid];
    let cell_of = |v: f64, lo: f64, hi: f64| -> usize {
        let f = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        ((f * grid as f64) as usize).min(grid - 1)
    };
    for traj in trajectories {
        for s in traj {
            let cx = cell_of(s[0], lo[0], hi[0]);
            let cy = cell_of(*s.get(1).unwrap_or(&0.0), lo[1], hi[1]);
            cells[cy][cx] += 1.0;
        }
    }
    let inv = 1.0 / total as f64;
    for row in &mut cells {
        for c in row {
            *c *= inv;
        }
    }
    Ok(cells)
}

/// Fraction of states lying inside the disc (center, radius).
pub fn region_mass(trajectories: &[Vec<Vec<f64>>], center: [f64; 2], radius: f64) -> f64 {
    let mut inside = 0usize;
    let mut total = 0usize;
    for traj in trajectories {
        for s in traj {
            let dx = s[0] - center[0];
            let dy = s.get(1).unwrap_or(&0.0) - center[1];
            total += 1;
            if dx * dx + dy * dy <= radius * radius {
                inside += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}
