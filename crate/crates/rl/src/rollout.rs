//! Batch rollout collection. Every transition carries the two rewards from
//! the training scheme: the (possibly wrapped) environment reward and the
//! discriminator-shaped reward stamped with the discriminator as it stood at
//! collection time.

use crate::env::EnvConfig;
use crate::replay::{SaPair, Trajectory, Transition};
use crate::seeding::{episode_rng, StreamId};
use crate::selfimit::Discriminator;
use divmin_core::GaussianPolicyParams;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub env_reward: f64,
    pub shaped_reward: f64,
    pub log_prob: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct RolloutTrajectory {
    pub steps: Vec<RolloutStep>,
    /// Sum of emitted (wrapped) rewards; what the replay ranks by.
    pub emitted_return: f64,
    /// Sum of the base environment's rewards; what reporting uses.
    pub raw_return: f64,
    pub succeeded: Option<bool>,
}

impl RolloutTrajectory {
    pub fn to_replay_trajectory(&self) -> Trajectory {
        Trajectory::from_transitions(
            self.steps
                .iter()
                .map(|s| Transition {
                    state: s.state.clone(),
                    action: s.action.clone(),
                    env_reward: s.env_reward,
                    done: s.done,
                })
                .collect(),
        )
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.state.clone()).collect()
    }
}

pub fn rollout_episode(
    env_cfg: &EnvConfig,
    policy: &GaussianPolicyParams,
    disc: Option<&Discriminator>,
    seed: u64,
    iteration: usize,
    episode: usize,
) -> RolloutTrajectory {
    let mut env = env_cfg.build(seed, iteration, episode);
    let mut action_rng = episode_rng(seed, iteration, episode, StreamId::ActionSample);
    let mut obs = env.reset();
    let mut steps = Vec::with_capacity(env.horizon());
    let mut emitted = 0.0;
    loop {
        let (action, log_prob) = policy.sample_with_log_prob(&obs, &mut action_rng);
        let shaped_reward = disc.map_or(0.0, |d| d.shaped_reward(&obs, &action));
        let result = env.step(&action);
        emitted += result.reward;
        steps.push(RolloutStep {
            state: obs,
            action,
            env_reward: result.reward,
            shaped_reward,
            log_prob,
            done: result.done,
        });
        obs = result.obs;
        if result.done {
            break;
        }
    }
    RolloutTrajectory {
        steps,
        emitted_return: emitted,
        raw_return: env.raw_return(),
        succeeded: env.succeeded(),
    }
}

/// Collects `episodes` trajectories, fanning out across workers. Results are
/// merged in episode-index order and each episode owns its rng streams, so
/// scheduling cannot affect the outcome.
pub fn collect_rollouts(
    env_cfg: &EnvConfig,
    policy: &GaussianPolicyParams,
    disc: Option<&Discriminator>,
    seed: u64,
    iteration: usize,
    episodes: usize,
) -> Vec<RolloutTrajectory> {
    (0..episodes)
        .into_par_iter()
        .map(|ep| rollout_episode(env_cfg, policy, disc, seed, iteration, ep))
        .collect()
}

/// All (state, action) pairs of a batch, flattened in episode-index order.
pub fn batch_pairs(batch: &[RolloutTrajectory]) -> Vec<SaPair> {
    batch
        .iter()
        .flat_map(|t| t.steps.iter().map(|s| SaPair::new(&s.state, &s.action)))
        .collect()
}
