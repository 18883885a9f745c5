//! Single-agent training loops: plain PPO and self-imitation. One iteration
//! is rollout -> replay offers -> discriminator update -> interpolated PPO
//! update, with the shaped rewards stamped at collection time by the
//! discriminator as it stood when the batch was generated.

use crate::env::EnvConfig;
use crate::metrics::{mean_std, IterationMetrics};
use crate::ppo::{ppo_interpolated_update, PpoConfig};
use crate::replay::PriorityReplay;
use crate::rollout::{batch_pairs, collect_rollouts, rollout_episode, RolloutTrajectory};
use crate::seeding::{mix, stream_rng, StreamId};
use crate::selfimit::{js_estimate, train_discriminator, Discriminator};
use divmin_core::{AdamState, FlatParams, GaussianPolicyParams, MlpDims, MlpParams};
use std::time::Instant;

pub struct SingleAgentRun {
    pub policy: GaussianPolicyParams,
    pub v_env: MlpParams,
    pub v_shaped: MlpParams,
    pub disc: Option<Discriminator>,
    pub replay: Option<PriorityReplay>,
    pub metrics: Vec<IterationMetrics>,
}

pub(crate) struct AgentNets {
    pub policy: GaussianPolicyParams,
    pub policy_opt: AdamState,
    pub v_env: MlpParams,
    pub v_env_opt: AdamState,
    pub v_shaped: MlpParams,
    pub v_shaped_opt: AdamState,
}

/// Policy and both baselines are drawn from the PolicyInit stream in a fixed
/// order so every algorithm variant starts from identical parameters.
pub(crate) fn init_agent_nets(env: &EnvConfig, cfg: &PpoConfig, seed: u64) -> AgentNets {
    let mut rng = stream_rng(seed, StreamId::PolicyInit);
    let sdim = env.obs_dim();
    let adim = env.action_dim();
    let policy = GaussianPolicyParams::init_with_dims(
        MlpDims::standard(sdim, adim),
        cfg.initial_log_std,
        &mut rng,
    );
    let v_env = MlpParams::init(MlpDims::standard(sdim, 1), &mut rng);
    let v_shaped = MlpParams::init(MlpDims::standard(sdim, 1), &mut rng);
    let policy_opt = AdamState::new(policy.flat_len(), cfg.lr);
    let v_env_opt = AdamState::new(v_env.flat_len(), cfg.value_lr);
    let v_shaped_opt = AdamState::new(v_shaped.flat_len(), cfg.value_lr);
    AgentNets { policy, policy_opt, v_env, v_env_opt, v_shaped, v_shaped_opt }
}

pub(crate) fn batch_metrics(iteration: usize, batch: &[RolloutTrajectory]) -> (f64, f64, Option<f64>) {
    let raw: Vec<f64> = batch.iter().map(|t| t.raw_return).collect();
    let (mean, std) = mean_std(&raw);
    let successes: Vec<bool> = batch.iter().filter_map(|t| t.succeeded).collect();
    let success_rate = if successes.is_empty() {
        None
    } else {
        Some(successes.iter().filter(|s| **s).count() as f64 / successes.len() as f64)
    };
    let _ = iteration;
    (mean, std, success_rate)
}

fn train_single(env: &EnvConfig, cfg: &PpoConfig, seed: u64, self_imitation: bool) -> SingleAgentRun {
    cfg.validate().expect("invalid PPO config");
    let mut nets = init_agent_nets(env, cfg, seed);
    let nu = if self_imitation { cfg.nu } else { 0.0 };
    let cfg = PpoConfig { nu, ..cfg.clone() };

    let mut disc = self_imitation.then(|| {
        let mut rng = stream_rng(seed, StreamId::Discriminator);
        Discriminator::new(env.obs_dim(), env.action_dim(), cfg.disc_lr, &mut rng)
    });
    let mut replay = self_imitation.then(|| PriorityReplay::new(cfg.replay_capacity));
    let mut disc_rng = stream_rng(seed, StreamId::Discriminator);
    let mut update_rng = stream_rng(seed, StreamId::PolicyUpdate);

    let mut metrics = Vec::with_capacity(cfg.iterations);
    for t in 0..cfg.iterations {
        let start = Instant::now();
        let batch = collect_rollouts(env, &nets.policy, disc.as_ref(), seed, t, cfg.batch_episodes);

        let mut js = None;
        let mut threshold = None;
        if let (Some(disc), Some(replay)) = (disc.as_mut(), replay.as_mut()) {
            for traj in &batch {
                replay.offer(traj.to_replay_trajectory());
            }
            if replay.is_full() {
                threshold = Some(replay.admission_threshold());
            }
            let policy_pairs = batch_pairs(&batch);
            // Replay only stays empty if nothing was offered; skip then.
            if let Some(elite_pairs) = replay.sample_pairs(policy_pairs.len(), &mut disc_rng) {
                train_discriminator(
                    disc,
                    &policy_pairs,
                    &elite_pairs,
                    cfg.disc_epochs,
                    cfg.disc_minibatch,
                    &mut disc_rng,
                );
                js = Some(js_estimate(disc, &policy_pairs, &elite_pairs));
            }
        }

        let shaped_mean = self_imitation.then(|| {
            let n: usize = batch.iter().map(|t| t.steps.len()).sum();
            batch
                .iter()
                .flat_map(|t| t.steps.iter().map(|s| s.shaped_reward))
                .sum::<f64>()
                / n as f64
        });

        ppo_interpolated_update(
            &mut nets.policy,
            &mut nets.policy_opt,
            &mut nets.v_env,
            &mut nets.v_env_opt,
            &mut nets.v_shaped,
            &mut nets.v_shaped_opt,
            &batch,
            &cfg,
            &mut update_rng,
        );

        let (env_return_mean, env_return_std, success_rate) = batch_metrics(t, &batch);
        metrics.push(IterationMetrics {
            iteration: t,
            env_return_mean,
            env_return_std,
            success_rate,
            js_estimate: js,
            shaped_reward_mean: shaped_mean,
            replay_threshold: threshold,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    SingleAgentRun {
        policy: nets.policy,
        v_env: nets.v_env,
        v_shaped: nets.v_shaped,
        disc,
        replay,
        metrics,
    }
}

/// Algorithm 1: self-imitation with the nu-interpolated gradient.
pub fn train_self_imitation(env: &EnvConfig, cfg: &PpoConfig, seed: u64) -> SingleAgentRun {
    train_single(env, cfg, seed, true)
}

/// Plain PPO baseline: no replay, no discriminator, nu forced to 0.
pub fn train_ppo(env: &EnvConfig, cfg: &PpoConfig, seed: u64) -> SingleAgentRun {
    train_single(env, cfg, seed, false)
}

pub struct EvalSummary {
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: Option<f64>,
    pub states: Vec<Vec<Vec<f64>>>,
}

/// Rolls out a frozen policy on fresh episode seeds derived from `seed`.
pub fn evaluate_policy(
    env: &EnvConfig,
    policy: &GaussianPolicyParams,
    episodes: usize,
    seed: u64,
) -> EvalSummary {
    let eval_seed = mix(seed, StreamId::Eval as u64 + 0xE7A1);
    let batch: Vec<RolloutTrajectory> = (0..episodes)
        .map(|ep| rollout_episode(env, policy, None, eval_seed, 0, ep))
        .collect();
    let (mean_return, std_return, success_rate) = batch_metrics(0, &batch);
    EvalSummary {
        mean_return,
        std_return,
        success_rate,
        states: batch.iter().map(|t| t.states()).collect(),
    }
}
