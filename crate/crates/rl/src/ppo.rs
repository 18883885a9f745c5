//! GAE advantage estimation and the clipped-surrogate policy update with the
//! nu-interpolated shaped-reward stream: two reward streams, two baselines,
//! one mixed gradient per minibatch.

use crate::rollout::RolloutTrajectory;
use divmin_core::{AdamState, FlatParams, GaussianPolicyParams, MlpGrads, MlpParams, PolicyGrads};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lam: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub value_lr: f64,
    /// Weight on the shaped-reward gradient; 0 is plain PPO, 1 is pure
    /// divergence minimization.
    pub nu: f64,
    pub iterations: usize,
    pub batch_episodes: usize,
    pub replay_capacity: usize,
    pub disc_epochs: usize,
    pub disc_minibatch: usize,
    pub disc_lr: f64,
    pub initial_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            lam: 0.95,
            clip_eps: 0.2,
            epochs: 5,
            minibatch: 64,
            lr: 1e-4,
            value_lr: 1e-4,
            nu: 0.8,
            iterations: 100,
            batch_episodes: 8,
            replay_capacity: 10,
            disc_epochs: 3,
            disc_minibatch: 64,
            disc_lr: 1e-4,
            initial_log_std: -0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma {} outside (0,1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return Err(format!("lam {} outside [0,1]", self.lam));
        }
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(format!("nu {} outside [0,1]", self.nu));
        }
        if self.minibatch == 0 || self.batch_episodes == 0 {
            return Err("minibatch and batch_episodes must be positive".into());
        }
        Ok(())
    }
}

/// delta_t = r_t + gamma*V(s_{t+1}) - V(s_t); A_t = sum_k (gamma*lam)^k delta_{t+k}.
/// Returns (advantages, value targets = A + V).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap_value: f64,
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "compute_gae: length mismatch");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap_value;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lam * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// In-place mean-0/std-1 normalization; skipped when the batch std is
/// degenerate (< 1e-8). Returns whether normalization was applied.
pub fn normalize_advantages(adv: &mut [f64]) -> bool {
    if adv.is_empty() {
        return false;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return false;
    }
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
    true
}

/// A rollout batch flattened for minibatch updates, with per-stream
/// normalized advantages and value-regression targets.
pub struct PreparedBatch {
    pub n_steps: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    pub old_log_probs: Vec<f64>,
    pub adv_env: Vec<f64>,
    pub adv_shaped: Vec<f64>,
    pub targets_env: Vec<f64>,
    pub targets_shaped: Vec<f64>,
}

impl PreparedBatch {
    #[inline]
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    #[inline]
    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }
}

/// Raw (pre-normalization) GAE over one reward stream of the whole batch,
/// flattened in episode order.
pub fn stream_advantages(
    batch: &[RolloutTrajectory],
    vnet: &MlpParams,
    rewards_of: impl Fn(usize, usize) -> f64, // (traj index, step index)
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut adv_all = Vec::new();
    let mut tgt_all = Vec::new();
    for (ti, traj) in batch.iter().enumerate() {
        let values: Vec<f64> = traj.steps.iter().map(|s| vnet.forward(&s.state)[0]).collect();
        let rewards: Vec<f64> = (0..traj.steps.len()).map(|si| rewards_of(ti, si)).collect();
        assert!(traj.steps.last().map(|s| s.done).unwrap_or(true), "trajectory must end terminal");
        let (adv, tgt) = compute_gae(&rewards, &values, 0.0, gamma, lam);
        adv_all.extend(adv);
        tgt_all.extend(tgt);
    }
    (adv_all, tgt_all)
}

pub fn prepare_batch(
    batch: &[RolloutTrajectory],
    v_env: &MlpParams,
    v_shaped: &MlpParams,
    cfg: &PpoConfig,
) -> PreparedBatch {
    assert!(!batch.is_empty(), "update on empty batch");
    let state_dim = batch[0].steps[0].state.len();
    let action_dim = batch[0].steps[0].action.len();
    let n_steps: usize = batch.iter().map(|t| t.steps.len()).sum();

    let mut states = Vec::with_capacity(n_steps * state_dim);
    let mut actions = Vec::with_capacity(n_steps * action_dim);
    let mut old_log_probs = Vec::with_capacity(n_steps);
    for traj in batch {
        for s in &traj.steps {
            states.extend_from_slice(&s.state);
            actions.extend_from_slice(&s.action);
            old_log_probs.push(s.log_prob);
        }
    }

    let (mut adv_env, targets_env) = stream_advantages(
        batch,
        v_env,
        |ti, si| batch[ti].steps[si].env_reward,
        cfg.gamma,
        cfg.lam,
    );
    let (mut adv_shaped, targets_shaped) = stream_advantages(
        batch,
        v_shaped,
        |ti, si| batch[ti].steps[si].shaped_reward,
        cfg.gamma,
        cfg.lam,
    );
    normalize_advantages(&mut adv_env);
    normalize_advantages(&mut adv_shaped);

    PreparedBatch {
        n_steps,
        state_dim,
        action_dim,
        states,
        actions,
        old_log_probs,
        adv_env,
        adv_shaped,
        targets_env,
        targets_shaped,
    }
}

/// d/d(log pi) of min(ratio*A, clip(ratio)*A): the unclipped branch gives
/// ratio*A, a binding clip gives 0.
#[inline]
fn surrogate_weight(ratio: f64, adv: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    if ratio * adv <= clipped * adv {
        ratio * adv
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default)]
pub struct SurrogateStats {
    pub clip_fraction: f64,
    pub mean_ratio: f64,
}

/// Ascent gradients for one minibatch: the nu-interpolated driving gradient
/// plus one repulsion gradient per extra advantage stream. All streams share
/// a single forward/backward activation chain per sample, which is what makes
/// ensemble training affordable.
pub fn policy_gradient_streams(
    policy: &GaussianPolicyParams,
    prepared: &PreparedBatch,
    mb: &[usize],
    nu: f64,
    clip_eps: f64,
    extra_advantages: &[&[f64]],
) -> (Vec<f64>, Vec<Vec<f64>>, SurrogateStats) {
    let n_streams = 1 + extra_advantages.len();
    let mut grads: Vec<PolicyGrads> = (0..n_streams).map(|_| PolicyGrads::zeros(policy)).collect();
    let mut weights = vec![0.0; n_streams];
    let inv_mb = 1.0 / mb.len() as f64;
    let mut clipped = 0usize;
    let mut ratio_sum = 0.0;

    for &i in mb {
        let state = prepared.state(i);
        let action = prepared.action(i);
        let (mean, cache) = policy.mean_cached(state);
        let lp = policy.log_prob_given_mean(&mean, action);
        let ratio = (lp - prepared.old_log_probs[i]).exp();
        ratio_sum += ratio;
        if !(1.0 - clip_eps..=1.0 + clip_eps).contains(&ratio) {
            clipped += 1;
        }

        let w_env = surrogate_weight(ratio, prepared.adv_env[i], clip_eps);
        let w_shaped = surrogate_weight(ratio, prepared.adv_shaped[i], clip_eps);
        weights[0] = ((1.0 - nu) * w_env + nu * w_shaped) * inv_mb;
        for (k, adv) in extra_advantages.iter().enumerate() {
            weights[k + 1] = surrogate_weight(ratio, adv[i], clip_eps) * inv_mb;
        }
        policy.log_prob_backward_multi(state, action, &mean, &cache, &weights, &mut grads);
    }

    let mut it = grads.into_iter();
    let driving = it.next().unwrap().to_flat();
    let extras = it.map(|g| g.to_flat()).collect();
    let stats = SurrogateStats {
        clip_fraction: clipped as f64 / mb.len() as f64,
        mean_ratio: ratio_sum / mb.len() as f64,
    };
    (driving, extras, stats)
}

/// Half mean-squared-error regression step of `vnet` toward `targets` on one
/// minibatch. Returns the pre-step minibatch loss.
pub fn value_minibatch_step(
    vnet: &mut MlpParams,
    opt: &mut AdamState,
    prepared: &PreparedBatch,
    mb: &[usize],
    targets: &[f64],
) -> f64 {
    let mut grads = MlpGrads::zeros(vnet.dims());
    let inv_mb = 1.0 / mb.len() as f64;
    let mut loss = 0.0;
    for &i in mb {
        let state = prepared.state(i);
        let (out, cache) = vnet.forward_cached(state);
        let err = out[0] - targets[i];
        loss += 0.5 * err * err * inv_mb;
        vnet.backward(state, &cache, &[err * inv_mb], &mut grads);
    }
    let mut flat = vnet.to_flat();
    if opt.step(&mut flat, &grads.to_flat()).is_ok() {
        vnet.copy_from_flat(&flat);
    }
    loss
}

pub fn full_batch_value_mse(vnet: &MlpParams, prepared: &PreparedBatch, targets: &[f64]) -> f64 {
    let mut loss = 0.0;
    for i in 0..prepared.n_steps {
        let err = vnet.forward(prepared.state(i))[0] - targets[i];
        loss += 0.5 * err * err;
    }
    loss / prepared.n_steps as f64
}

pub fn epoch_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct UpdateDiagnostics {
    pub value_env_mse_before: f64,
    pub value_env_mse_after: f64,
    pub value_shaped_mse_before: f64,
    pub value_shaped_mse_after: f64,
    pub clip_fraction: f64,
    pub nonfinite_updates: u64,
}

/// The per-iteration policy/value update: for each epoch and shuffled
/// minibatch, one Adam step on the interpolated clipped-surrogate gradient,
/// then one regression step for each baseline.
#[allow(clippy::too_many_arguments)]
pub fn ppo_interpolated_update(
    policy: &mut GaussianPolicyParams,
    policy_opt: &mut AdamState,
    v_env: &mut MlpParams,
    v_env_opt: &mut AdamState,
    v_shaped: &mut MlpParams,
    v_shaped_opt: &mut AdamState,
    batch: &[RolloutTrajectory],
    cfg: &PpoConfig,
    update_rng: &mut ChaCha8Rng,
) -> UpdateDiagnostics {
    let prepared = prepare_batch(batch, v_env, v_shaped, cfg);
    let mut diag = UpdateDiagnostics {
        value_env_mse_before: full_batch_value_mse(v_env, &prepared, &prepared.targets_env),
        value_shaped_mse_before: full_batch_value_mse(v_shaped, &prepared, &prepared.targets_shaped),
        ..Default::default()
    };

    let mut clip_sum = 0.0;
    let mut mb_count = 0.0f64;
    for _ in 0..cfg.epochs {
        let perm = epoch_permutation(prepared.n_steps, update_rng);
        for mb in perm.chunks(cfg.minibatch) {
            let (driving, _, stats) =
                policy_gradient_streams(policy, &prepared, mb, cfg.nu, cfg.clip_eps, &[]);
            let descent: Vec<f64> = driving.iter().map(|g| -g).collect();
            let mut flat = policy.to_flat();
            match policy_opt.step(&mut flat, &descent) {
                Ok(()) => {
                    policy.copy_from_flat(&flat);
                    policy.project_log_std();
                }
                Err(_) => diag.nonfinite_updates += 1,
            }
            value_minibatch_step(v_env, v_env_opt, &prepared, mb, &prepared.targets_env);
            value_minibatch_step(v_shaped, v_shaped_opt, &prepared, mb, &prepared.targets_shaped);
            clip_sum += stats.clip_fraction;
            mb_count += 1.0;
        }
    }

    diag.value_env_mse_after = full_batch_value_mse(v_env, &prepared, &prepared.targets_env);
    diag.value_shaped_mse_after =
        full_batch_value_mse(v_shaped, &prepared, &prepared.targets_shaped);
    diag.clip_fraction = clip_sum / mb_count.max(1.0);
    diag
}
