//! Diverse ensemble training: per-agent visitation density models trained
//! against a shared uniform reference, pairwise JS estimates and the JS
//! kernel, repulsion rewards log r_ij, and the barrier-synchronized update
//! that mixes kernel-weighted driving gradients with repulsion gradients.

use crate::env::EnvConfig;
use crate::metrics::{AgentMetrics, EnsembleIterationMetrics};
use crate::ppo::{
    epoch_permutation, normalize_advantages, policy_gradient_streams, ppo_interpolated_update,
    prepare_batch, stream_advantages, value_minibatch_step, PpoConfig, PreparedBatch,
};
use crate::replay::{PriorityReplay, SaPair};
use crate::rollout::{batch_pairs, collect_rollouts, RolloutTrajectory};
use crate::seeding::{agent_seed, stream_rng, StreamId};
use crate::selfimit::{
    bce_minibatch_step, js_estimate, js_from_means, sigmoid, train_discriminator, Discriminator,
    DELTA_CLIP,
};
use crate::train::{batch_metrics, init_agent_nets, AgentNets};
use divmin_core::{AdamState, FlatParams, MlpDims, MlpParams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

// ---------------------------------------------------------------------------
// Density models against a shared uniform reference
// ---------------------------------------------------------------------------

/// Unnormalized log-density model for one agent's state-action visitation:
/// a logistic discriminator against a reference uniform over the running
/// bounding box. log rho_i = logit + log(reference density); the reference
/// term is common to all agents and cancels in every pairwise ratio.
#[derive(Debug, Clone)]
pub struct DensityModel {
    pub net: MlpParams,
    pub opt: AdamState,
}

impl DensityModel {
    pub fn new(sa_dim: usize, lr: f64, rng: &mut impl Rng) -> Self {
        let net = MlpParams::init(MlpDims::standard(sa_dim, 1), rng);
        let opt = AdamState::new(net.flat_len(), lr);
        DensityModel { net, opt }
    }

    pub fn logit(&self, sa: &[f64]) -> f64 {
        self.net.forward(sa)[0]
    }
}

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("reference box is degenerate (zero volume): lo {lo:?} hi {hi:?}")]
    Degenerate { lo: Vec<f64>, hi: Vec<f64> },
}

/// Running bounding box over concatenated (state, action) vectors. The box
/// only ever grows, so all agents' models stay comparable across iterations.
#[derive(Debug, Clone)]
pub struct ReferenceBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ReferenceBox {
    pub fn empty(dim: usize) -> Self {
        ReferenceBox { lo: vec![f64::INFINITY; dim], hi: vec![f64::NEG_INFINITY; dim] }
    }

    pub fn update(&mut self, pairs: &[SaPair]) {
        for p in pairs {
            for (d, v) in p.sa.iter().enumerate() {
                self.lo[d] = self.lo[d].min(*v);
                self.hi[d] = self.hi[d].max(*v);
            }
        }
    }

    /// The box actually sampled from: 5% relative margin, and near-zero-width
    /// dimensions (constant observations) widened to +-0.5 so the volume
    /// never collapses.
    pub fn effective(&self) -> Result<ReferenceBox, ReferenceError> {
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h) {
            return Err(ReferenceError::Degenerate { lo: self.lo.clone(), hi: self.hi.clone() });
        }
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        for d in 0..lo.len() {
            let w = hi[d] - lo[d];
            if w < 1e-6 {
                let c = 0.5 * (lo[d] + hi[d]);
                lo[d] = c - 0.5;
                hi[d] = c + 0.5;
            } else {
                lo[d] -= 0.05 * w;
                hi[d] += 0.05 * w;
            }
        }
        Ok(ReferenceBox { lo, hi })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| rng.gen_range(*l..*h))
            .collect()
    }
}

/// Logistic fit of agent pairs (label 1) against fresh uniform reference
/// draws (label 0). Returns the per-epoch mean loss.
pub fn fit_density_model(
    model: &mut DensityModel,
    agent_pairs: &[SaPair],
    reference: &ReferenceBox,
    epochs: usize,
    minibatch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, ReferenceError> {
    assert!(!agent_pairs.is_empty(), "density fit needs a non-empty batch");
    let reference = reference.effective()?;
    let mut idx: Vec<usize> = (0..agent_pairs.len()).collect();
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        idx.shuffle(rng);
        let mut loss = 0.0;
        let mut batches = 0.0f64;
        for chunk in idx.chunks(minibatch.max(1)) {
            let refs: Vec<Vec<f64>> = (0..chunk.len()).map(|_| reference.sample(rng)).collect();
            loss += bce_minibatch_step(
                &mut model.net,
                &mut model.opt,
                chunk.iter().map(|&i| agent_pairs[i].sa.as_slice()),
                chunk.len(),
                refs.iter().map(|r| r.as_slice()),
                chunk.len(),
            );
            batches += 1.0;
        }
        trace.push(loss / batches.max(1.0));
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Pairwise ratios, JS estimates, kernel
// ---------------------------------------------------------------------------

/// r_ij = sigmoid(log rho_i - log rho_j), clamped to [1e-6, 1-1e-6].
///
/// The branches are arranged so that r_ij + r_ji == 1.0 holds exactly in
/// floating point: both directions reduce to the same p >= 0.5 and return
/// p and 1-p respectively (1-p is exact for p in [0.5, 1]).
pub fn ratio_from_logit_gap(gap: f64) -> f64 {
    let p = sigmoid(gap.abs()).min(1.0 - DELTA_CLIP);
    if gap >= 0.0 {
        p
    } else {
        1.0 - p
    }
}

pub fn pair_ratio(psi_i: &DensityModel, psi_j: &DensityModel, sa: &[f64]) -> f64 {
    ratio_from_logit_gap(psi_i.logit(sa) - psi_j.logit(sa))
}

/// log r_ij(s,a): the repulsion reward for agent i against agent j. Near 0
/// where agent i's density dominates, strongly negative where j's does.
pub fn exploration_reward(psi_i: &DensityModel, psi_j: &DensityModel, sa: &[f64]) -> f64 {
    pair_ratio(psi_i, psi_j, sa).ln()
}

/// Empirical D_JS(rho_i, rho_j) from each agent's own evaluation batch,
/// clipped to [0, ln 2]. Symmetric in (i, j) by construction because
/// ln(1 - r_ij) on batch j equals ln r_ji there.
pub fn js_between(
    psi_i: &DensityModel,
    psi_j: &DensityModel,
    batch_i: &[SaPair],
    batch_j: &[SaPair],
) -> f64 {
    let mean_i = batch_i
        .iter()
        .map(|p| pair_ratio(psi_i, psi_j, &p.sa).ln())
        .sum::<f64>()
        / batch_i.len().max(1) as f64;
    let mean_j = batch_j
        .iter()
        .map(|p| pair_ratio(psi_j, psi_i, &p.sa).ln())
        .sum::<f64>()
        / batch_j.len().max(1) as f64;
    js_from_means(mean_i, mean_j)
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelMatrix {
    pub n: usize,
    values: Vec<f64>,
}

impl KernelMatrix {
    pub fn identity(n: usize) -> Self {
        let mut m = KernelMatrix { n, values: vec![0.0; n * n] };
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.n + j] = v;
    }

    pub fn offdiag_mean(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    sum += self.get(i, j);
                }
            }
        }
        sum / (self.n * (self.n - 1)) as f64
    }

    pub fn offdiag_min(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    min = min.min(self.get(i, j));
                }
            }
        }
        if min.is_finite() {
            min
        } else {
            1.0
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n)
    }
}

/// k(i,j) = exp(-D_JS(rho_i, rho_j) / T), diagonal forced to 1.
pub fn kernel_matrix(
    models: &[DensityModel],
    eval_batches: &[Vec<SaPair>],
    temperature: f64,
) -> KernelMatrix {
    let n = models.len();
    assert_eq!(eval_batches.len(), n);
    let mut m = KernelMatrix::identity(n);
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = js_between(&models[i], &models[j], &eval_batches[i], &eval_batches[j]);
            (-d / temperature).exp()
        })
        .collect();
    for (&(i, j), k) in pairs.iter().zip(vals) {
        m.set(i, j, k);
        m.set(j, i, k);
    }
    m
}

/// Flat parameter-space RBF kernel with median-heuristic bandwidth; the
/// comparison stub for interact-RBF runs.
pub fn rbf_kernel_matrix(flat_params: &[Vec<f64>]) -> (KernelMatrix, f64) {
    let n = flat_params.len();
    let mut sq = vec![0.0; n * n];
    let mut dists = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = flat_params[i]
                .iter()
                .zip(&flat_params[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            sq[i * n + j] = d;
            sq[j * n + i] = d;
            dists.push(d);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = if dists.is_empty() { 1.0 } else { dists[dists.len() / 2].max(1e-12) };
    let mut m = KernelMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m.set(i, j, (-sq[i * n + j] / h).exp());
            }
        }
    }
    (m, h)
}

// ---------------------------------------------------------------------------
// SVPG mixing
// ---------------------------------------------------------------------------

/// delta_i = (1/n) * sum_j [ k(j,i) * driving_j + alpha * (k(j,i)/T) * repulsion_ij ].
///
/// `repulsion[i][j]` is the policy-gradient estimate of
/// d D_JS(rho_j, rho_i) / d theta_i (None on the diagonal and when alpha = 0).
/// All gradients are ascent directions in one shared parameter space.
pub fn svpg_delta(
    driving_grads: &[Vec<f64>],
    repulsion_grads: &[Vec<Option<Vec<f64>>>],
    kernel: &KernelMatrix,
    alpha: f64,
    temperature: f64,
) -> Vec<Vec<f64>> {
    let n = driving_grads.len();
    assert_eq!(kernel.n, n);
    let dim = driving_grads[0].len();
    let inv_n = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let mut delta = vec![0.0; dim];
            for j in 0..n {
                let k = kernel.get(j, i);
                let g = &driving_grads[j];
                assert_eq!(g.len(), dim, "driving gradient shape mismatch");
                for (d, gv) in delta.iter_mut().zip(g) {
                    *d += k * gv;
                }
                if alpha != 0.0 && j != i {
                    if let Some(rep) = repulsion_grads[i][j].as_ref() {
                        assert_eq!(rep.len(), dim, "repulsion gradient shape mismatch");
                        let scale = alpha * k / temperature;
                        for (d, rv) in delta.iter_mut().zip(rep) {
                            *d += scale * rv;
                        }
                    }
                }
            }
            for d in &mut delta {
                *d *= inv_n;
            }
            delta
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Ensemble training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Interaction {
    /// No gradient sharing; densities and kernel still tracked for reporting.
    Independent,
    /// JS-kernel SVPG with density-ratio repulsion rewards.
    Js,
    /// Parameter-space RBF SVPG comparison stub.
    Rbf,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnsembleConfig {
    pub n_agents: usize,
    pub temperature: f64,
    /// Repulsion weight at iteration 0; decays linearly to 0 at
    /// `alpha_end_frac` of the run.
    pub alpha0: f64,
    pub alpha_end_frac: f64,
    pub interaction: Interaction,
    pub ppo: PpoConfig,
    pub density_epochs: usize,
    pub density_minibatch: usize,
    pub density_lr: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_agents: 8,
            temperature: 0.5,
            alpha0: 10.0,
            alpha_end_frac: 0.8,
            interaction: Interaction::Js,
            ppo: PpoConfig::default(),
            density_epochs: 2,
            density_minibatch: 128,
            density_lr: 1e-3,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_agents == 0 {
            return Err("n_agents must be >= 1".into());
        }
        if self.temperature <= 0.0 {
            return Err("temperature must be > 0".into());
        }
        if self.alpha0 < 0.0 {
            return Err("alpha0 must be >= 0".into());
        }
        self.ppo.validate()
    }

    pub fn alpha_at(&self, iteration: usize) -> f64 {
        let end = (self.alpha_end_frac * self.ppo.iterations as f64).max(1.0);
        self.alpha0 * (1.0 - iteration as f64 / end).max(0.0)
    }
}

struct Agent {
    seed: u64,
    nets: AgentNets,
    disc: Discriminator,
    disc_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    replay: PriorityReplay,
    density: DensityModel,
    density_rng: ChaCha8Rng,
    /// Exploration-reward baselines, one per other agent (None at own rank).
    v_expl: Vec<Option<(MlpParams, AdamState)>>,
}

pub struct EnsembleAgentArtifacts {
    pub policy: divmin_core::GaussianPolicyParams,
    pub v_env: MlpParams,
    pub v_shaped: MlpParams,
    pub disc: Discriminator,
    pub replay: PriorityReplay,
    pub density: DensityModel,
}

pub struct EnsembleRun {
    pub agents: Vec<EnsembleAgentArtifacts>,
    pub metrics: Vec<EnsembleIterationMetrics>,
    /// One kernel matrix per iteration.
    pub kernels: Vec<KernelMatrix>,
}

/// Algorithm 2 realized with in-process barriers: every iteration each agent
/// rolls out, updates its replay and discriminator, densities and the kernel
/// are refreshed from the exchanged batches, and the policy update mixes
/// rank-ordered driving gradients with kernel-scaled repulsion gradients.
pub fn train_ensemble(env: &EnvConfig, cfg: &EnsembleConfig, master_seed: u64) -> EnsembleRun {
    cfg.validate().expect("invalid ensemble config");
    let n = cfg.n_agents;
    let sa_dim = env.obs_dim() + env.action_dim();

    let mut agents: Vec<Agent> = (0..n)
        .map(|rank| {
            let seed = agent_seed(master_seed, rank);
            let nets = init_agent_nets(env, &cfg.ppo, seed);
            let mut disc_init = stream_rng(seed, StreamId::Discriminator);
            let disc = Discriminator::new(env.obs_dim(), env.action_dim(), cfg.ppo.disc_lr, &mut disc_init);
            let mut density_init = stream_rng(seed, StreamId::DensityInit);
            let density = DensityModel::new(sa_dim, cfg.density_lr, &mut density_init);
            let v_expl = (0..n)
                .map(|j| {
                    (j != rank && matches!(cfg.interaction, Interaction::Js)).then(|| {
                        let net = MlpParams::init(MlpDims::standard(env.obs_dim(), 1), &mut density_init);
                        let opt = AdamState::new(net.flat_len(), cfg.ppo.value_lr);
                        (net, opt)
                    })
                })
                .collect();
            Agent {
                seed,
                nets,
                disc,
                disc_rng: stream_rng(seed, StreamId::Discriminator),
                update_rng: stream_rng(seed, StreamId::PolicyUpdate),
                replay: PriorityReplay::new(cfg.ppo.replay_capacity),
                density,
                density_rng: stream_rng(seed, StreamId::DensityFit),
                v_expl,
            }
        })
        .collect();

    let mut ref_box = ReferenceBox::empty(sa_dim);
    let mut metrics = Vec::with_capacity(cfg.ppo.iterations);
    let mut kernels: Vec<KernelMatrix> = Vec::with_capacity(cfg.ppo.iterations);

    for t in 0..cfg.ppo.iterations {
        let start = Instant::now();
        let alpha = cfg.alpha_at(t);

        // --- rollout + replay + discriminator, per agent ------------------
        struct PhaseA {
            batch: Vec<RolloutTrajectory>,
            pairs: Vec<SaPair>,
            js: Option<f64>,
            threshold: Option<f64>,
        }
        let phase_a: Vec<PhaseA> = agents
            .par_iter_mut()
            .map(|agent| {
                let batch = collect_rollouts(
                    env,
                    &agent.nets.policy,
                    Some(&agent.disc),
                    agent.seed,
                    t,
                    cfg.ppo.batch_episodes,
                );
                for traj in &batch {
                    agent.replay.offer(traj.to_replay_trajectory());
                }
                let threshold = agent.replay.is_full().then(|| agent.replay.admission_threshold());
                let pairs = batch_pairs(&batch);
                let js = agent
                    .replay
                    .sample_pairs(pairs.len(), &mut agent.disc_rng)
                    .map(|elite| {
                        train_discriminator(
                            &mut agent.disc,
                            &pairs,
                            &elite,
                            cfg.ppo.disc_epochs,
                            cfg.ppo.disc_minibatch,
                            &mut agent.disc_rng,
                        );
                        js_estimate(&agent.disc, &pairs, &elite)
                    });
                PhaseA { batch, pairs, js, threshold }
            })
            .collect();

        // --- barrier: densities and kernel from the exchanged batches ------
        let kernel = match cfg.interaction {
            Interaction::Rbf => {
                let flats: Vec<Vec<f64>> = agents.iter().map(|a| a.nets.policy.to_flat()).collect();
                rbf_kernel_matrix(&flats).0
            }
            Interaction::Independent | Interaction::Js => {
                for a in &phase_a {
                    ref_box.update(&a.pairs);
                }
                let eff = ref_box.effective().expect("reference box degenerate");
                agents.par_iter_mut().zip(&phase_a).for_each(|(agent, a)| {
                    fit_density_model(
                        &mut agent.density,
                        &a.pairs,
                        &eff,
                        cfg.density_epochs,
                        cfg.density_minibatch,
                        &mut agent.density_rng,
                    )
                    .expect("reference box validated above");
                });
                let densities: Vec<DensityModel> =
                    agents.iter().map(|a| a.density.clone()).collect();
                let eval_batches: Vec<Vec<SaPair>> =
                    phase_a.iter().map(|a| a.pairs.clone()).collect();
                kernel_matrix(&densities, &eval_batches, cfg.temperature)
            }
        };

        // --- policy/value updates ------------------------------------------
        let batches: Vec<&[RolloutTrajectory]> = phase_a.iter().map(|a| a.batch.as_slice()).collect();
        let nonfinite_events = match cfg.interaction {
            Interaction::Independent => {
                agents.par_iter_mut().zip(&batches).for_each(|(agent, batch)| {
                    ppo_interpolated_update(
                        &mut agent.nets.policy,
                        &mut agent.nets.policy_opt,
                        &mut agent.nets.v_env,
                        &mut agent.nets.v_env_opt,
                        &mut agent.nets.v_shaped,
                        &mut agent.nets.v_shaped_opt,
                        batch,
                        &cfg.ppo,
                        &mut agent.update_rng,
                    );
                });
                0
            }
            Interaction::Js => {
                lockstep_update(&mut agents, &batches, &kernel, alpha, cfg, Repulsion::Js)
            }
            Interaction::Rbf => {
                lockstep_update(&mut agents, &batches, &kernel, alpha, cfg, Repulsion::Rbf)
            }
        };

        // --- metrics ---------------------------------------------------------
        let agent_metrics: Vec<AgentMetrics> = phase_a
            .iter()
            .map(|a| {
                let (env_return_mean, env_return_std, success_rate) = batch_metrics(t, &a.batch);
                let n_steps: usize = a.batch.iter().map(|b| b.steps.len()).sum();
                let shaped_mean = a
                    .batch
                    .iter()
                    .flat_map(|b| b.steps.iter().map(|s| s.shaped_reward))
                    .sum::<f64>()
                    / n_steps as f64;
                AgentMetrics {
                    env_return_mean,
                    env_return_std,
                    success_rate,
                    js_estimate: a.js,
                    shaped_reward_mean: Some(shaped_mean),
                    replay_threshold: a.threshold,
                }
            })
            .collect();
        metrics.push(EnsembleIterationMetrics {
            iteration: t,
            alpha,
            kernel_offdiag_mean: kernel.offdiag_mean(),
            kernel_offdiag_min: kernel.offdiag_min(),
            agents: agent_metrics,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        let _ = nonfinite_events;
        kernels.push(kernel);
    }

    EnsembleRun {
        agents: agents
            .into_iter()
            .map(|a| EnsembleAgentArtifacts {
                policy: a.nets.policy,
                v_env: a.nets.v_env,
                v_shaped: a.nets.v_shaped,
                disc: a.disc,
                replay: a.replay,
                density: a.density,
            })
            .collect(),
        metrics,
        kernels,
    }
}

enum Repulsion {
    Js,
    Rbf,
}

/// The interacting update: agents advance through epochs and minibatches in
/// lockstep; at every minibatch the rank-ordered driving (and, for JS,
/// repulsion) gradients are exchanged, mixed by `svpg_delta`, and applied
/// through each agent's own Adam state. Returns the count of zeroed
/// non-finite gradients.
fn lockstep_update(
    agents: &mut [Agent],
    batches: &[&[RolloutTrajectory]],
    kernel: &KernelMatrix,
    alpha: f64,
    cfg: &EnsembleConfig,
    repulsion: Repulsion,
) -> u64 {
    let n = agents.len();
    let ppo = &cfg.ppo;

    struct AgentPlan {
        prepared: PreparedBatch,
        /// Normalized exploration advantages and raw targets, per other rank.
        expl: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    }

    let densities: Vec<DensityModel> = agents.iter().map(|a| a.density.clone()).collect();
    let plans: Vec<AgentPlan> = agents
        .par_iter()
        .zip(batches)
        .enumerate()
        .map(|(i, (agent, batch))| {
            let prepared = prepare_batch(batch, &agent.nets.v_env, &agent.nets.v_shaped, ppo);
            let expl = (0..n)
                .map(|j| {
                    let needs = j != i && matches!(repulsion, Repulsion::Js) && alpha != 0.0;
                    needs.then(|| {
                        // log r_ij per step of agent i's own batch.
                        let rewards: Vec<Vec<f64>> = batch
                            .iter()
                            .map(|traj| {
                                traj.steps
                                    .iter()
                                    .map(|s| {
                                        let sa = SaPair::new(&s.state, &s.action);
                                        exploration_reward(&densities[i], &densities[j], &sa.sa)
                                    })
                                    .collect()
                            })
                            .collect();
                        let vnet = &agent.v_expl[j].as_ref().unwrap().0;
                        let (mut adv, targets) = stream_advantages(
                            batch,
                            vnet,
                            |ti, si| rewards[ti][si],
                            ppo.gamma,
                            ppo.lam,
                        );
                        normalize_advantages(&mut adv);
                        (adv, targets)
                    })
                })
                .collect();
            AgentPlan { prepared, expl }
        })
        .collect();

    let n_steps = plans[0].prepared.n_steps;
    assert!(
        plans.iter().all(|p| p.prepared.n_steps == n_steps),
        "lockstep update requires equal batch sizes across agents"
    );
    let mut nonfinite = 0u64;

    for _ in 0..ppo.epochs {
        let perms: Vec<Vec<usize>> = agents
            .iter_mut()
            .map(|a| epoch_permutation(n_steps, &mut a.update_rng))
            .collect();
        let n_mb = perms[0].chunks(ppo.minibatch).count();

        for mb_idx in 0..n_mb {
            let mb_of = |rank: usize| -> &[usize] {
                perms[rank].chunks(ppo.minibatch).nth(mb_idx).unwrap()
            };

            // Driving + repulsion gradients, rank order.
            let grads: Vec<(Vec<f64>, Vec<Vec<f64>>)> = agents
                .par_iter()
                .enumerate()
                .map(|(i, agent)| {
                    let plan = &plans[i];
                    let extra: Vec<&[f64]> = plan
                        .expl
                        .iter()
                        .filter_map(|e| e.as_ref().map(|(adv, _)| adv.as_slice()))
                        .collect();
                    let (driving, reps, _) = policy_gradient_streams(
                        &agent.nets.policy,
                        &plan.prepared,
                        mb_of(i),
                        ppo.nu,
                        ppo.clip_eps,
                        &extra,
                    );
                    (driving, reps)
                })
                .collect();

            let mut driving: Vec<Vec<f64>> = Vec::with_capacity(n);
            let mut repulsion_grads: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(n);
            for (i, (mut drv, reps)) in grads.into_iter().enumerate() {
                if drv.iter().any(|g| !g.is_finite()) {
                    drv.iter_mut().for_each(|g| *g = 0.0);
                    nonfinite += 1;
                }
                let mut by_rank: Vec<Option<Vec<f64>>> = vec![None; n];
                let mut it = reps.into_iter();
                for (j, slot) in by_rank.iter_mut().enumerate() {
                    if plans[i].expl[j].is_some() {
                        let mut rep = it.next().expect("stream count mismatch");
                        if rep.iter().any(|g| !g.is_finite()) {
                            rep.iter_mut().for_each(|g| *g = 0.0);
                            nonfinite += 1;
                        }
                        *slot = Some(rep);
                    }
                }
                driving.push(drv);
                repulsion_grads.push(by_rank);
            }

            let deltas = match repulsion {
                Repulsion::Js => {
                    svpg_delta(&driving, &repulsion_grads, kernel, alpha, cfg.temperature)
                }
                Repulsion::Rbf => {
                    let flats: Vec<Vec<f64>> =
                        agents.iter().map(|a| a.nets.policy.to_flat()).collect();
                    rbf_svpg_delta(&driving, &flats, alpha)
                }
            };

            agents
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, agent)| {
                    let descent: Vec<f64> = deltas[i].iter().map(|d| -d).collect();
                    let mut flat = agent.nets.policy.to_flat();
                    if agent.nets.policy_opt.step(&mut flat, &descent).is_ok() {
                        agent.nets.policy.copy_from_flat(&flat);
                        agent.nets.policy.project_log_std();
                    }
                    let plan = &plans[i];
                    let mb = mb_of(i);
                    value_minibatch_step(
                        &mut agent.nets.v_env,
                        &mut agent.nets.v_env_opt,
                        &plan.prepared,
                        mb,
                        &plan.prepared.targets_env,
                    );
                    value_minibatch_step(
                        &mut agent.nets.v_shaped,
                        &mut agent.nets.v_shaped_opt,
                        &plan.prepared,
                        mb,
                        &plan.prepared.targets_shaped,
                    );
                    for (j, slot) in agent.v_expl.iter_mut().enumerate() {
                        if let (Some((vnet, opt)), Some((_, targets))) =
                            (slot.as_mut(), plan.expl[j].as_ref())
                        {
                            value_minibatch_step(vnet, opt, &plan.prepared, mb, targets);
                        }
                    }
                });
        }
    }
    nonfinite
}

/// RBF-mode mixing: repulsion is the analytic kernel gradient
/// 2 k(j,i) (theta_i - theta_j) / h, recomputed from current parameters.
fn rbf_svpg_delta(driving: &[Vec<f64>], flats: &[Vec<f64>], alpha: f64) -> Vec<Vec<f64>> {
    let n = driving.len();
    let (kernel, h) = rbf_kernel_matrix(flats);
    let inv_n = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let dim = driving[i].len();
            let mut delta = vec![0.0; dim];
            for j in 0..n {
                let k = kernel.get(j, i);
                for (d, g) in delta.iter_mut().zip(&driving[j]) {
                    *d += k * g;
                }
                if alpha != 0.0 && j != i {
                    let scale = alpha * k * 2.0 / h;
                    for (d, (ti, tj)) in delta.iter_mut().zip(flats[i].iter().zip(&flats[j])) {
                        *d += scale * (ti - tj);
                    }
                }
            }
            for d in &mut delta {
                *d *= inv_n;
            }
            delta
        })
        .collect()
}
