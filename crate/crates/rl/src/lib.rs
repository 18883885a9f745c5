//! Reinforcement-learning workbench: self-imitation as Jensen-Shannon
//! divergence minimization against an elite replay of the agent's own best
//! trajectories, plus Stein-variational ensemble training with a JS kernel
//! for diverse exploration. Environments are desk-scale by design.

pub mod cem;
pub mod ensemble;
pub mod env;
pub mod metrics;
pub mod ppo;
pub mod replay;
pub mod rollout;
pub mod seeding;
pub mod selfimit;
pub mod train;

pub use cem::{cem_baseline, cem_optimize, CemResult};
pub use ensemble::{
    exploration_reward, fit_density_model, js_between, kernel_matrix, pair_ratio, svpg_delta,
    train_ensemble, DensityModel, EnsembleConfig, EnsembleRun, Interaction, KernelMatrix,
    ReferenceBox,
};
pub use env::{
    region_mass, visitation_histogram, BanditSpec, Env, EnvConfig, EnvKind, MazeSpec, RewardMode,
    RewardWrapperConfig, SparseChainSpec, StepResult,
};
pub use metrics::{AgentMetrics, EnsembleIterationMetrics, IterationMetrics};
pub use ppo::{compute_gae, ppo_interpolated_update, PpoConfig};
pub use replay::{PriorityReplay, SaPair, Trajectory, Transition};
pub use rollout::{collect_rollouts, RolloutStep, RolloutTrajectory};
pub use selfimit::{js_estimate, train_discriminator, Discriminator};
pub use train::{evaluate_policy, train_ppo, train_self_imitation, SingleAgentRun};
