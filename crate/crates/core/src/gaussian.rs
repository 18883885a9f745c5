//! Diagonal-Gaussian policy head: an MLP mean plus a state-independent
//! log-std vector. Log-std is kept inside [-5, 2] by projection after every
//! optimizer step, which keeps sampling well-conditioned without killing the
//! gradient the way a hard clamp inside the density would.

use crate::mlp::{MlpCache, MlpDims, MlpGrads, MlpParams};
use crate::FlatParams;
use rand::Rng;
use rand_distr::StandardNormal;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyParams {
    pub mean_net: MlpParams,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub mean_net: MlpGrads,
    pub log_std: Vec<f64>,
}

impl GaussianPolicyParams {
    pub fn init(state_dim: usize, action_dim: usize, rng: &mut impl Rng) -> Self {
        Self::init_with_dims(MlpDims::standard(state_dim, action_dim), 0.0, rng)
    }

    pub fn init_with_dims(dims: MlpDims, initial_log_std: f64, rng: &mut impl Rng) -> Self {
        let mut mean_net = MlpParams::init(dims, rng);
        // Small final layer so the initial mean stays near zero and
        // exploration is driven by the std.
        mean_net.scale_output_layer(0.01);
        GaussianPolicyParams {
            mean_net,
            log_std: vec![initial_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); dims.output],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.mean_net.dims().input
    }

    pub fn action_dim(&self) -> usize {
        self.mean_net.dims().output
    }

    pub fn mean(&self, state: &[f64]) -> Vec<f64> {
        self.mean_net.forward(state)
    }

    /// Keeps log-std inside its legal interval; call after an optimizer step.
    pub fn project_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// action = mean + exp(log_std) * z, z ~ N(0, I). Reproducible given rng.
    pub fn sample(&self, state: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let mean = self.mean(state);
        mean.iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect()
    }

    /// Draws an action and returns its log density, computing the mean once.
    pub fn sample_with_log_prob(&self, state: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
        let mean = self.mean(state);
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect();
        let lp = self.log_prob_given_mean(&mean, &action);
        (action, lp)
    }

    /// Exact diagonal-Gaussian log density of `action` at this state.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> f64 {
        let mean = self.mean(state);
        self.log_prob_given_mean(&mean, action)
    }

    pub fn log_prob_given_mean(&self, mean: &[f64], action: &[f64]) -> f64 {
        assert_eq!(action.len(), self.action_dim(), "gaussian_log_prob: dim mismatch");
        let mut lp = 0.0;
        for ((m, a), ls) in mean.iter().zip(action).zip(&self.log_std) {
            let z = (a - m) / ls.exp();
            lp += -0.5 * z * z - ls - 0.5 * LN_2PI;
        }
        lp
    }

    /// Forward pass retaining the cache needed for `log_prob_backward`.
    pub fn mean_cached(&self, state: &[f64]) -> (Vec<f64>, MlpCache) {
        self.mean_net.forward_cached(state)
    }

    /// Accumulates `weight * d log_prob / d params` into `grads`.
    ///
    /// `mean`/`cache` must come from `mean_cached` on the same state.
    pub fn log_prob_backward(
        &self,
        state: &[f64],
        action: &[f64],
        mean: &[f64],
        cache: &MlpCache,
        weight: f64,
        grads: &mut PolicyGrads,
    ) {
        let mut dmean = vec![0.0; self.action_dim()];
        for (i, ((m, a), ls)) in mean.iter().zip(action).zip(&self.log_std).enumerate() {
            let inv_var = (-2.0 * ls).exp();
            let diff = a - m;
            dmean[i] = weight * diff * inv_var;
            grads.log_std[i] += weight * (diff * diff * inv_var - 1.0);
        }
        self.mean_net.backward(state, cache, &dmean, &mut grads.mean_net);
    }

    /// Multi-stream version of `log_prob_backward`: one activation chain,
    /// `weights[s]`-scaled accumulation into each `grads[s]`.
    pub fn log_prob_backward_multi(
        &self,
        state: &[f64],
        action: &[f64],
        mean: &[f64],
        cache: &MlpCache,
        weights: &[f64],
        grads: &mut [PolicyGrads],
    ) {
        assert_eq!(weights.len(), grads.len());
        let adim = self.action_dim();
        let mut dmean = vec![0.0; adim];
        let mut dls = vec![0.0; adim];
        for (i, ((m, a), ls)) in mean.iter().zip(action).zip(&self.log_std).enumerate() {
            let inv_var = (-2.0 * ls).exp();
            let diff = a - m;
            dmean[i] = diff * inv_var;
            dls[i] = diff * diff * inv_var - 1.0;
        }
        for (w, g) in weights.iter().zip(grads.iter_mut()) {
            if *w == 0.0 {
                continue;
            }
            for i in 0..adim {
                g.log_std[i] += w * dls[i];
            }
        }
        self.mean_net.backward_multi(
            state,
            cache,
            &dmean,
            weights.iter().copied().zip(grads.iter_mut().map(|g| &mut g.mean_net)),
        );
    }
}

impl PolicyGrads {
    pub fn zeros(policy: &GaussianPolicyParams) -> Self {
        PolicyGrads {
            mean_net: MlpGrads::zeros(policy.mean_net.dims()),
            log_std: vec![0.0; policy.log_std.len()],
        }
    }

    pub fn clear(&mut self) {
        self.mean_net.clear();
        self.log_std.fill(0.0);
    }

    pub fn scale(&mut self, s: f64) {
        self.mean_net.scale(s);
        for v in &mut self.log_std {
            *v *= s;
        }
    }
}

impl FlatParams for GaussianPolicyParams {
    fn flat_len(&self) -> usize {
        self.mean_net.flat_len() + self.log_std.len()
    }

    fn copy_to_flat(&self, out: &mut [f64]) {
        let n = self.mean_net.flat_len();
        self.mean_net.copy_to_flat(&mut out[..n]);
        out[n..].copy_from_slice(&self.log_std);
    }

    fn copy_from_flat(&mut self, src: &[f64]) {
        let n = self.mean_net.flat_len();
        self.mean_net.copy_from_flat(&src[..n]);
        self.log_std.copy_from_slice(&src[n..]);
    }
}

impl FlatParams for PolicyGrads {
    fn flat_len(&self) -> usize {
        self.mean_net.flat_len() + self.log_std.len()
    }

    fn copy_to_flat(&self, out: &mut [f64]) {
        let n = self.mean_net.flat_len();
        self.mean_net.copy_to_flat(&mut out[..n]);
        out[n..].copy_from_slice(&self.log_std);
    }

    fn copy_from_flat(&mut self, src: &[f64]) {
        let n = self.mean_net.flat_len();
        self.mean_net.copy_from_flat(&src[..n]);
        self.log_std.copy_from_slice(&src[n..]);
    }
}
