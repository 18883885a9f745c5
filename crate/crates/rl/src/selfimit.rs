//! Discriminator-based self-imitation: a single network on (state, action)
//! estimates the ratio r = d_policy / (d_policy + d_elite); -log r is the
//! shaped reward, and the same logits yield an empirical Jensen-Shannon
//! divergence estimate between the policy's visitation and the replay.

use crate::replay::SaPair;
use divmin_core::{AdamState, FlatParams, MlpDims, MlpGrads, MlpParams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Probability clamp; bounds the shaped reward to [-ln(1-1e-6), -ln(1e-6)].
pub const DELTA_CLIP: f64 = 1e-6;

pub const LN_2: f64 = std::f64::consts::LN_2;
const LN_4: f64 = 2.0 * LN_2;

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Combines the two sides of the variational bound into a JS estimate in
/// [0, ln 2]: the optimal-discriminator value of the bound equals
/// 2*JS - ln 4, so JS = (ln 4 + policy term + elite term) / 2.
pub fn js_from_means(mean_log_r_policy: f64, mean_log_one_minus_r_elite: f64) -> f64 {
    (0.5 * (LN_4 + mean_log_r_policy + mean_log_one_minus_r_elite)).clamp(0.0, LN_2)
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub net: MlpParams,
    pub opt: AdamState,
}

impl Discriminator {
    pub fn new(state_dim: usize, action_dim: usize, lr: f64, rng: &mut impl Rng) -> Self {
        let net = MlpParams::init(MlpDims::standard(state_dim + action_dim, 1), rng);
        let opt = AdamState::new(net.flat_len(), lr);
        Discriminator { net, opt }
    }

    pub fn with_dims(dims: MlpDims, lr: f64, rng: &mut impl Rng) -> Self {
        let net = MlpParams::init(dims, rng);
        let opt = AdamState::new(net.flat_len(), lr);
        Discriminator { net, opt }
    }

    pub fn logit(&self, sa: &[f64]) -> f64 {
        self.net.forward(sa)[0]
    }

    /// r^phi(s,a): probability the pair came from the current policy rather
    /// than the elite replay, clamped away from 0 and 1.
    pub fn prob(&self, sa: &[f64]) -> f64 {
        sigmoid(self.logit(sa)).clamp(DELTA_CLIP, 1.0 - DELTA_CLIP)
    }

    /// -log r^phi(s,a); large where the replay visits and the policy does not.
    pub fn shaped_reward(&self, state: &[f64], action: &[f64]) -> f64 {
        -self.prob(&SaPair::new(state, action).sa).ln()
    }

    pub fn shaped_reward_sa(&self, sa: &[f64]) -> f64 {
        -self.prob(sa).ln()
    }

    /// Mean binary log-loss and its gradient on (policy = label 1,
    /// elite = label 0) batches. Exposed for gradient checking.
    pub fn loss_and_grad(&self, policy: &[SaPair], elite: &[SaPair]) -> (f64, Vec<f64>) {
        let mut grads = MlpGrads::zeros(self.net.dims());
        let mut loss = 0.0;
        let wp = 1.0 / policy.len().max(1) as f64;
        for pair in policy {
            let (out, cache) = self.net.forward_cached(&pair.sa);
            let logit = out[0];
            loss += wp * softplus(-logit); // -ln sigmoid(logit)
            let dlogit = wp * (sigmoid(logit) - 1.0);
            self.net.backward(&pair.sa, &cache, &[dlogit], &mut grads);
        }
        let we = 1.0 / elite.len().max(1) as f64;
        for pair in elite {
            let (out, cache) = self.net.forward_cached(&pair.sa);
            let logit = out[0];
            loss += we * softplus(logit); // -ln(1 - sigmoid(logit))
            let dlogit = we * sigmoid(logit);
            self.net.backward(&pair.sa, &cache, &[dlogit], &mut grads);
        }
        (loss, grads.to_flat())
    }

}

/// One Adam step on the binary log-loss of `net` over positive (label 1) and
/// negative (label 0) inputs, each side weighted by its own batch mean.
/// Shared by the self-imitation discriminator and the density models.
pub(crate) fn bce_minibatch_step<'a>(
    net: &mut MlpParams,
    opt: &mut AdamState,
    positives: impl Iterator<Item = &'a [f64]>,
    n_pos: usize,
    negatives: impl Iterator<Item = &'a [f64]>,
    n_neg: usize,
) -> f64 {
    let mut grads = MlpGrads::zeros(net.dims());
    let mut loss = 0.0;
    let wp = 1.0 / n_pos.max(1) as f64;
    for sa in positives {
        let (out, cache) = net.forward_cached(sa);
        let logit = out[0];
        loss += wp * softplus(-logit); // -ln sigmoid(logit)
        let dlogit = wp * (sigmoid(logit) - 1.0);
        net.backward(sa, &cache, &[dlogit], &mut grads);
    }
    let wn = 1.0 / n_neg.max(1) as f64;
    for sa in negatives {
        let (out, cache) = net.forward_cached(sa);
        let logit = out[0];
        loss += wn * softplus(logit); // -ln(1 - sigmoid(logit))
        let dlogit = wn * sigmoid(logit);
        net.backward(sa, &cache, &[dlogit], &mut grads);
    }
    let mut flat = net.to_flat();
    if opt.step(&mut flat, &grads.to_flat()).is_ok() {
        net.copy_from_flat(&flat);
    }
    loss
}

/// Trains the discriminator for `epochs` passes of shuffled minibatches over
/// the policy pairs, pairing each with an equally sized elite minibatch
/// (cycled when the sides differ in length). Returns the per-epoch mean loss.
pub fn train_discriminator(
    disc: &mut Discriminator,
    policy_pairs: &[SaPair],
    elite_pairs: &[SaPair],
    epochs: usize,
    minibatch: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    assert!(!policy_pairs.is_empty(), "policy batch must be non-empty");
    assert!(!elite_pairs.is_empty(), "elite batch must be non-empty");
    let mut trace = Vec::with_capacity(epochs);
    let mut p_idx: Vec<usize> = (0..policy_pairs.len()).collect();
    let mut e_idx: Vec<usize> = (0..elite_pairs.len()).collect();
    for _ in 0..epochs {
        p_idx.shuffle(rng);
        e_idx.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        let mut e_cursor = 0usize;
        for chunk in p_idx.chunks(minibatch.max(1)) {
            let e_start = e_cursor;
            e_cursor = (e_cursor + chunk.len()) % e_idx.len();
            epoch_loss += bce_minibatch_step(
                &mut disc.net,
                &mut disc.opt,
                chunk.iter().map(|&i| policy_pairs[i].sa.as_slice()),
                chunk.len(),
                (0..chunk.len()).map(|k| elite_pairs[e_idx[(e_start + k) % e_idx.len()]].sa.as_slice()),
                chunk.len(),
            );
            batches += 1.0;
        }
        trace.push(epoch_loss / batches.max(1.0));
    }
    trace
}

/// Empirical JS divergence between the distributions behind the two batches,
/// assuming `disc` has been optimized on them. Clamped to [0, ln 2].
pub fn js_estimate(disc: &Discriminator, policy_pairs: &[SaPair], elite_pairs: &[SaPair]) -> f64 {
    let mean_p = policy_pairs
        .iter()
        .map(|p| disc.prob(&p.sa).ln())
        .sum::<f64>()
        / policy_pairs.len().max(1) as f64;
    let mean_e = elite_pairs
        .iter()
        .map(|p| (1.0 - disc.prob(&p.sa)).ln())
        .sum::<f64>()
        / elite_pairs.len().max(1) as f64;
    js_from_means(mean_p, mean_e)
}
