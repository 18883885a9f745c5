//! Oracle tests for the numeric core: the MLP forward pass against a
//! separately written scalar re-implementation, backprop against central
//! differences, the Gaussian head against the closed-form density, and the
//! checkpoint format against corruption.

use divmin_core::{
    finite_diff_check, Checkpoint, CheckpointError, FlatParams, GaussianPolicyParams, Mat,
    MlpDims, MlpGrads, MlpParams, PolicyGrads,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Independent forward-pass oracle: plain nested loops, no Mat involved.
// ---------------------------------------------------------------------------

fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let d = p.dims();
    let mut h1 = vec![0.0; d.hidden1];
    for i in 0..d.hidden1 {
        let mut acc = p.b1[i];
        for j in 0..d.input {
            acc += p.w1.get(i, j) * x[j];
        }
        h1[i] = acc.tanh();
    }
    let mut h2 = vec![0.0; d.hidden2];
    for i in 0..d.hidden2 {
        let mut acc = p.b2[i];
        for j in 0..d.hidden1 {
            acc += p.w2.get(i, j) * h1[j];
        }
        h2[i] = acc.tanh();
    }
    let mut y = vec![0.0; d.output];
    for i in 0..d.output {
        let mut acc = p.b3[i];
        for j in 0..d.hidden2 {
            acc += p.w3.get(i, j) * h2[j];
        }
        y[i] = acc;
    }
    y
}

fn random_mlp(dims: MlpDims, seed: u64) -> (MlpParams, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (MlpParams::init(dims, &mut rng), rng)
}

#[test]
fn forward_zero_params_gives_zero_output() {
    let p = MlpParams::zeros(MlpDims { input: 3, hidden1: 4, hidden2: 4, output: 2 });
    assert_eq!(p.forward(&[1.0, -2.0, 0.5]), vec![0.0, 0.0]);
}

#[test]
fn forward_passthrough_config_is_double_tanh() {
    // 1-1-1-1 net, all weights 1, all biases 0: y = tanh(tanh(x)).
    let dims = MlpDims { input: 1, hidden1: 1, hidden2: 1, output: 1 };
    let mut p = MlpParams::zeros(dims);
    p.w1.set(0, 0, 1.0);
    p.w2.set(0, 0, 1.0);
    p.w3.set(0, 0, 1.0);
    for x in [-2.0, -0.3, 0.0, 0.7, 1.9] {
        let y = p.forward(&[x])[0];
        assert!((y - x.tanh().tanh()).abs() < 1e-15);
    }
}

#[test]
fn forward_matches_naive_loop_oracle() {
    for seed in 0..10 {
        let dims = MlpDims { input: 5, hidden1: 7, hidden2: 6, output: 3 };
        let (p, mut rng) = random_mlp(dims, seed);
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = p.forward(&x);
        let want = naive_forward(&p, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14, "seed {seed}: {g} vs {w}");
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let (p, mut rng) = random_mlp(MlpDims { input: 4, hidden1: 8, hidden2: 8, output: 2 }, 9);
    let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = p.forward(&x);
    let b = p.forward(&x);
    assert_eq!(a, b, "bitwise-identical outputs within one process run");
}

// ---------------------------------------------------------------------------
// Backprop
// ---------------------------------------------------------------------------

#[test]
fn backward_zero_cotangent_gives_zero_grads() {
    let dims = MlpDims { input: 3, hidden1: 4, hidden2: 4, output: 2 };
    let (p, _) = random_mlp(dims, 3);
    let x = [0.2, -0.4, 0.9];
    let (_, cache) = p.forward_cached(&x);
    let mut grads = MlpGrads::zeros(dims);
    p.backward(&x, &cache, &[0.0, 0.0], &mut grads);
    assert!(grads.to_flat().iter().all(|g| *g == 0.0));
}

#[test]
fn backward_final_layer_gradient_is_outer_product() {
    // The output layer is linear, so its weight gradient must be exactly
    // out_grad (x) h2 and its bias gradient exactly out_grad.
    let dims = MlpDims { input: 3, hidden1: 4, hidden2: 5, output: 2 };
    let (p, _) = random_mlp(dims, 11);
    let x = [0.5, -1.0, 0.25];
    let (_, cache) = p.forward_cached(&x);
    let out_grad = [1.5, -0.5];
    let mut grads = MlpGrads::zeros(dims);
    p.backward(&x, &cache, &out_grad, &mut grads);
    for i in 0..2 {
        assert_eq!(grads.b3[i], out_grad[i]);
        for j in 0..5 {
            assert_eq!(grads.w3.get(i, j), out_grad[i] * cache.h2[j]);
        }
    }
}

fn mlp_loss_and_grad(dims: MlpDims, seed: u64) -> (Vec<f64>, Vec<f64>, impl FnMut(&[f64]) -> f64) {
    let (p, mut rng) = random_mlp(dims, seed);
    let x: Vec<f64> = (0..dims.input).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let cot: Vec<f64> = (0..dims.output).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let (_, cache) = p.forward_cached(&x);
    let mut grads = MlpGrads::zeros(dims);
    p.backward(&x, &cache, &cot, &mut grads);

    let template = p.clone();
    let loss = move |flat: &[f64]| {
        let mut q = template.clone();
        q.copy_from_flat(flat);
        q.forward(&x).iter().zip(&cot).map(|(y, c)| y * c).sum()
    };
    (p.to_flat(), grads.to_flat(), loss)
}

#[test]
fn backward_multi_agrees_with_repeated_single_backward() {
    let dims = MlpDims { input: 3, hidden1: 5, hidden2: 4, output: 2 };
    let (p, mut rng) = random_mlp(dims, 55);
    let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cot: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let weights = [0.7, -1.3, 0.0];

    let (_, cache) = p.forward_cached(&x);
    let mut multi = vec![
        MlpGrads::zeros(dims),
        MlpGrads::zeros(dims),
        MlpGrads::zeros(dims),
    ];
    p.backward_multi(&x, &cache, &cot, weights.iter().copied().zip(multi.iter_mut()));

    for (w, got) in weights.iter().zip(&multi) {
        let mut single = MlpGrads::zeros(dims);
        let scaled: Vec<f64> = cot.iter().map(|c| c * w).collect();
        p.backward(&x, &cache, &scaled, &mut single);
        for (a, b) in got.to_flat().iter().zip(single.to_flat()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn backward_matches_central_differences() {
    for seed in 0..20 {
        let dims = MlpDims { input: 4, hidden1: 6, hidden2: 5, output: 3 };
        let (flat, grad, loss) = mlp_loss_and_grad(dims, 100 + seed);
        let err = finite_diff_check(loss, &flat, &grad, 1e-5);
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}

// ---------------------------------------------------------------------------
// Gaussian head
// ---------------------------------------------------------------------------

#[test]
fn log_prob_standard_normal_at_mode() {
    let dims = MlpDims { input: 1, hidden1: 2, hidden2: 2, output: 1 };
    let p = GaussianPolicyParams {
        mean_net: MlpParams::zeros(dims),
        log_std: vec![0.0],
    };
    let lp = p.log_prob(&[0.3], &[0.0]);
    assert!((lp - (-0.9189385332046727)).abs() < 1e-12, "lp = {lp}");
}

#[test]
fn log_prob_at_mean_is_normalizer_only() {
    let dims = MlpDims { input: 2, hidden1: 3, hidden2: 3, output: 2 };
    let (mean_net, _) = random_mlp(dims, 21);
    let sigma = 0.37f64;
    let p = GaussianPolicyParams { mean_net, log_std: vec![sigma.ln(); 2] };
    let state = [0.4, -0.2];
    let mean = p.mean(&state);
    let lp = p.log_prob(&state, &mean);
    let want = 2.0 * (-sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln());
    assert!((lp - want).abs() < 1e-12);
}

#[test]
fn log_prob_matches_direct_density_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let dims = MlpDims { input: 3, hidden1: 4, hidden2: 4, output: 2 };
        let mean_net = MlpParams::init(dims, &mut rng);
        let log_std: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.5..0.5)).collect();
        let p = GaussianPolicyParams { mean_net, log_std: log_std.clone() };
        let state: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let action: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();

        // Straight transcription of the diagonal Gaussian density.
        let mean = p.mean(&state);
        let mut want = 0.0;
        for i in 0..2 {
            let sd = log_std[i].exp();
            let z = (action[i] - mean[i]) / sd;
            want += -(sd * (2.0 * std::f64::consts::PI).sqrt()).ln() - 0.5 * z * z;
        }
        let got = p.log_prob(&state, &action);
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn log_prob_density_integrates_to_one() {
    // Trapezoid over +-8 sigma in 1 dim.
    let dims = MlpDims { input: 1, hidden1: 2, hidden2: 2, output: 1 };
    let (mean_net, _) = random_mlp(dims, 5);
    let p = GaussianPolicyParams { mean_net, log_std: vec![-0.4] };
    let state = [0.7];
    let mu = p.mean(&state)[0];
    let sd = (-0.4f64).exp();
    let n = 4000;
    let (lo, hi) = (mu - 8.0 * sd, mu + 8.0 * sd);
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for k in 0..=n {
        let a = lo + k as f64 * h;
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        total += w * p.log_prob(&state, &[a]).exp();
    }
    total *= h;
    assert!((total - 1.0).abs() < 1e-3, "integral = {total}");
}

#[test]
fn sample_is_reproducible_and_low_noise_at_clamp_floor() {
    let dims = MlpDims { input: 2, hidden1: 3, hidden2: 3, output: 2 };
    let (mean_net, _) = random_mlp(dims, 31);
    let p = GaussianPolicyParams { mean_net, log_std: vec![-5.0; 2] };
    let state = [0.1, 0.9];
    let mean = p.mean(&state);

    let mut r1 = ChaCha8Rng::seed_from_u64(42);
    let mut r2 = ChaCha8Rng::seed_from_u64(42);
    let a1 = p.sample(&state, &mut r1);
    let a2 = p.sample(&state, &mut r2);
    assert_eq!(a1, a2, "fixed seed run twice must give identical actions");

    // sigma = e^-5; |z| beyond ~7.4 has probability ~1e-13, so 0.05 is "a.s."
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let a = p.sample(&state, &mut rng);
        for i in 0..2 {
            assert!((a[i] - mean[i]).abs() < 0.05);
        }
    }
}

#[test]
fn sample_statistics_match_parameters() {
    let dims = MlpDims { input: 1, hidden1: 2, hidden2: 2, output: 1 };
    let (mean_net, _) = random_mlp(dims, 13);
    let log_std = vec![-0.7];
    let p = GaussianPolicyParams { mean_net, log_std };
    let state = [0.25];
    let mu = p.mean(&state)[0];
    let sd = (-0.7f64).exp();

    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let samples: Vec<f64> = (0..n).map(|_| p.sample(&state, &mut rng)[0]).collect();
    let emp_mean = samples.iter().sum::<f64>() / n as f64;
    let emp_var = samples.iter().map(|a| (a - emp_mean).powi(2)).sum::<f64>() / (n - 1) as f64;

    let se_mean = sd / (n as f64).sqrt();
    assert!((emp_mean - mu).abs() < 3.0 * se_mean, "mean off: {emp_mean} vs {mu}");
    let se_sd = sd / (2.0 * n as f64).sqrt();
    assert!((emp_var.sqrt() - sd).abs() < 3.0 * se_sd, "std off: {} vs {sd}", emp_var.sqrt());
}

#[test]
fn log_prob_gradient_passes_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let dims = MlpDims { input: 3, hidden1: 5, hidden2: 4, output: 2 };
        let policy = GaussianPolicyParams {
            mean_net: MlpParams::init(dims, &mut rng),
            log_std: (0..2).map(|_| rng.gen_range(-1.0..0.5)).collect(),
        };
        let state: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let action: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let weight = rng.gen_range(-2.0..2.0);

        let (mean, cache) = policy.mean_cached(&state);
        let mut grads = PolicyGrads::zeros(&policy);
        policy.log_prob_backward(&state, &action, &mean, &cache, weight, &mut grads);

        let template = policy.clone();
        let loss = |flat: &[f64]| {
            let mut q = template.clone();
            q.copy_from_flat(flat);
            weight * q.log_prob(&state, &action)
        };
        let err = finite_diff_check(loss, &policy.to_flat(), &grads.to_flat(), 1e-5);
        assert!(err < 1e-4, "seed {seed}: err {err}");
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[test]
fn checkpoint_roundtrip_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let dims = MlpDims { input: 3, hidden1: 6, hidden2: 5, output: 2 };
    let policy = GaussianPolicyParams {
        mean_net: MlpParams::init(dims, &mut rng),
        log_std: vec![-0.3, 0.1],
    };
    let mut ck = Checkpoint::new();
    ck.push_policy("policy", &policy);
    ck.push("extra/scalar", vec![1], vec![0.1 + 0.2]);

    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    let policy2 = back.read_policy("policy").unwrap();
    assert_eq!(policy.to_flat(), policy2.to_flat());
    assert_eq!(back.get("extra/scalar").unwrap().1, &[0.1 + 0.2]);
    assert_eq!(back.to_bytes(), bytes);
}

#[test]
fn checkpoint_refuses_corruption() {
    let mut ck = Checkpoint::new();
    ck.push("x", vec![2], vec![1.0, 2.0]);
    let bytes = ck.to_bytes();

    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(
        Checkpoint::from_bytes(truncated),
        Err(CheckpointError::Truncated { .. })
    ));

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&bad_magic),
        Err(CheckpointError::BadMagic { .. })
    ));

    let mut bad_version = bytes.clone();
    bad_version[8] = 99;
    match Checkpoint::from_bytes(&bad_version) {
        Err(CheckpointError::BadVersion { found, expected }) => {
            assert_eq!(found, 99);
            assert_eq!(expected, 1);
        }
        other => panic!("expected BadVersion, got {other:?}"),
    }
}

#[test]
fn mat_from_vec_checks_length() {
    let r = std::panic::catch_unwind(|| Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0]));
    assert!(r.is_err());
}
