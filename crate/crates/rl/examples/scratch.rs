// Scratch driver for tuning experiments; not part of the deliverable.
use divmin_rl::env::*;
use divmin_rl::ppo::PpoConfig;
use divmin_rl::*;
use std::time::Instant;

fn episodic_chain(d: f64) -> EnvConfig {
    EnvConfig {
        kind: EnvKind::Chain(SparseChainSpec { goal_distance: d, ..SparseChainSpec::default() }),
        wrapper: RewardWrapperConfig { mode: RewardMode::Episodic, p_m: 0.0 },
    }
}

fn final_window_success(metrics: &[IterationMetrics]) -> f64 {
    let w = (metrics.len() / 10).max(1);
    let tail = &metrics[metrics.len() - w..];
    tail.iter().filter_map(|m| m.success_rate).sum::<f64>() / w as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(|s| s.as_str()).unwrap_or("chain");
    match mode {
        "chain" => {
            let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(200);
            let nu: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.8);
            let d: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
            let env = episodic_chain(d);
            let cfg = PpoConfig { iterations: iters, nu, ..PpoConfig::default() };
            for seed in 0..5u64 {
                let t0 = Instant::now();
                let run = if nu == 0.0 {
                    train_ppo(&env, &cfg, seed)
                } else {
                    train_self_imitation(&env, &cfg, seed)
                };
                let succ = final_window_success(&run.metrics);
                let last = run.metrics.last().unwrap();
                println!(
                    "seed {seed}: success={succ:.2} return={:.2} js={:?} thr={:?} log_std={:?} [{:.1}s]",
                    last.env_return_mean,
                    last.js_estimate.map(|v| (v * 100.0).round() / 100.0),
                    last.replay_threshold.map(|v| (v * 10.0).round() / 10.0),
                    run.policy.log_std.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "trace" => {
            let nu: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.8);
            let d: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
            let env = episodic_chain(d);
            let cfg = PpoConfig { iterations: 200, nu, ..PpoConfig::default() };
            let run = if nu == 0.0 {
                train_ppo(&env, &cfg, 0)
            } else {
                train_self_imitation(&env, &cfg, 0)
            };
            for m in run.metrics.iter().step_by(10) {
                println!(
                    "it {:3}: ret={:7.3} succ={:?} js={:?} shaped={:?} thr={:?}",
                    m.iteration, m.env_return_mean, m.success_rate, m.js_estimate,
                    m.shaped_reward_mean, m.replay_threshold
                );
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
