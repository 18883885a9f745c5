//! Per-iteration metric records and JSONL export. Wall-clock timings are kept
//! out of the serialized records so metrics files stay byte-identical across
//! reruns of the same (config, seed); the runner writes them to a sidecar.

use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub env_return_mean: f64,
    pub env_return_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub js_estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shaped_reward_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_threshold: Option<f64>,
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentMetrics {
    pub env_return_mean: f64,
    pub env_return_std: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub js_estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shaped_reward_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleIterationMetrics {
    pub iteration: usize,
    pub alpha: f64,
    pub kernel_offdiag_mean: f64,
    pub kernel_offdiag_min: f64,
    pub agents: Vec<AgentMetrics>,
    #[serde(skip)]
    pub wall_ms: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        writeln!(f)?;
    }
    f.flush()
}
