//! Timing of the affinity loss forward and backward pass.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::affinity::{affinity_eval_f64, label_confidence_f64, AffinityConfig, AffinityMode};
use crate::error::{Error, Result};
use crate::gradcheck::{random_probs, InstanceSize};
use crate::pairs::{build_pairs, KernelSet};
use crate::rng::Rng;
use crate::synth::{generate, Corruption, SceneSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub size: InstanceSize,
    pub kernels: KernelSet,
    pub repeat: usize,
    pub seed: u64,
    pub threads: usize,
    pub mode: AffinityMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub size: String,
    pub kernels: String,
    pub mode: AffinityMode,
    pub threads: usize,
    pub repeat: usize,
    pub pairs: usize,
    pub build_pairs_secs: f64,
    /// Forward + backward wall time per iteration.
    pub mean_secs: f64,
    pub stddev_secs: f64,
    pub min_secs: f64,
    pub max_secs: f64,
    pub pairs_per_sec: f64,
    pub loss_total: f64,
}

/// Benchmark on a synthetic label map (three shapes over background with
/// neutral bands) and random softmax probabilities.
pub fn bench_affinity(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeat == 0 {
        return Err(Error::Argument("--repeat must be at least 1".into()));
    }
    let InstanceSize {
        height,
        width,
        channels,
    } = cfg.size;
    if channels < 2 || channels > 255 {
        return Err(Error::Argument(format!("--size needs 2..=255 classes, got {channels}")));
    }
    let spec = SceneSpec {
        num_shapes: 3,
        num_classes: channels,
        ..SceneSpec::new(height, width, Corruption::Ideal, cfg.seed)
    };
    let scene = generate(&spec)?;
    let mut rng = Rng::new(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let probs = random_probs(height * width, channels, 2.0, &mut rng);
    let conf = label_confidence_f64(&probs, channels, scene.pseudo.labels());
    let acfg = AffinityConfig {
        kernels: cfg.kernels.clone(),
        mode: cfg.mode,
        threads: cfg.threads,
        ..Default::default()
    };
    let t0 = Instant::now();
    let pairs = build_pairs(&scene.pseudo, &acfg.kernels)?;
    let build_pairs_secs = t0.elapsed().as_secs_f64();
    let conf_arg = (cfg.mode == AffinityMode::Aa).then_some(conf.as_slice());

    let mut times = Vec::with_capacity(cfg.repeat);
    let mut loss_total = 0.0;
    for _ in 0..cfg.repeat {
        let t = Instant::now();
        let eval = affinity_eval_f64(&probs, channels, conf_arg, &pairs, &acfg)?;
        times.push(t.elapsed().as_secs_f64());
        loss_total = eval.total;
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(BenchReport {
        size: cfg.size.to_string(),
        kernels: cfg.kernels.to_string(),
        mode: cfg.mode,
        threads: cfg.threads,
        repeat: cfg.repeat,
        pairs: pairs.total(),
        build_pairs_secs,
        mean_secs: mean,
        stddev_secs: var.sqrt(),
        min_secs: times.iter().cloned().fold(f64::INFINITY, f64::min),
        max_secs: times.iter().cloned().fold(0.0, f64::max),
        pairs_per_sec: pairs.total() as f64 / mean,
        loss_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_reports_pairs() {
        let cfg = BenchConfig {
            size: "40x40x5".parse().unwrap(),
            kernels: KernelSet::new(vec![1, 2]).unwrap(),
            repeat: 2,
            seed: 0,
            threads: 1,
            mode: AffinityMode::Aa,
        };
        let r = bench_affinity(&cfg).unwrap();
        assert!(r.pairs > 0);
        assert!(r.pairs_per_sec > 0.0);
        assert!(r.loss_total.is_finite());
        assert_eq!(r.kernels, "1,2");
        let again = bench_affinity(&cfg).unwrap();
        assert_eq!(again.loss_total.to_bits(), r.loss_total.to_bits());
    }
}
