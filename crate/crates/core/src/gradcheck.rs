//! Finite-difference checks of the analytic gradients on seeded random
//! instances.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affinity::{affinity_eval_f64, hinge_pattern_f64, AffinityConfig, AffinityMode};
use crate::error::{Error, Result};
use crate::metric::{lr_eval_frozen_f64, lr_hinge_pattern_f64, lr_step_f64, LrConfig};
use crate::model::losses::pooled_argmax;
use crate::model::net::{ModelShape, ToyModel};
use crate::model::train::{evaluate, TrainConfig, TrainItem};
use crate::pairs::{build_pairs, KernelSet};
use crate::rng::Rng;
use crate::tensor::{LabelMap, NEUTRAL};

/// Largest instance accepted by the checks.
pub const MAX_SIDE: usize = 16;
pub const MAX_CHANNELS: usize = 4;
/// Central-difference steps for the losses and for the full model.
pub const LOSS_STEP: f64 = 1e-3;
pub const MODEL_STEP: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;
/// Coordinates sampled from the model parameters.
pub const MODEL_SAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradTarget {
    AffinitySa,
    AffinityAa,
    Lr,
    Model,
}

impl GradTarget {
    pub fn tolerance(self) -> f64 {
        match self {
            GradTarget::Model => 1e-3,
            _ => 1e-4,
        }
    }
}

impl FromStr for GradTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affinity-sa" => Ok(GradTarget::AffinitySa),
            "affinity-aa" => Ok(GradTarget::AffinityAa),
            "lr" => Ok(GradTarget::Lr),
            "model" => Ok(GradTarget::Model),
            _ => Err(Error::Argument(format!(
                "--target must be affinity-sa, affinity-aa, lr or model, got '{s}'"
            ))),
        }
    }
}

impl fmt::Display for GradTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradTarget::AffinitySa => "affinity-sa",
            GradTarget::AffinityAa => "affinity-aa",
            GradTarget::Lr => "lr",
            GradTarget::Model => "model",
        })
    }
}

/// `HxWxC` instance size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSize {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FromStr for InstanceSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('x').collect();
        let nums: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
        match nums.as_deref() {
            Some(&[height, width, channels]) if height > 0 && width > 0 && channels > 0 => Ok(Self {
                height,
                width,
                channels,
            }),
            _ => Err(Error::Argument(format!("size must look like HxWxC with positive integers, got '{s}'"))),
        }
    }
}

impl fmt::Display for InstanceSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub target: GradTarget,
    pub size: String,
    pub seed: u64,
    pub max_rel_err: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a kink lies within one step.
    pub skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare `analytic` against central differences of `f` at `coords`.
///
/// The estimate is the Richardson extrapolation `(4 D(h/2) - D(h)) / 3` of
/// central differences `D`, which cancels the `h^2` truncation term.
/// `pattern` reports the piecewise-linear activity at a point; a coordinate
/// whose pattern changes within one step is skipped. Returns
/// `(max relative error, checked, skipped)`.
pub fn central_difference<F, P>(
    x: &[f64],
    analytic: &[f64],
    coords: &[usize],
    step: f64,
    mut f: F,
    mut pattern: P,
) -> (f64, usize, usize)
where
    F: FnMut(&[f64]) -> f64,
    P: FnMut(&[f64]) -> Vec<bool>,
{
    let base = pattern(x);
    let mut shadow = x.to_vec();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for &k in coords {
        let mut moved = false;
        let mut diff = |h: f64, shadow: &mut Vec<f64>| {
            shadow[k] = x[k] + h;
            let fp = f(shadow);
            moved |= pattern(shadow) != base;
            shadow[k] = x[k] - h;
            let fm = f(shadow);
            moved |= pattern(shadow) != base;
            shadow[k] = x[k];
            (fp - fm) / (2.0 * h)
        };
        let coarse = diff(step, &mut shadow);
        let fine = diff(step / 2.0, &mut shadow);
        if moved {
            skipped += 1;
            continue;
        }
        let numeric = (4.0 * fine - coarse) / 3.0;
        let a = analytic[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(err);
        checked += 1;
    }
    (worst, checked, skipped)
}

fn check_size(size: InstanceSize) -> Result<()> {
    if size.height > MAX_SIDE || size.width > MAX_SIDE || size.channels > MAX_CHANNELS {
        return Err(Error::Argument(format!(
            "--size {size} exceeds the {MAX_SIDE}x{MAX_SIDE}x{MAX_CHANNELS} limit"
        )));
    }
    if size.channels < 2 {
        return Err(Error::Argument(format!("--size {size} needs at least 2 classes")));
    }
    Ok(())
}

/// Random labels over `classes` with about 15% neutral pixels and every class
/// present (as long as the map has room).
pub fn random_labels(height: usize, width: usize, classes: usize, rng: &mut Rng) -> LabelMap {
    let n = height * width;
    let mut labels: Vec<u8> = (0..n)
        .map(|_| {
            if rng.next_f64() < 0.15 {
                NEUTRAL
            } else {
                rng.below(classes as u64) as u8
            }
        })
        .collect();
    let mut slots: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut slots);
    for (c, &i) in slots.iter().take(classes.min(n)).enumerate() {
        labels[i] = c as u8;
    }
    LabelMap::new(height, width, labels).expect("sizes are consistent")
}

/// Per-pixel softmax of logits drawn from `[-spread, spread]`.
pub fn random_probs(npix: usize, classes: usize, spread: f64, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(npix * classes);
    for _ in 0..npix {
        let z: Vec<f64> = (0..classes).map(|_| rng.uniform(-spread, spread)).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

fn small_kernels(size: InstanceSize) -> KernelSet {
    let side = size.height.min(size.width) as u32;
    let ds: Vec<u32> = [1, 2, 3].into_iter().filter(|&d| d < side.max(2)).collect();
    KernelSet::new(ds).expect("non-empty increasing")
}

fn report(target: GradTarget, size: InstanceSize, seed: u64, res: (f64, usize, usize)) -> GradCheckReport {
    let tolerance = target.tolerance();
    GradCheckReport {
        target,
        size: size.to_string(),
        seed,
        max_rel_err: res.0,
        checked: res.1,
        skipped: res.2,
        tolerance,
        passed: res.1 > 0 && res.0 < tolerance,
    }
}

/// Affinity gradient w.r.t. probabilities (and confidences when
/// `detach_conf` is false in adaptive mode).
pub fn affinity_grad_check(
    mode: AffinityMode,
    size: InstanceSize,
    seed: u64,
    detach_conf: bool,
) -> Result<GradCheckReport> {
    check_size(size)?;
    let mut rng = Rng::new(seed);
    let (h, w, c) = (size.height, size.width, size.channels);
    let labels = random_labels(h, w, c, &mut rng);
    let probs = random_probs(h * w, c, 0.5, &mut rng);
    let conf: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.05, 1.0)).collect();
    let cfg = AffinityConfig {
        mode,
        kernels: small_kernels(size),
        detach_conf,
        ..Default::default()
    };
    let pairs = build_pairs(&labels, &cfg.kernels)?;
    let conf_arg = (mode == AffinityMode::Aa).then_some(conf.as_slice());
    let eval = affinity_eval_f64(&probs, c, conf_arg, &pairs, &cfg)?;
    let coords: Vec<usize> = (0..probs.len()).collect();
    let mut res = central_difference(
        &probs,
        &eval.grad_probs,
        &coords,
        LOSS_STEP,
        |p| affinity_eval_f64(p, c, conf_arg, &pairs, &cfg).map(|e| e.total).unwrap_or(f64::NAN),
        |p| hinge_pattern_f64(p, c, conf_arg, &pairs, &cfg),
    );
    if let (Some(gc), Some(_)) = (&eval.grad_conf, conf_arg) {
        let coords: Vec<usize> = (0..conf.len()).collect();
        // Step well inside (0, 1) and away from ties of the modeling function.
        let (e, k, s) = central_difference(
            &conf,
            gc,
            &coords,
            LOSS_STEP,
            |v| affinity_eval_f64(&probs, c, Some(v), &pairs, &cfg).map(|e| e.total).unwrap_or(f64::NAN),
            |v| {
                let mut pat = hinge_pattern_f64(&probs, c, Some(v), &pairs, &cfg);
                pat.extend(pairs.per_dilation.iter().flat_map(|dp| {
                    dp.fg_pos
                        .iter()
                        .chain(&dp.bg_pos)
                        .chain(&dp.neg)
                        .map(|p| v[p.i as usize] >= v[p.j as usize])
                }));
                pat
            },
        );
        res = (res.0.max(e), res.1 + k, res.2 + s);
    }
    let target = match mode {
        AffinityMode::Sa => GradTarget::AffinitySa,
        AffinityMode::Aa => GradTarget::AffinityAa,
    };
    Ok(report(target, size, seed, res))
}

/// Label-reassign gradient w.r.t. embeddings, with centroids, assignment and
/// modulation held at their values for the unperturbed input.
pub fn lr_grad_check(size: InstanceSize, seed: u64, gamma: f64) -> Result<GradCheckReport> {
    check_size(size)?;
    let mut rng = Rng::new(seed);
    let (h, w, dim) = (size.height, size.width, size.channels);
    let classes = 3.min(h * w).max(2);
    let labels = random_labels(h, w, classes, &mut rng);
    let embed: Vec<f64> = (0..h * w * dim).map(|_| rng.normal()).collect();
    let conf: Vec<f64> = (0..h * w).map(|_| rng.uniform(0.05, 1.0)).collect();
    let cfg = LrConfig {
        gamma,
        ..Default::default()
    };
    let step = lr_step_f64(&embed, dim, labels.labels(), &conf, &cfg)?;
    let coords: Vec<usize> = (0..embed.len()).collect();
    let res = central_difference(
        &embed,
        &step.eval.grad_embed,
        &coords,
        LOSS_STEP,
        |x| lr_eval_frozen_f64(x, dim, &step.centroids, &step.reassignment, &cfg).total,
        |x| lr_hinge_pattern_f64(x, dim, &step.centroids, &step.reassignment, &cfg),
    );
    Ok(report(GradTarget::Lr, size, seed, res))
}

/// Gradient of the full training objective w.r.t. a seeded sample of model
/// parameters. The size's channel count is the number of classes; the image
/// has three channels.
pub fn model_grad_check(size: InstanceSize, seed: u64) -> Result<GradCheckReport> {
    check_size(size)?;
    let mut rng = Rng::new(seed);
    let (h, w, classes) = (size.height, size.width, size.channels);
    let pseudo = random_labels(h, w, classes, &mut rng);
    let image: Vec<f64> = (0..h * w * 3).map(|_| rng.normal()).collect();
    let mut image_labels = vec![0u8; classes];
    for &l in pseudo.labels().iter().filter(|&&l| l != NEUTRAL) {
        image_labels[l as usize] = 1;
    }
    // Drop one foreground class from the image labels so the classification
    // term has both targets.
    if classes > 2 {
        image_labels[classes - 1] = 0;
    }
    let item = TrainItem {
        height: h,
        width: w,
        channels: 3,
        image,
        pseudo,
        image_labels,
    };
    let cfg = TrainConfig {
        affinity: AffinityConfig {
            kernels: small_kernels(size),
            ..Default::default()
        },
        embed_dim: 8,
        ..Default::default()
    };
    let model = ToyModel::init(ModelShape::new(3, cfg.embed_dim, classes), &mut rng)?;
    let pairs = build_pairs(&item.pseudo, &cfg.affinity.kernels)?;
    let base = evaluate(&model, &item, &pairs, &cfg, true, None)?;
    let frozen = base.constants.clone();

    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let flat_grads: Vec<f64> = base.grads.tensors().iter().flat_map(|g| g.iter().copied()).collect();
    let flat_params: Vec<f64> = model.params().iter().flat_map(|p| p.iter().copied()).collect();
    let mut coords: Vec<usize> = (0..flat_params.len()).collect();
    rng.shuffle(&mut coords);
    coords.truncate(MODEL_SAMPLES);
    coords.sort_unstable();

    let unflatten = |flat: &[f64]| -> ToyModel {
        let mut m = model.clone();
        let mut off = 0;
        for (slot, &n) in m.params_mut().into_iter().zip(&sizes) {
            slot.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        m
    };
    let res = central_difference(
        &flat_params,
        &flat_grads,
        &coords,
        MODEL_STEP,
        |x| {
            evaluate(&unflatten(x), &item, &pairs, &cfg, true, Some(&frozen))
                .map(|e| e.metrics.total)
                .unwrap_or(f64::NAN)
        },
        |x| match evaluate(&unflatten(x), &item, &pairs, &cfg, true, Some(&frozen)) {
            Ok(e) => {
                let mut pat = e.forward.relu_pattern();
                pat.extend(e.hinge_pattern);
                let arg = pooled_argmax(&e.forward.logits, classes);
                pat.extend(arg.iter().flat_map(|&a| (0..usize::BITS).map(move |b| a >> b & 1 == 1)));
                pat
            }
            Err(_) => Vec::new(),
        },
    );
    Ok(report(GradTarget::Model, size, seed, res))
}

pub fn grad_check(target: GradTarget, size: InstanceSize, seed: u64) -> Result<GradCheckReport> {
    match target {
        GradTarget::AffinitySa => affinity_grad_check(AffinityMode::Sa, size, seed, true),
        GradTarget::AffinityAa => affinity_grad_check(AffinityMode::Aa, size, seed, true),
        GradTarget::Lr => lr_grad_check(size, seed, LrConfig::default().gamma),
        GradTarget::Model => model_grad_check(size, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sz(s: &str) -> InstanceSize {
        s.parse().unwrap()
    }

    #[test]
    fn parses_targets_and_sizes() {
        assert_eq!("lr".parse::<GradTarget>().unwrap(), GradTarget::Lr);
        assert!("affinity".parse::<GradTarget>().is_err());
        assert_eq!(sz("8x8x3"), InstanceSize { height: 8, width: 8, channels: 3 });
        assert!("8x8".parse::<InstanceSize>().is_err());
        assert!("0x8x3".parse::<InstanceSize>().is_err());
    }

    #[test]
    fn rejects_large_instances() {
        assert!(grad_check(GradTarget::AffinitySa, sz("17x8x3"), 0).is_err());
        assert!(grad_check(GradTarget::AffinitySa, sz("8x8x5"), 0).is_err());
    }

    #[test]
    fn affinity_checks_pass() {
        let sa = grad_check(GradTarget::AffinitySa, sz("8x8x3"), 1).unwrap();
        assert!(sa.passed, "{sa:?}");
        assert!(sa.checked >= 100);
        let aa = grad_check(GradTarget::AffinityAa, sz("8x8x3"), 1).unwrap();
        assert!(aa.passed, "{aa:?}");
    }

    #[test]
    fn lr_check_passes() {
        let r = grad_check(GradTarget::Lr, sz("8x8x4"), 7).unwrap();
        assert!(r.passed, "{r:?}");
        let r = lr_grad_check(sz("8x8x4"), 7, 0.0).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn model_check_passes() {
        let r = grad_check(GradTarget::Model, sz("8x8x3"), 3).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checked >= 100);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = [1.0, 2.0];
        let (err, checked, _) =
            central_difference(&x, &[2.0, 5.0], &[0, 1], 1e-3, |v| v[0] * v[0] + v[1] * v[1], |_| Vec::new());
        assert_eq!(checked, 2);
        assert!((err - 0.2).abs() < 1e-6);
    }
}
