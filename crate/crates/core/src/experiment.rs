//! Seeded refinement suite: train a fresh model per scene under several loss
//! configurations and score the refined maps against ground truth.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affinity::{AffinityMode, ModelingFn};
use crate::error::{Error, Result};
use crate::eval::miou;
use crate::model::train::{refine, TrainConfig, TrainItem, Trainer};
use crate::synth::{generate, SceneInstance, SceneSpec};

/// Loss configuration applied on top of a base [`TrainConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// CE + CLS only.
    Baseline,
    /// CE + CLS + standard affinity.
    Sa,
    /// CE + CLS + adaptive affinity with the given modeling function.
    Aa(ModelingFn),
    /// CE + CLS + adaptive affinity (max) + label reassign.
    Full,
}

impl Variant {
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Baseline => {
                cfg.lambda1 = 0.0;
                cfg.lambda2 = 0.0;
            }
            Variant::Sa => {
                cfg.lambda2 = 0.0;
                cfg.affinity.mode = AffinityMode::Sa;
            }
            Variant::Aa(f) => {
                cfg.lambda2 = 0.0;
                cfg.affinity.mode = AffinityMode::Aa;
                cfg.affinity.modeling_fn = f;
            }
            Variant::Full => {
                cfg.affinity.mode = AffinityMode::Aa;
                cfg.affinity.modeling_fn = ModelingFn::Max;
            }
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Baseline => f.write_str("baseline"),
            Variant::Sa => f.write_str("sa"),
            Variant::Aa(m) => write!(f, "aa-{m}"),
            Variant::Full => f.write_str("full"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "sa" => Ok(Variant::Sa),
            "full" => Ok(Variant::Full),
            _ => match s.strip_prefix("aa-") {
                Some(m) => Ok(Variant::Aa(m.parse()?)),
                None => Err(Error::Argument(format!(
                    "variant must be baseline, sa, aa-max, aa-min, aa-plus or full, got '{s}'"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub pseudo_miou: f64,
    pub refined_miou: f64,
    pub final_total: f64,
}

pub fn train_item(scene: &SceneInstance) -> Result<TrainItem> {
    TrainItem::new(&scene.image, scene.pseudo.clone(), scene.image_labels.clone())
}

/// Train one variant on one scene and score the refined map.
pub fn run_one(scene: &SceneInstance, seed: u64, variant: Variant, base: &TrainConfig) -> Result<RunResult> {
    let item = train_item(scene)?;
    let mut cfg = variant.apply(base);
    cfg.seed = seed;
    let mut trainer = Trainer::new(cfg, &item)?;
    let log = trainer.run(&item)?;
    let refined = refine(&trainer.model, &item)?;
    let classes = item.num_classes();
    Ok(RunResult {
        variant,
        seed,
        pseudo_miou: miou(&scene.pseudo, &scene.gt, classes)?.miou,
        refined_miou: miou(&refined, &scene.gt, classes)?.miou,
        final_total: log.last().map_or(0.0, |m| m.total),
    })
}

/// Scene spec for suite seed `seed`: the template with its seed replaced.
pub fn scene_for(template: &SceneSpec, seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        ..template.clone()
    }
}

/// Run every variant on every seed. Results are grouped by seed, then variant.
pub fn run_suite(
    template: &SceneSpec,
    seeds: &[u64],
    variants: &[Variant],
    base: &TrainConfig,
) -> Result<Vec<RunResult>> {
    let mut out = Vec::with_capacity(seeds.len() * variants.len());
    for &seed in seeds {
        let scene = generate(&scene_for(template, seed))?;
        for &v in variants {
            out.push(run_one(&scene, seed, v, base)?);
        }
    }
    Ok(out)
}

/// Mean refined mIoU of a variant across its runs.
pub fn mean_miou(results: &[RunResult], variant: Variant) -> f64 {
    let v: Vec<f64> = results
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| r.refined_miou)
        .collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-seed refined mIoU difference `candidate - reference`.
pub fn paired_gains(results: &[RunResult], candidate: Variant, reference: Variant) -> Vec<(u64, f64)> {
    results
        .iter()
        .filter(|r| r.variant == candidate)
        .filter_map(|c| {
            results
                .iter()
                .find(|r| r.variant == reference && r.seed == c.seed)
                .map(|r| (c.seed, c.refined_miou - r.refined_miou))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in [
            Variant::Baseline,
            Variant::Sa,
            Variant::Aa(ModelingFn::Max),
            Variant::Aa(ModelingFn::Min),
            Variant::Aa(ModelingFn::Plus),
            Variant::Full,
        ] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("aa-mean".parse::<Variant>().is_err());
    }

    #[test]
    fn variants_set_lambdas() {
        let base = TrainConfig::default();
        let b = Variant::Baseline.apply(&base);
        assert_eq!((b.lambda1, b.lambda2), (0.0, 0.0));
        let s = Variant::Sa.apply(&base);
        assert_eq!(s.affinity.mode, AffinityMode::Sa);
        assert_eq!(s.lambda2, 0.0);
        let f = Variant::Full.apply(&base);
        assert_eq!((f.lambda1, f.lambda2), (0.1, 0.1));
        assert_eq!(f.affinity.modeling_fn, ModelingFn::Max);
    }
}
