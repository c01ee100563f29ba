//! Training objective and SGD loop.
//!
//! `total = cls + ce + lambda1 * affinity + lambda2 * label_reassign`, with the
//! label-reassign term active only during the last `lr_loss_last_epochs`
//! epochs. Confidences are recomputed from the current prediction every step
//! and treated as constants, as are the centroids and reassignments.

use serde::{Deserialize, Serialize};

use crate::affinity::{affinity_eval_f64, label_confidence_f64, AffinityConfig, AffinityMode};
use crate::error::{Error, Result};
use crate::metric::{lr_eval_frozen_f64, lr_step_f64, CentroidSet, LrConfig, Reassignment};
use crate::model::losses::{ce_loss_f64, cls_loss_f64};
use crate::model::net::{Forward, Grads, ModelShape, ToyModel};
use crate::pairs::{build_pairs, PairSet};
use crate::rng::Rng;
use crate::tensor::{validate_labels, DenseTensor, LabelMap, NEUTRAL};

fn d_epochs() -> usize {
    8
}
fn d_steps() -> usize {
    25
}
fn d_learning_rate() -> f64 {
    1e-2
}
fn d_momentum() -> f64 {
    0.9
}
fn d_lambda() -> f64 {
    0.1
}
fn d_last_epochs() -> usize {
    2
}
fn d_embed_dim() -> usize {
    16
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_steps")]
    pub steps_per_epoch: usize,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "d_lambda")]
    pub lambda1: f64,
    #[serde(default = "d_lambda")]
    pub lambda2: f64,
    #[serde(default)]
    pub affinity: AffinityConfig,
    #[serde(default)]
    pub lr_loss: LrConfig,
    #[serde(default = "d_last_epochs")]
    pub lr_loss_last_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_embed_dim")]
    pub embed_dim: usize,
    /// Include the image-level classification term.
    #[serde(default = "d_true")]
    pub cls_enabled: bool,
    /// Rebuild affinity pairs each epoch from the current prediction on the
    /// pseudo-labeled pixels instead of keeping the initial pseudo-label pairs.
    #[serde(default)]
    pub refresh_pairs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            steps_per_epoch: d_steps(),
            learning_rate: d_learning_rate(),
            momentum: d_momentum(),
            weight_decay: 0.0,
            lambda1: d_lambda(),
            lambda2: d_lambda(),
            affinity: AffinityConfig::default(),
            lr_loss: LrConfig::default(),
            lr_loss_last_epochs: d_last_epochs(),
            seed: 0,
            embed_dim: d_embed_dim(),
            cls_enabled: true,
            refresh_pairs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Argument("epochs and steps_per_epoch must be positive".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Argument(format!(
                "lambdas must be non-negative, got {} and {}",
                self.lambda1, self.lambda2
            )));
        }
        if self.lr_loss_last_epochs > self.epochs {
            return Err(Error::Argument(format!(
                "lr_loss_last_epochs ({}) exceeds epochs ({})",
                self.lr_loss_last_epochs, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Argument("invalid optimizer settings".into()));
        }
        self.affinity.validate()?;
        self.lr_loss.validate()
    }

    /// Whether the label-reassign term is part of the objective in `epoch` (1-based).
    pub fn lr_active(&self, epoch: usize) -> bool {
        self.lambda2 > 0.0 && epoch + self.lr_loss_last_epochs > self.epochs
    }
}

/// One training image with its pseudo-labels and image-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub image: Vec<f64>,
    pub pseudo: LabelMap,
    /// Multi-hot over all classes, index 0 is background.
    pub image_labels: Vec<u8>,
}

impl TrainItem {
    pub fn new(image: &DenseTensor, pseudo: LabelMap, image_labels: Vec<u8>) -> Result<Self> {
        let (height, width, channels) = image.hwc()?;
        if (height, width) != (pseudo.height(), pseudo.width()) {
            return Err(Error::Argument(format!(
                "image is {height}x{width} but pseudo-labels are {}x{}",
                pseudo.height(),
                pseudo.width()
            )));
        }
        validate_labels(&pseudo, image_labels.len())?;
        Ok(Self {
            height,
            width,
            channels,
            image: image.to_f64(),
            pseudo,
            image_labels,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.image_labels.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: usize,
    pub cls: f64,
    pub ce: f64,
    pub aa: f64,
    pub lr: f64,
    pub total: f64,
}

/// Quantities held fixed within one step (no gradient flows through them).
#[derive(Debug, Clone, PartialEq)]
pub struct StepConstants {
    pub conf: Vec<f64>,
    pub lr: Option<(CentroidSet, Reassignment)>,
}

/// Full objective evaluation at the current parameters.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: StepMetrics,
    pub grads: Grads,
    pub constants: StepConstants,
    pub forward: Forward,
    /// Hinge activity of the affinity and label-reassign terms.
    pub hinge_pattern: Vec<bool>,
}

/// Evaluate the objective. With `frozen`, step constants are taken from it
/// instead of recomputed, which makes the loss a smooth function of the
/// parameters for finite differencing.
pub fn evaluate(
    model: &ToyModel,
    item: &TrainItem,
    pairs: &PairSet,
    cfg: &TrainConfig,
    include_lr: bool,
    frozen: Option<&StepConstants>,
) -> Result<Evaluation> {
    let (h, w) = (item.height, item.width);
    let k = model.shape.num_classes;
    let fwd = model.forward(&item.image, h, w)?;
    let labels = item.pseudo.labels();

    let conf = match frozen {
        Some(c) => c.conf.clone(),
        None => label_confidence_f64(&fwd.probs, k, labels),
    };

    let ce = ce_loss_f64(&fwd.probs, k, labels);
    let cls = if cfg.cls_enabled {
        cls_loss_f64(&fwd.logits, k, &item.image_labels)?
    } else {
        crate::model::losses::LossReport {
            value: 0.0,
            grad: vec![0.0; fwd.logits.len()],
        }
    };
    let mut grad_probs = ce.grad;
    let grad_logits = cls.grad;
    let mut grad_embed = vec![0.0; fwd.embed.len()];
    let mut hinge_pattern = Vec::new();

    let mut aa = 0.0;
    if cfg.lambda1 > 0.0 {
        let conf_arg = match cfg.affinity.mode {
            AffinityMode::Sa => None,
            AffinityMode::Aa => Some(conf.as_slice()),
        };
        let eval = affinity_eval_f64(&fwd.probs, k, conf_arg, pairs, &cfg.affinity)?;
        aa = eval.total;
        for (g, a) in grad_probs.iter_mut().zip(&eval.grad_probs) {
            *g += cfg.lambda1 * a;
        }
        hinge_pattern.extend(crate::affinity::hinge_pattern_f64(
            &fwd.probs,
            k,
            conf_arg,
            pairs,
            &cfg.affinity,
        ));
    }

    let mut lr = 0.0;
    let mut lr_constants = None;
    if include_lr && cfg.lambda2 > 0.0 {
        let dim = model.shape.embed_dim;
        let (centroids, reassignment, eval) = match frozen.and_then(|f| f.lr.as_ref()) {
            Some((c, r)) => {
                let e = lr_eval_frozen_f64(&fwd.embed, dim, c, r, &cfg.lr_loss);
                (c.clone(), r.clone(), e)
            }
            None => {
                let s = lr_step_f64(&fwd.embed, dim, labels, &conf, &cfg.lr_loss)?;
                (s.centroids, s.reassignment, s.eval)
            }
        };
        lr = eval.total;
        for (g, a) in grad_embed.iter_mut().zip(&eval.grad_embed) {
            *g += cfg.lambda2 * a;
        }
        hinge_pattern.extend(crate::metric::lr_hinge_pattern_f64(
            &fwd.embed,
            dim,
            &centroids,
            &reassignment,
            &cfg.lr_loss,
        ));
        lr_constants = Some((centroids, reassignment));
    }

    let grads = model.backward(&item.image, &fwd, &grad_probs, &grad_logits, &grad_embed);
    let total = cls.value + ce.value + cfg.lambda1 * aa + cfg.lambda2 * lr;
    Ok(Evaluation {
        metrics: StepMetrics {
            epoch: 0,
            step: 0,
            cls: cls.value,
            ce: ce.value,
            aa,
            lr,
            total,
        },
        grads,
        constants: StepConstants {
            conf,
            lr: lr_constants,
        },
        forward: fwd,
        hinge_pattern,
    })
}

/// Model plus optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ToyModel,
    pub cfg: TrainConfig,
    velocity: Grads,
    pairs: PairSet,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, item: &TrainItem) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        let shape = ModelShape::new(item.channels, cfg.embed_dim, item.num_classes());
        let model = ToyModel::init(shape, &mut rng)?;
        Self::with_model(cfg, model, item)
    }

    pub fn with_model(cfg: TrainConfig, model: ToyModel, item: &TrainItem) -> Result<Self> {
        cfg.validate()?;
        if model.shape.num_classes != item.num_classes() || model.shape.in_channels != item.channels {
            return Err(Error::Argument("model shape does not match the training item".into()));
        }
        let pairs = build_pairs(&item.pseudo, &cfg.affinity.kernels)?;
        let velocity = Grads::zeros_like(&model);
        Ok(Self {
            model,
            cfg,
            velocity,
            pairs,
            step: 0,
        })
    }

    pub fn pairs(&self) -> &PairSet {
        &self.pairs
    }

    /// One SGD-with-momentum update. `epoch` is 1-based.
    pub fn train_step(&mut self, item: &TrainItem, epoch: usize) -> Result<StepMetrics> {
        let include_lr = self.cfg.lr_active(epoch);
        let eval = evaluate(&self.model, item, &self.pairs, &self.cfg, include_lr, None)?;
        let (lr, mu, wd) = (self.cfg.learning_rate, self.cfg.momentum, self.cfg.weight_decay);
        let vel = [
            &mut self.velocity.conv1_w,
            &mut self.velocity.conv1_b,
            &mut self.velocity.conv2_w,
            &mut self.velocity.conv2_b,
            &mut self.velocity.head_w,
            &mut self.velocity.head_b,
        ];
        for ((p, v), g) in self.model.params_mut().into_iter().zip(vel).zip(eval.grads.tensors()) {
            for ((pv, vv), &gv) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *vv = mu * *vv + gv + wd * *pv;
                *pv -= lr * *vv;
            }
        }
        if let Some(bad) = self.model.params().iter().flat_map(|p| p.iter()).find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("parameter became non-finite ({bad})")));
        }
        self.step += 1;
        Ok(StepMetrics {
            epoch,
            step: self.step,
            ..eval.metrics
        })
    }

    /// Rebuild pairs from the current prediction on pseudo-labeled pixels.
    pub fn refresh_pairs(&mut self, item: &TrainItem) -> Result<()> {
        let pred = refine(&self.model, item)?;
        let mut labels = item.pseudo.clone();
        for (i, l) in pred.labels().iter().enumerate() {
            if item.pseudo.labels()[i] != NEUTRAL {
                labels.set(i / item.width, i % item.width, *l);
            }
        }
        self.pairs = build_pairs(&labels, &self.cfg.affinity.kernels)?;
        Ok(())
    }

    /// Train for the configured epochs, returning per-step metrics.
    pub fn run(&mut self, item: &TrainItem) -> Result<Vec<StepMetrics>> {
        let mut log = Vec::with_capacity(self.cfg.epochs * self.cfg.steps_per_epoch);
        for epoch in 1..=self.cfg.epochs {
            if self.cfg.refresh_pairs && epoch > 1 {
                self.refresh_pairs(item)?;
            }
            for _ in 0..self.cfg.steps_per_epoch {
                log.push(self.train_step(item, epoch)?);
            }
        }
        Ok(log)
    }
}

/// Dense argmax label map over every pixel (lowest class on ties).
pub fn refine(model: &ToyModel, item: &TrainItem) -> Result<LabelMap> {
    refine_image(model, &item.image, item.height, item.width)
}

pub fn refine_image(model: &ToyModel, image: &[f64], height: usize, width: usize) -> Result<LabelMap> {
    let fwd = model.forward(image, height, width)?;
    let k = model.shape.num_classes;
    let labels = fwd
        .probs
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(height, width, labels)
}

pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut out = String::from("epoch,step,cls,ce,aa,lr,total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.step, r.cls, r.ce, r.aa, r.lr, r.total
        ));
    }
    out
}
