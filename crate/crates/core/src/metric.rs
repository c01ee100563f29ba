//! Class centroids, cosine-similarity label reassignment and the
//! label-reassign loss.
//!
//! Each labeled pixel embedding `x_i` is reassigned to the centroid it is most
//! similar to, `a(i)`. The loss, split into a background part (pixels assigned
//! to class 0) and a foreground part, is
//!
//! ```text
//! L_part = 1/|E_part| * sum_{i in E_part} alpha_i * sum_{k != a(i)} max(0, n + S(x_i, c_k) - S(x_i, c_a(i)))
//! L      = L_bg + L_fg
//! ```
//!
//! with `S` the cosine similarity and `alpha_i` a focusing factor that is 1 for
//! ambiguous pixels and shrinks as the gap to the runner-up centroid grows:
//!
//! ```text
//! S'      = (1 + S) / 2
//! alpha_i = (1 - (S'_best - S'_second) / (S'_best + S'_second)) ^ gamma
//! ```
//!
//! Centroids, assignments and `alpha` are constants of a step: the gradient
//! flows only through `x_i` in the similarities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, LabelMap, NEUTRAL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    #[serde(default = "default_margin_n")]
    pub margin_n: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_sim_eps")]
    pub sim_eps: f64,
}

fn default_margin_n() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    2.0
}
fn default_sim_eps() -> f64 {
    1e-12
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            margin_n: default_margin_n(),
            gamma: default_gamma(),
            sim_eps: default_sim_eps(),
        }
    }
}

impl LrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_n > 0.0 && self.margin_n.is_finite()) {
            return Err(Error::Argument(format!(
                "margin n must be positive, got {}",
                self.margin_n
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Argument(format!(
                "gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        if !(self.sim_eps > 0.0) {
            return Err(Error::Argument(format!(
                "sim_eps must be positive, got {}",
                self.sim_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub class: u8,
    pub vector: Vec<f64>,
    pub members: usize,
    /// Sum of member confidences.
    pub weight: f64,
}

/// Centroids of the classes present in a label map, ordered by class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub dim: usize,
    pub centroids: Vec<Centroid>,
}

impl CentroidSet {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn get(&self, class: u8) -> Option<&Centroid> {
        self.centroids.iter().find(|c| c.class == class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelAssignment {
    pub pixel: usize,
    /// Index into `CentroidSet::centroids` (not the class id).
    pub slot: usize,
    pub class: u8,
    pub best_sim: f64,
    pub second_sim: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reassignment {
    pub pixels: Vec<PixelAssignment>,
    /// Indices into `pixels` assigned to class 0.
    pub bg: Vec<usize>,
    /// Indices into `pixels` assigned to any other class.
    pub fg: Vec<usize>,
}

impl Reassignment {
    /// Write reassigned classes into a copy of `labels`; neutral pixels stay neutral.
    pub fn apply(&self, labels: &LabelMap) -> LabelMap {
        let mut out = labels.clone();
        for p in &self.pixels {
            out.set(p.pixel / labels.width(), p.pixel % labels.width(), p.class);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrEval {
    pub total: f64,
    pub l_bg: f64,
    pub l_fg: f64,
    pub grad_embed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrReport {
    pub total: f64,
    /// Background part.
    pub l_minus: f64,
    /// Foreground part.
    pub l_plus: f64,
    pub grad_embed: DenseTensor,
    pub centroids: CentroidSet,
    pub reassignment: Reassignment,
}

/// `a.b / (max(|a|, eps) * max(|b|, eps))`.
pub fn cosine_sim(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt().max(eps) * nb.sqrt().max(eps))
}

fn check_inputs(embed: &[f64], dim: usize, labels: &[u8], conf: &[f64]) -> Result<()> {
    if dim == 0 || embed.len() != labels.len() * dim {
        return Err(Error::Argument(format!(
            "embedding buffer has {} entries, expected {} pixels x {dim}",
            embed.len(),
            labels.len()
        )));
    }
    if conf.len() != labels.len() {
        return Err(Error::Argument(format!(
            "confidence map has {} entries, expected {}",
            conf.len(),
            labels.len()
        )));
    }
    if let Some(pos) = conf.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Argument(format!(
            "confidence {} at pixel {pos} outside [0, 1]",
            conf[pos]
        )));
    }
    Ok(())
}

/// Confidence-weighted per-class mean of labeled embeddings. A class whose
/// members all have zero confidence falls back to the plain mean.
pub fn compute_centroids_f64(
    embed: &[f64],
    dim: usize,
    labels: &[u8],
    conf: &[f64],
) -> Result<CentroidSet> {
    check_inputs(embed, dim, labels, conf)?;
    // Per class: (weighted sum, plain sum, members, total weight).
    let mut acc: Vec<Option<(Vec<f64>, Vec<f64>, usize, f64)>> = vec![None; 256];
    for (i, &l) in labels.iter().enumerate() {
        if l == NEUTRAL {
            continue;
        }
        let x = &embed[i * dim..(i + 1) * dim];
        let slot = acc[l as usize].get_or_insert_with(|| (vec![0.0; dim], vec![0.0; dim], 0, 0.0));
        for k in 0..dim {
            slot.0[k] += conf[i] * x[k];
            slot.1[k] += x[k];
        }
        slot.2 += 1;
        slot.3 += conf[i];
    }
    let centroids: Vec<Centroid> = acc
        .into_iter()
        .enumerate()
        .filter_map(|(class, slot)| {
            let (weighted, plain, members, weight) = slot?;
            let vector = if weight > 0.0 {
                weighted.iter().map(|v| v / weight).collect()
            } else {
                plain.iter().map(|v| v / members as f64).collect()
            };
            Some(Centroid {
                class: class as u8,
                vector,
                members,
                weight,
            })
        })
        .collect();
    if centroids.len() < 2 {
        return Err(Error::Validation(format!(
            "LR loss undefined: need at least 2 classes with labeled pixels, found {}",
            centroids.len()
        )));
    }
    Ok(CentroidSet { dim, centroids })
}

/// Focusing factor from the best and runner-up cosine similarities.
pub fn modulation_alpha(best_sim: f64, second_sim: f64, gamma: f64) -> f64 {
    let b = (1.0 + best_sim) / 2.0;
    let s = (1.0 + second_sim) / 2.0;
    let denom = b + s;
    let ratio = if denom > 0.0 { (b - s) / denom } else { 0.0 };
    (1.0 - ratio).clamp(0.0, 1.0).powf(gamma)
}

pub fn reassign_f64(
    embed: &[f64],
    dim: usize,
    labels: &[u8],
    centroids: &CentroidSet,
    cfg: &LrConfig,
) -> Result<Reassignment> {
    cfg.validate()?;
    if centroids.len() < 2 {
        return Err(Error::Validation(
            "reassignment needs at least 2 centroids".into(),
        ));
    }
    if centroids.dim != dim || embed.len() != labels.len() * dim {
        return Err(Error::Argument(format!(
            "embedding dim {dim} / centroid dim {} / buffer {} mismatch",
            centroids.dim,
            embed.len()
        )));
    }
    let mut pixels = Vec::with_capacity(labels.len());
    let (mut bg, mut fg) = (Vec::new(), Vec::new());
    for (i, &l) in labels.iter().enumerate() {
        if l == NEUTRAL {
            continue;
        }
        let x = &embed[i * dim..(i + 1) * dim];
        let mut best = (0usize, f64::NEG_INFINITY);
        let mut second = f64::NEG_INFINITY;
        for (slot, c) in centroids.centroids.iter().enumerate() {
            let s = cosine_sim(x, &c.vector, cfg.sim_eps);
            // Strict comparison keeps ties on the lowest class index.
            if s > best.1 {
                second = best.1;
                best = (slot, s);
            } else if s > second {
                second = s;
            }
        }
        let class = centroids.centroids[best.0].class;
        let idx = pixels.len();
        if class == 0 {
            bg.push(idx);
        } else {
            fg.push(idx);
        }
        pixels.push(PixelAssignment {
            pixel: i,
            slot: best.0,
            class,
            best_sim: best.1,
            second_sim: second,
            alpha: modulation_alpha(best.1, second, cfg.gamma),
        });
    }
    Ok(Reassignment { pixels, bg, fg })
}

/// Cosine similarity and its gradient w.r.t. `x` (centroid held fixed).
/// The gradient is zero when `|x| <= eps`, where the direction is undefined.
fn cosine_with_grad(x: &[f64], c: &[f64], eps: f64, grad: &mut [f64]) -> f64 {
    let (mut dot, mut nx2, mut nc2) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(c) {
        dot += a * b;
        nx2 += a * a;
        nc2 += b * b;
    }
    let nx = nx2.sqrt();
    let nxe = nx.max(eps);
    let nce = nc2.sqrt().max(eps);
    let s = dot / (nxe * nce);
    if nx > eps {
        let inv = 1.0 / (nxe * nce);
        let k = s / (nx * nx);
        for ((g, &a), &b) in grad.iter_mut().zip(x).zip(c) {
            *g = b * inv - k * a;
        }
    } else {
        grad.iter_mut().for_each(|g| *g = 0.0);
    }
    s
}

/// Loss and gradient with centroids, assignment and alpha held fixed.
pub fn lr_eval_frozen_f64(
    embed: &[f64],
    dim: usize,
    centroids: &CentroidSet,
    assignment: &Reassignment,
    cfg: &LrConfig,
) -> LrEval {
    let n_cent = centroids.len();
    let mut grad_embed = vec![0.0; embed.len()];
    let mut sims = vec![0.0; n_cent];
    let mut sim_grads = vec![0.0; n_cent * dim];

    let mut part = |members: &[usize], grad_embed: &mut [f64]| -> f64 {
        if members.is_empty() {
            return 0.0;
        }
        let scale = 1.0 / members.len() as f64;
        let mut sum = 0.0;
        for &m in members {
            let pa = &assignment.pixels[m];
            let x = &embed[pa.pixel * dim..(pa.pixel + 1) * dim];
            for (k, c) in centroids.centroids.iter().enumerate() {
                sims[k] = cosine_with_grad(x, &c.vector, cfg.sim_eps, &mut sim_grads[k * dim..(k + 1) * dim]);
            }
            let own = sims[pa.slot];
            let mut hinge_sum = 0.0;
            let g = &mut grad_embed[pa.pixel * dim..(pa.pixel + 1) * dim];
            let coef = pa.alpha * scale;
            for k in 0..n_cent {
                if k == pa.slot {
                    continue;
                }
                let h = cfg.margin_n + sims[k] - own;
                if h > 0.0 {
                    hinge_sum += h;
                    for d in 0..dim {
                        g[d] += coef * (sim_grads[k * dim + d] - sim_grads[pa.slot * dim + d]);
                    }
                }
            }
            sum += pa.alpha * hinge_sum;
        }
        sum * scale
    };
    let l_bg = part(&assignment.bg, &mut grad_embed);
    let l_fg = part(&assignment.fg, &mut grad_embed);
    LrEval {
        total: l_bg + l_fg,
        l_bg,
        l_fg,
        grad_embed,
    }
}

/// Active-hinge pattern under frozen step constants, for kink exclusion.
pub(crate) fn lr_hinge_pattern_f64(
    embed: &[f64],
    dim: usize,
    centroids: &CentroidSet,
    assignment: &Reassignment,
    cfg: &LrConfig,
) -> Vec<bool> {
    let mut out = Vec::new();
    for pa in &assignment.pixels {
        let x = &embed[pa.pixel * dim..(pa.pixel + 1) * dim];
        let sims: Vec<f64> = centroids
            .centroids
            .iter()
            .map(|c| cosine_sim(x, &c.vector, cfg.sim_eps))
            .collect();
        for (k, &s) in sims.iter().enumerate() {
            if k != pa.slot {
                out.push(cfg.margin_n + s - sims[pa.slot] > 0.0);
            }
        }
    }
    out
}

/// Step constants plus the evaluated loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LrStep {
    pub centroids: CentroidSet,
    pub reassignment: Reassignment,
    pub eval: LrEval,
}

pub fn lr_step_f64(
    embed: &[f64],
    dim: usize,
    labels: &[u8],
    conf: &[f64],
    cfg: &LrConfig,
) -> Result<LrStep> {
    cfg.validate()?;
    let centroids = compute_centroids_f64(embed, dim, labels, conf)?;
    let reassignment = reassign_f64(embed, dim, labels, &centroids, cfg)?;
    let eval = lr_eval_frozen_f64(embed, dim, &centroids, &reassignment, cfg);
    Ok(LrStep {
        centroids,
        reassignment,
        eval,
    })
}

fn embed_dims(embed: &DenseTensor, labels: &LabelMap) -> Result<usize> {
    let (h, w, c) = embed.hwc()?;
    if (h, w) != (labels.height(), labels.width()) {
        return Err(Error::Argument(format!(
            "embedding is {h}x{w} but labels are {}x{}",
            labels.height(),
            labels.width()
        )));
    }
    Ok(c)
}

fn conf_f64(conf: &DenseTensor, labels: &LabelMap) -> Result<Vec<f64>> {
    let (h, w, c) = conf.hwc()?;
    if (h, w, c) != (labels.height(), labels.width(), 1) {
        return Err(Error::Argument(format!(
            "confidence map dims {:?} do not match {}x{}",
            conf.dims(),
            labels.height(),
            labels.width()
        )));
    }
    Ok(conf.to_f64())
}

pub fn compute_centroids(
    embed: &DenseTensor,
    labels: &LabelMap,
    conf: &DenseTensor,
) -> Result<CentroidSet> {
    let dim = embed_dims(embed, labels)?;
    compute_centroids_f64(&embed.to_f64(), dim, labels.labels(), &conf_f64(conf, labels)?)
}

pub fn reassign(
    embed: &DenseTensor,
    labels: &LabelMap,
    centroids: &CentroidSet,
    cfg: &LrConfig,
) -> Result<Reassignment> {
    let dim = embed_dims(embed, labels)?;
    reassign_f64(&embed.to_f64(), dim, labels.labels(), centroids, cfg)
}

pub fn lr_loss(
    embed: &DenseTensor,
    labels: &LabelMap,
    conf: &DenseTensor,
    cfg: &LrConfig,
) -> Result<LrReport> {
    let dim = embed_dims(embed, labels)?;
    let step = lr_step_f64(&embed.to_f64(), dim, labels.labels(), &conf_f64(conf, labels)?, cfg)?;
    Ok(LrReport {
        total: step.eval.total,
        l_minus: step.eval.l_bg,
        l_plus: step.eval.l_fg,
        grad_embed: DenseTensor::from_f64(embed.dims().to_vec(), &step.eval.grad_embed)?,
        centroids: step.centroids,
        reassignment: step.reassignment,
    })
}
