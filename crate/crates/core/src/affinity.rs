//! Standard and adaptive pairwise affinity losses.
//!
//! For a pair `(i, j)` the affinity `W_ij` is the KL divergence from the
//! prediction at `i` to the prediction at `j`. Per dilation:
//!
//! ```text
//! L_fg  = mean over fg-positive pairs of  w_ij * W_ij
//! L_bg  = mean over bg-positive pairs of  w_ij * W_ij
//! L_neg = mean over negative pairs of     max(0, w_ij * m - W_ij)
//! L_d   = L_fg + L_bg + 2 * L_neg
//! ```
//!
//! and the loss is the sum of `L_d` over dilations. The standard loss uses
//! `w_ij = 1`; the adaptive loss uses the connectivity `w_ij = f(V_i, V_j)`
//! computed from per-pixel confidences.
//!
//! All arithmetic runs in `f64`. The `*_f64` entry points operate on raw
//! slices so gradient checks can perturb inputs without `f32` rounding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::{KernelSet, Pair, PairSet};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AffinityMode {
    Sa,
    Aa,
}

/// How two pixel confidences combine into a connection weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelingFn {
    #[default]
    Max,
    Min,
    /// Arithmetic mean `(V_i + V_j) / 2`.
    Plus,
}

impl std::str::FromStr for ModelingFn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(ModelingFn::Max),
            "min" => Ok(ModelingFn::Min),
            "plus" => Ok(ModelingFn::Plus),
            _ => Err(Error::Argument(format!(
                "unknown modeling function {s:?}, expected max|min|plus"
            ))),
        }
    }
}

impl std::fmt::Display for ModelingFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelingFn::Max => "max",
            ModelingFn::Min => "min",
            ModelingFn::Plus => "plus",
        })
    }
}

impl ModelingFn {
    fn apply(self, vi: f64, vj: f64) -> f64 {
        match self {
            ModelingFn::Max => vi.max(vj),
            ModelingFn::Min => vi.min(vj),
            ModelingFn::Plus => (vi + vj) / 2.0,
        }
    }

    /// Partial derivatives w.r.t. `(vi, vj)`. Ties route to `vi`.
    fn partials(self, vi: f64, vj: f64) -> (f64, f64) {
        match self {
            ModelingFn::Max if vi >= vj => (1.0, 0.0),
            ModelingFn::Max => (0.0, 1.0),
            ModelingFn::Min if vi <= vj => (1.0, 0.0),
            ModelingFn::Min => (0.0, 1.0),
            ModelingFn::Plus => (0.5, 0.5),
        }
    }
}

fn default_floor() -> f64 {
    1e-8
}

fn default_true() -> bool {
    true
}

fn default_threads() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityConfig {
    pub margin_m: f64,
    pub kernels: KernelSet,
    pub mode: AffinityMode,
    #[serde(default)]
    pub modeling_fn: ModelingFn,
    #[serde(default = "default_floor")]
    pub prob_floor: f64,
    /// Treat the connectivity weight as a constant (no gradient into confidences).
    #[serde(default = "default_true")]
    pub detach_conf: bool,
    /// Worker threads for per-dilation evaluation. Results are bit-identical
    /// for every value.
    #[serde(default = "default_threads")]
    pub threads: usize,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self {
            margin_m: 3.0,
            kernels: KernelSet::default(),
            mode: AffinityMode::Aa,
            modeling_fn: ModelingFn::Max,
            prob_floor: default_floor(),
            detach_conf: true,
            threads: 1,
        }
    }
}

impl AffinityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_m > 0.0 && self.margin_m.is_finite()) {
            return Err(Error::Argument(format!(
                "margin m must be positive, got {}",
                self.margin_m
            )));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor <= 1e-3) {
            return Err(Error::Argument(format!(
                "prob_floor must be in (0, 1e-3], got {}",
                self.prob_floor
            )));
        }
        if self.threads == 0 {
            return Err(Error::Argument("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilationTerms {
    pub dilation: u32,
    pub fg: f64,
    pub bg: f64,
    pub neg: f64,
}

impl DilationTerms {
    /// `fg + bg + 2 * neg`.
    pub fn combined(&self) -> f64 {
        self.fg + self.bg + 2.0 * self.neg
    }
}

/// Loss value and gradients at full precision.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityEval {
    pub total: f64,
    pub per_dilation: Vec<DilationTerms>,
    pub grad_probs: Vec<f64>,
    pub grad_conf: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityReport {
    pub total: f64,
    pub per_dilation: Vec<DilationTerms>,
    pub grad_probs: DenseTensor,
    pub grad_conf: Option<DenseTensor>,
}

/// `sum_c p_c * ln(max(p_c, floor) / max(q_c, floor))`.
pub fn kl_pair(p: &[f64], q: &[f64], floor: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Argument(format!(
            "probability vectors differ in length: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(p
        .iter()
        .zip(q)
        .map(|(&pc, &qc)| pc * (pc.max(floor).ln() - qc.max(floor).ln()))
        .sum())
}

pub fn connectivity(v_i: f64, v_j: f64, f: ModelingFn) -> Result<f64> {
    for (name, v) in [("v_i", v_i), ("v_j", v_j)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Argument(format!(
                "confidence {name}={v} outside [0, 1]"
            )));
        }
    }
    Ok(f.apply(v_i, v_j))
}

/// `max(0, omega * m - W)` for one negative pair.
#[inline]
pub fn negative_hinge(omega: f64, kl: f64, margin: f64) -> f64 {
    (omega * margin - kl).max(0.0)
}

/// Per-entry quantities shared across all pairs.
struct LogTable {
    /// `ln(max(p, floor))`
    log_p: Vec<f64>,
    /// `1/p` above the floor, 0 below.
    inv_p: Vec<f64>,
    /// 1 above the floor, 0 below.
    above: Vec<f64>,
}

impl LogTable {
    fn new(probs: &[f64], floor: f64) -> Self {
        let mut log_p = Vec::with_capacity(probs.len());
        let mut inv_p = Vec::with_capacity(probs.len());
        let mut above = Vec::with_capacity(probs.len());
        for &p in probs {
            log_p.push(p.max(floor).ln());
            if p > floor {
                inv_p.push(1.0 / p);
                above.push(1.0);
            } else {
                inv_p.push(0.0);
                above.push(0.0);
            }
        }
        Self { log_p, inv_p, above }
    }
}

struct Inputs<'a> {
    probs: &'a [f64],
    channels: usize,
    conf: Option<&'a [f64]>,
    table: LogTable,
    margin: f64,
    modeling_fn: ModelingFn,
    want_conf_grad: bool,
}

impl Inputs<'_> {
    #[inline]
    fn kl(&self, pair: Pair) -> f64 {
        let c = self.channels;
        let (bi, bj) = (pair.i as usize * c, pair.j as usize * c);
        let p = &self.probs[bi..bi + c];
        let li = &self.table.log_p[bi..bi + c];
        let lj = &self.table.log_p[bj..bj + c];
        let mut acc = 0.0;
        for k in 0..c {
            acc += p[k] * (li[k] - lj[k]);
        }
        acc
    }

    #[inline]
    fn weight(&self, pair: Pair) -> f64 {
        match self.conf {
            Some(v) => self
                .modeling_fn
                .apply(v[pair.i as usize], v[pair.j as usize]),
            None => 1.0,
        }
    }

    /// Adds `g * dW/dp` for one pair into `grad`.
    #[inline]
    fn backprop_kl(&self, pair: Pair, g: f64, grad: &mut [f64]) {
        let c = self.channels;
        let (bi, bj) = (pair.i as usize * c, pair.j as usize * c);
        let t = &self.table;
        for k in 0..c {
            let pi = self.probs[bi + k];
            grad[bi + k] += g * (t.log_p[bi + k] - t.log_p[bj + k] + t.above[bi + k]);
            grad[bj + k] -= g * pi * t.inv_p[bj + k];
        }
    }

    #[inline]
    fn backprop_conf(&self, pair: Pair, g: f64, grad: &mut [f64]) {
        if let Some(v) = self.conf {
            let (i, j) = (pair.i as usize, pair.j as usize);
            let (di, dj) = self.modeling_fn.partials(v[i], v[j]);
            grad[i] += g * di;
            grad[j] += g * dj;
        }
    }
}

struct DilationOut {
    terms: DilationTerms,
    grad_probs: Vec<f64>,
    grad_conf: Option<Vec<f64>>,
}

fn eval_dilation(inp: &Inputs<'_>, dp: &crate::pairs::DilationPairs) -> DilationOut {
    let mut grad_probs = vec![0.0; inp.probs.len()];
    let mut grad_conf = inp
        .want_conf_grad
        .then(|| vec![0.0; inp.probs.len() / inp.channels]);

    let positive = |pairs: &[Pair], grad_probs: &mut [f64], grad_conf: &mut Option<Vec<f64>>| {
        if pairs.is_empty() {
            return 0.0;
        }
        let scale = 1.0 / pairs.len() as f64;
        let mut sum = 0.0;
        for &pair in pairs {
            let w = inp.weight(pair);
            let kl = inp.kl(pair);
            sum += w * kl;
            inp.backprop_kl(pair, w * scale, grad_probs);
            if let Some(gc) = grad_conf.as_deref_mut() {
                inp.backprop_conf(pair, kl * scale, gc);
            }
        }
        sum * scale
    };
    let fg = positive(&dp.fg_pos, &mut grad_probs, &mut grad_conf);
    let bg = positive(&dp.bg_pos, &mut grad_probs, &mut grad_conf);

    let neg = if dp.neg.is_empty() {
        0.0
    } else {
        let scale = 1.0 / dp.neg.len() as f64;
        // d(2 * L_neg) / d(hinge) = 2 / |P-|
        let g = 2.0 * scale;
        let mut sum = 0.0;
        for &pair in &dp.neg {
            let w = inp.weight(pair);
            let kl = inp.kl(pair);
            let slack = negative_hinge(w, kl, inp.margin);
            if slack > 0.0 {
                sum += slack;
                inp.backprop_kl(pair, -g, &mut grad_probs);
                if let Some(gc) = grad_conf.as_deref_mut() {
                    inp.backprop_conf(pair, g * inp.margin, gc);
                }
            }
        }
        sum * scale
    };

    DilationOut {
        terms: DilationTerms {
            dilation: dp.dilation,
            fg,
            bg,
            neg,
        },
        grad_probs,
        grad_conf,
    }
}

/// Evaluate the affinity loss on an `H x W x C` probability buffer.
///
/// `conf` selects the adaptive form; `None` gives the standard form.
pub fn affinity_eval_f64(
    probs: &[f64],
    channels: usize,
    conf: Option<&[f64]>,
    pairs: &PairSet,
    cfg: &AffinityConfig,
) -> Result<AffinityEval> {
    cfg.validate()?;
    let npix = pairs.height * pairs.width;
    if channels == 0 || probs.len() != npix * channels {
        return Err(Error::Argument(format!(
            "probability buffer has {} entries, expected {}x{}x{channels}",
            probs.len(),
            pairs.height,
            pairs.width
        )));
    }
    if let Some(v) = conf {
        if v.len() != npix {
            return Err(Error::Argument(format!(
                "confidence map has {} entries, expected {}x{}",
                v.len(),
                pairs.height,
                pairs.width
            )));
        }
        if let Some(pos) = v.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Argument(format!(
                "confidence {} at pixel {pos} outside [0, 1]",
                v[pos]
            )));
        }
    }
    let inp = Inputs {
        probs,
        channels,
        conf,
        table: LogTable::new(probs, cfg.prob_floor),
        margin: cfg.margin_m,
        modeling_fn: cfg.modeling_fn,
        want_conf_grad: conf.is_some() && !cfg.detach_conf,
    };

    let mut total = 0.0;
    let mut per_dilation = Vec::with_capacity(pairs.per_dilation.len());
    let mut grad_probs = vec![0.0; probs.len()];
    let mut grad_conf = inp.want_conf_grad.then(|| vec![0.0; npix]);
    let mut merge = |out: DilationOut| {
        total += out.terms.combined();
        per_dilation.push(out.terms);
        for (a, b) in grad_probs.iter_mut().zip(&out.grad_probs) {
            *a += b;
        }
        if let (Some(acc), Some(g)) = (grad_conf.as_mut(), out.grad_conf) {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
    };

    if cfg.threads <= 1 || pairs.per_dilation.len() <= 1 {
        for dp in &pairs.per_dilation {
            merge(eval_dilation(&inp, dp));
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::Argument(format!("thread pool: {e}")))?;
        let outs: Vec<DilationOut> = pool.install(|| {
            pairs
                .per_dilation
                .par_iter()
                .map(|dp| eval_dilation(&inp, dp))
                .collect()
        });
        // Merge in dilation order so the result matches the sequential path.
        for out in outs {
            merge(out);
        }
    }

    Ok(AffinityEval {
        total,
        per_dilation,
        grad_probs,
        grad_conf,
    })
}

/// Negative-pair hinge activity pattern (`true` where `w*m - W > 0`), in
/// dilation then pair order. Used to exclude kinks from finite differences.
pub(crate) fn hinge_pattern_f64(
    probs: &[f64],
    channels: usize,
    conf: Option<&[f64]>,
    pairs: &PairSet,
    cfg: &AffinityConfig,
) -> Vec<bool> {
    let inp = Inputs {
        probs,
        channels,
        conf,
        table: LogTable::new(probs, cfg.prob_floor),
        margin: cfg.margin_m,
        modeling_fn: cfg.modeling_fn,
        want_conf_grad: false,
    };
    pairs
        .per_dilation
        .iter()
        .flat_map(|dp| dp.neg.iter())
        .map(|&p| inp.weight(p) * inp.margin - inp.kl(p) > 0.0)
        .collect()
}

fn check_probs(probs: &DenseTensor, pairs: &PairSet) -> Result<usize> {
    let (h, w, c) = probs.hwc()?;
    if (h, w) != (pairs.height, pairs.width) {
        return Err(Error::Argument(format!(
            "probability map is {h}x{w} but pairs were built for {}x{}",
            pairs.height, pairs.width
        )));
    }
    Ok(c)
}

fn to_report(eval: AffinityEval, probs: &DenseTensor, h: usize, w: usize) -> Result<AffinityReport> {
    Ok(AffinityReport {
        total: eval.total,
        per_dilation: eval.per_dilation,
        grad_probs: DenseTensor::from_f64(probs.dims().to_vec(), &eval.grad_probs)?,
        grad_conf: eval
            .grad_conf
            .map(|g| DenseTensor::from_f64(vec![h, w], &g))
            .transpose()?,
    })
}

pub fn sa_loss(probs: &DenseTensor, pairs: &PairSet, cfg: &AffinityConfig) -> Result<AffinityReport> {
    if cfg.mode != AffinityMode::Sa {
        return Err(Error::Argument("sa_loss called with mode = aa".into()));
    }
    let c = check_probs(probs, pairs)?;
    let eval = affinity_eval_f64(&probs.to_f64(), c, None, pairs, cfg)?;
    to_report(eval, probs, pairs.height, pairs.width)
}

pub fn aa_loss(
    probs: &DenseTensor,
    conf: &DenseTensor,
    pairs: &PairSet,
    cfg: &AffinityConfig,
) -> Result<AffinityReport> {
    if cfg.mode != AffinityMode::Aa {
        return Err(Error::Argument("aa_loss called with mode = sa".into()));
    }
    let c = check_probs(probs, pairs)?;
    let (ch, cw, cc) = conf.hwc()?;
    if (ch, cw, cc) != (pairs.height, pairs.width, 1) {
        return Err(Error::Argument(format!(
            "confidence map dims {:?} do not match {}x{}",
            conf.dims(),
            pairs.height,
            pairs.width
        )));
    }
    let conf64 = conf.to_f64();
    let eval = affinity_eval_f64(&probs.to_f64(), c, Some(&conf64), pairs, cfg)?;
    to_report(eval, probs, pairs.height, pairs.width)
}

/// Confidence map: the predicted probability of each pixel's label. Neutral
/// pixels get 0 (no pair touches them).
pub fn label_confidence_f64(probs: &[f64], channels: usize, labels: &[u8]) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < channels {
                probs[i * channels + l as usize].clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::build_pairs;
    use crate::tensor::LabelMap;

    fn cfg(mode: AffinityMode, kernels: &[u32]) -> AffinityConfig {
        AffinityConfig {
            mode,
            kernels: KernelSet::new(kernels.to_vec()).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_pair(&[0.5, 0.5], &[0.5, 0.5], 1e-8).unwrap(), 0.0);
        let v = kl_pair(&[0.8, 0.2], &[0.5, 0.5], 1e-8).unwrap();
        assert!((v - 0.192_745).abs() < 1e-6, "{v}");
        let v = kl_pair(&[1.0, 0.0], &[0.5, 0.5], 1e-8).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 2e-7, "{v}");
        assert!(kl_pair(&[1.0], &[0.5, 0.5], 1e-8).is_err());
    }

    #[test]
    fn kl_self_is_exactly_zero() {
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(kl_pair(&p, &p, 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn connectivity_examples() {
        assert_eq!(connectivity(0.3, 0.8, ModelingFn::Max).unwrap(), 0.8);
        assert_eq!(connectivity(0.3, 0.8, ModelingFn::Min).unwrap(), 0.3);
        assert!((connectivity(0.3, 0.8, ModelingFn::Plus).unwrap() - 0.55).abs() < 1e-15);
        for f in [ModelingFn::Max, ModelingFn::Min, ModelingFn::Plus] {
            assert_eq!(connectivity(1.0, 1.0, f).unwrap(), 1.0);
        }
        assert!(connectivity(1.2, 0.5, ModelingFn::Max).is_err());
        assert!(connectivity(0.2, -0.1, ModelingFn::Max).is_err());
    }

    #[test]
    fn uniform_probs_open_the_hinge() {
        let mut rng = crate::rng::Rng::new(1);
        let labels: Vec<u8> = (0..36).map(|_| rng.below(3) as u8).collect();
        let labels = LabelMap::new(6, 6, labels).unwrap();
        let c = cfg(AffinityMode::Sa, &[1, 2]);
        let pairs = build_pairs(&labels, &c.kernels).unwrap();
        let probs = DenseTensor::new(vec![6, 6, 3], vec![1.0 / 3.0; 108]).unwrap();
        let r = sa_loss(&probs, &pairs, &c).unwrap();
        for t in &r.per_dilation {
            assert_eq!(t.fg, 0.0);
            assert_eq!(t.bg, 0.0);
            assert!((t.neg - 3.0).abs() < 1e-12);
        }
        assert!((r.total - 2.0 * 2.0 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_hand_value() {
        let labels = LabelMap::new(2, 2, vec![1, 1, 0, 255]).unwrap();
        let c = cfg(AffinityMode::Sa, &[1]);
        let pairs = build_pairs(&labels, &c.kernels).unwrap();
        let probs = DenseTensor::new(
            vec![2, 2, 2],
            vec![0.9, 0.1, 0.9, 0.1, 0.1, 0.9, 0.5, 0.5],
        )
        .unwrap();
        let r = sa_loss(&probs, &pairs, &c).unwrap();
        // fg pairs have identical rows (after f32 storage) so W = 0 exactly.
        // Every negative pair is KL between [.9,.1] and [.1,.9] in some order,
        // both equal to 0.8 ln 9.
        let p = [0.9f32 as f64, 0.1f32 as f64];
        let q = [0.1f32 as f64, 0.9f32 as f64];
        let w = p[0] * (p[0].ln() - q[0].ln()) + p[1] * (p[1].ln() - q[1].ln());
        let want = 2.0 * (3.0 - w);
        assert_eq!(r.per_dilation[0].fg, 0.0);
        assert!((r.total - want).abs() < 1e-10, "{} vs {want}", r.total);
    }

    #[test]
    fn margin_only_moves_negative_term() {
        let mut rng = crate::rng::Rng::new(9);
        let labels: Vec<u8> = (0..64).map(|_| rng.below(3) as u8).collect();
        let labels = LabelMap::new(8, 8, labels).unwrap();
        let probs: Vec<f32> = (0..64)
            .flat_map(|_| {
                let a: Vec<f64> = (0..3).map(|_| rng.uniform(0.1, 1.0)).collect();
                let s: f64 = a.iter().sum();
                a.into_iter().map(move |x| (x / s) as f32)
            })
            .collect();
        let probs = DenseTensor::new(vec![8, 8, 3], probs).unwrap();
        let mut c = cfg(AffinityMode::Sa, &[1, 2]);
        let pairs = build_pairs(&labels, &c.kernels).unwrap();
        let a = sa_loss(&probs, &pairs, &c).unwrap();
        c.margin_m = 6.0;
        let b = sa_loss(&probs, &pairs, &c).unwrap();
        for (x, y) in a.per_dilation.iter().zip(&b.per_dilation) {
            assert_eq!(x.fg.to_bits(), y.fg.to_bits());
            assert_eq!(x.bg.to_bits(), y.bg.to_bits());
            assert!(y.neg > x.neg);
        }
    }

    #[test]
    fn single_negative_pair_hinge() {
        assert_eq!(negative_hinge(0.5, 1.0, 3.0), 0.5);
        assert_eq!(negative_hinge(0.2, 1.0, 3.0), 0.0);
        assert_eq!(negative_hinge(1.0, 0.0, 3.0), 3.0);
    }

    #[test]
    fn zero_confidence_annihilates() {
        let mut rng = crate::rng::Rng::new(4);
        let labels: Vec<u8> = (0..49).map(|_| rng.below(2) as u8).collect();
        let labels = LabelMap::new(7, 7, labels).unwrap();
        let c = cfg(AffinityMode::Aa, &[1, 3]);
        let pairs = build_pairs(&labels, &c.kernels).unwrap();
        let probs: Vec<f64> = (0..49)
            .flat_map(|_| {
                let a = rng.uniform(0.05, 0.95);
                [a, 1.0 - a]
            })
            .collect();
        let conf = vec![0.0; 49];
        let e = affinity_eval_f64(&probs, 2, Some(&conf), &pairs, &c).unwrap();
        assert_eq!(e.total, 0.0);
        assert!(e.grad_probs.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_pairs_give_zero() {
        let labels = LabelMap::filled(4, 4, 255).unwrap();
        let c = cfg(AffinityMode::Sa, &[1]);
        let pairs = build_pairs(&labels, &c.kernels).unwrap();
        let probs = DenseTensor::new(vec![4, 4, 2], vec![0.5; 32]).unwrap();
        let r = sa_loss(&probs, &pairs, &c).unwrap();
        assert_eq!(r.total, 0.0);
        assert!(r.grad_probs.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn aa_requires_matching_conf() {
        let labels = LabelMap::filled(4, 4, 0).unwrap();
        let c = cfg(AffinityMode::Aa, &[1]);
        let pairs = build_pairs(&labels, &c.kernels).unwrap();
        let probs = DenseTensor::new(vec![4, 4, 2], vec![0.5; 32]).unwrap();
        let conf = DenseTensor::new(vec![3, 4], vec![1.0; 12]).unwrap();
        assert!(aa_loss(&probs, &conf, &pairs, &c).is_err());
        let conf = DenseTensor::new(vec![4, 4], vec![1.5; 16]).unwrap();
        assert!(aa_loss(&probs, &conf, &pairs, &c).is_err());
        assert!(sa_loss(&probs, &pairs, &c).is_err());
    }

    #[test]
    fn conf_gradient_direction() {
        // Positive pairs: d/dOmega of Omega*W is W >= 0.
        let labels = LabelMap::new(1, 2, vec![1, 1]).unwrap();
        let c = AffinityConfig {
            detach_conf: false,
            ..cfg(AffinityMode::Aa, &[1])
        };
        let pairs = build_pairs(&labels, &c.kernels).unwrap();
        let probs = [0.7, 0.3, 0.4, 0.6];
        let conf = [0.2, 0.9];
        let e = affinity_eval_f64(&probs, 2, Some(&conf), &pairs, &c).unwrap();
        let g = e.grad_conf.unwrap();
        assert_eq!(g[0], 0.0);
        assert!(g[1] > 0.0);
    }
}
