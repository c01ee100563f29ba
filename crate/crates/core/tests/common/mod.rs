//! Brute-force reference implementations and seeded instance builders shared
//! by the integration tests. Nothing here calls the library's loss code.

#![allow(dead_code)]

use affinity_lr::rng::Rng;
use affinity_lr::NEUTRAL;

pub const FLOOR: f64 = 1e-8;

/// Random instance: labels with ~15% neutral, softmax probabilities and
/// confidences in [0, 1].
pub struct Instance {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub labels: Vec<u8>,
    pub probs: Vec<f64>,
    pub conf: Vec<f64>,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = Rng::new(seed);
    let h = 1 + rng.below(16) as usize;
    let w = 1 + rng.below(16) as usize;
    let c = 2 + rng.below(4) as usize;
    instance_with(&mut rng, h, w, c)
}

pub fn instance_with(rng: &mut Rng, h: usize, w: usize, c: usize) -> Instance {
    let labels = (0..h * w)
        .map(|_| {
            if rng.next_f64() < 0.15 {
                NEUTRAL
            } else {
                rng.below(c as u64) as u8
            }
        })
        .collect();
    let mut probs = Vec::with_capacity(h * w * c);
    for _ in 0..h * w {
        let z: Vec<f64> = (0..c).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let s: f64 = z.iter().map(|v| v.exp()).sum();
        probs.extend(z.iter().map(|v| v.exp() / s));
    }
    let conf = (0..h * w).map(|_| rng.next_f64()).collect();
    Instance {
        h,
        w,
        c,
        labels,
        probs,
        conf,
    }
}

/// Is `(r2, c2)` one of the eight dilation-`d` neighbors of `(r1, c1)`?
fn is_neighbor(r1: usize, c1: usize, r2: usize, c2: usize, d: usize) -> bool {
    let dr = r1.abs_diff(r2);
    let dc = c1.abs_diff(c2);
    (dr == 0 || dr == d) && (dc == 0 || dc == d) && (dr, dc) != (0, 0)
}

/// Ordered pairs `(i, j)` at dilation `d`, found by scanning every pixel pair,
/// split into (fg positive, bg positive, negative).
pub fn pairs_oracle(labels: &[u8], h: usize, w: usize, d: usize) -> [Vec<(u32, u32)>; 3] {
    let mut out: [Vec<(u32, u32)>; 3] = Default::default();
    for r1 in 0..h {
        for c1 in 0..w {
            for r2 in 0..h {
                for c2 in 0..w {
                    if !is_neighbor(r1, c1, r2, c2, d) {
                        continue;
                    }
                    let (i, j) = (r1 * w + c1, r2 * w + c2);
                    let (a, b) = (labels[i], labels[j]);
                    if a == NEUTRAL || b == NEUTRAL {
                        continue;
                    }
                    let k = if a != b {
                        2
                    } else if a == 0 {
                        1
                    } else {
                        0
                    };
                    out[k].push((i as u32, j as u32));
                }
            }
        }
    }
    out
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| a * (a.max(FLOOR).ln() - b.max(FLOOR).ln()))
        .sum()
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Omega {
    One,
    Max,
    Min,
    Plus,
}

fn omega(kind: Omega, a: f64, b: f64) -> f64 {
    match kind {
        Omega::One => 1.0,
        Omega::Max => a.max(b),
        Omega::Min => a.min(b),
        Omega::Plus => (a + b) / 2.0,
    }
}

/// Affinity loss summed over dilations: fg + bg + 2 * neg per dilation.
pub fn affinity_oracle(inst: &Instance, dilations: &[usize], kind: Omega, margin: f64) -> f64 {
    let c = inst.c;
    let p = |i: usize| &inst.probs[i * c..(i + 1) * c];
    let mut total = 0.0;
    for &d in dilations {
        let sets = pairs_oracle(&inst.labels, inst.h, inst.w, d);
        let mut terms = [0.0; 3];
        for (k, set) in sets.iter().enumerate() {
            if set.is_empty() {
                continue;
            }
            let mut s = 0.0;
            for &(i, j) in set {
                let (i, j) = (i as usize, j as usize);
                let o = omega(kind, inst.conf[i], inst.conf[j]);
                let wgt = kl(p(i), p(j));
                s += if k < 2 { o * wgt } else { (o * margin - wgt).max(0.0) };
            }
            terms[k] = s / set.len() as f64;
        }
        total += terms[0] + terms[1] + 2.0 * terms[2];
    }
    total
}

fn cos(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na.max(eps) * nb.max(eps))
}

/// Label-reassign loss. `alpha_one` forces the modulation factor to 1.
/// Returns `None` when fewer than two classes are labeled.
pub fn lr_oracle(
    embed: &[f64],
    dim: usize,
    labels: &[u8],
    conf: &[f64],
    gamma: f64,
    margin: f64,
    alpha_one: bool,
) -> Option<f64> {
    let eps = 1e-12;
    let mut centroids: Vec<(u8, Vec<f64>)> = Vec::new();
    for class in 0..=254u8 {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        let wsum: f64 = members.iter().map(|&i| conf[i]).sum();
        let v: Vec<f64> = (0..dim)
            .map(|k| {
                if wsum > 0.0 {
                    members.iter().map(|&i| conf[i] * embed[i * dim + k]).sum::<f64>() / wsum
                } else {
                    members.iter().map(|&i| embed[i * dim + k]).sum::<f64>() / members.len() as f64
                }
            })
            .collect();
        centroids.push((class, v));
    }
    if centroids.len() < 2 {
        return None;
    }
    let (mut bg, mut fg) = ((0.0, 0usize), (0.0, 0usize));
    for i in (0..labels.len()).filter(|&i| labels[i] != NEUTRAL) {
        let x = &embed[i * dim..(i + 1) * dim];
        let sims: Vec<f64> = centroids.iter().map(|(_, c)| cos(x, c, eps)).collect();
        let mut own = 0;
        for k in 1..sims.len() {
            if sims[k] > sims[own] {
                own = k;
            }
        }
        let second = (0..sims.len())
            .filter(|&k| k != own)
            .map(|k| sims[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let alpha = if alpha_one {
            1.0
        } else {
            let b = (1.0 + sims[own]) / 2.0;
            let s = (1.0 + second) / 2.0;
            let r = if b + s > 0.0 { (b - s) / (b + s) } else { 0.0 };
            (1.0 - r).clamp(0.0, 1.0).powf(gamma)
        };
        let hinge: f64 = (0..sims.len())
            .filter(|&k| k != own)
            .map(|k| (margin + sims[k] - sims[own]).max(0.0))
            .sum();
        let acc = if centroids[own].0 == 0 { &mut bg } else { &mut fg };
        acc.0 += alpha * hinge;
        acc.1 += 1;
    }
    let part = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s * (1.0 / n as f64) };
    Some(part(bg) + part(fg))
}

/// Mean IoU by per-pixel tally over classes present in either map.
pub fn miou_oracle(pred: &[u8], gt: &[u8], classes: usize) -> f64 {
    let mut ious = Vec::new();
    for k in 0..classes as u8 {
        let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
        for (&p, &g) in pred.iter().zip(gt) {
            if g == NEUTRAL {
                continue;
            }
            match (p == k, g == k) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
        if tp + fp + fnn > 0 {
            ious.push(tp as f64 / (tp + fp + fnn) as f64);
        }
    }
    if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    }
}
