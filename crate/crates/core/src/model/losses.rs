//! Pixel cross entropy and the image-level classification loss.

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, LabelMap, NEUTRAL};

pub const CE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Mean of `-ln(max(p_label, floor))` over labeled pixels. Gradient is w.r.t.
/// the probabilities.
pub fn ce_loss_f64(probs: &[f64], classes: usize, labels: &[u8]) -> LossReport {
    let mut grad = vec![0.0; probs.len()];
    let labeled = labels.iter().filter(|&&l| l != NEUTRAL).count();
    if labeled == 0 {
        return LossReport { value: 0.0, grad };
    }
    let scale = 1.0 / labeled as f64;
    let mut sum = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        if l == NEUTRAL {
            continue;
        }
        let k = i * classes + l as usize;
        let p = probs[k];
        sum -= p.max(CE_FLOOR).ln();
        if p > CE_FLOOR {
            grad[k] = -scale / p;
        }
    }
    LossReport {
        value: sum * scale,
        grad,
    }
}

/// Argmax pixel of each class channel (first index on ties).
pub fn pooled_argmax(logits: &[f64], classes: usize) -> Vec<usize> {
    let npix = logits.len() / classes;
    (0..classes)
        .map(|c| {
            let mut best = 0;
            for p in 1..npix {
                if logits[p * classes + c] > logits[best * classes + c] {
                    best = p;
                }
            }
            best
        })
        .collect()
}

/// Binary cross entropy between `sigmoid(max-pooled logit)` and the image-level
/// label, averaged over foreground classes `1..C`. Gradient is w.r.t. the
/// logits and touches only each class's argmax pixel.
pub fn cls_loss_f64(logits: &[f64], classes: usize, image_labels: &[u8]) -> Result<LossReport> {
    if image_labels.len() != classes {
        return Err(Error::Argument(format!(
            "image label vector has {} entries, expected {classes}",
            image_labels.len()
        )));
    }
    let mut grad = vec![0.0; logits.len()];
    if classes < 2 {
        return Ok(LossReport { value: 0.0, grad });
    }
    let scale = 1.0 / (classes - 1) as f64;
    let arg = pooled_argmax(logits, classes);
    let mut sum = 0.0;
    for c in 1..classes {
        let z = logits[arg[c] * classes + c];
        let y = if image_labels[c] != 0 { 1.0 } else { 0.0 };
        // -[y ln s + (1-y) ln(1-s)] = softplus(z) - y z
        sum += softplus(z) - y * z;
        grad[arg[c] * classes + c] = scale * (sigmoid(z) - y);
    }
    Ok(LossReport {
        value: sum * scale,
        grad,
    })
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn ce_loss(probs: &DenseTensor, labels: &LabelMap) -> Result<(f64, DenseTensor)> {
    let (h, w, c) = probs.hwc()?;
    if (h, w) != (labels.height(), labels.width()) {
        return Err(Error::Argument("probability map and labels differ in size".into()));
    }
    crate::tensor::validate_labels(labels, c)?;
    let r = ce_loss_f64(&probs.to_f64(), c, labels.labels());
    Ok((r.value, DenseTensor::from_f64(probs.dims().to_vec(), &r.grad)?))
}

pub fn cls_loss(logits: &DenseTensor, image_labels: &[u8]) -> Result<(f64, DenseTensor)> {
    let (_, _, c) = logits.hwc()?;
    let r = cls_loss_f64(&logits.to_f64(), c, image_labels)?;
    Ok((r.value, DenseTensor::from_f64(logits.dims().to_vec(), &r.grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_examples() {
        let probs = vec![0.25; 4 * 3];
        let r = ce_loss_f64(&probs, 4, &[0, 1, 3]);
        assert!((r.value - 4f64.ln()).abs() < 1e-12);
        assert!((r.value - 1.386_294).abs() < 1e-6);

        let onehot = [1.0, 0.0, 0.0, 1.0];
        let r = ce_loss_f64(&onehot, 2, &[0, 1]);
        assert!(r.value.abs() < 1e-12);

        let r = ce_loss_f64(&probs, 4, &[255, 255, 255]);
        assert_eq!(r.value, 0.0);
        assert!(r.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ce_floor_bounds_zero_probability() {
        let r = ce_loss_f64(&[0.0, 1.0], 2, &[0]);
        assert!((r.value + CE_FLOOR.ln()).abs() < 1e-9);
        assert_eq!(r.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn cls_examples() {
        // Pooled logit 0 on every foreground class: ln 2 each.
        let logits = vec![0.0; 3 * 3];
        let r = cls_loss_f64(&logits, 3, &[1, 1, 0]).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-12);

        // Saturated present class.
        let logits = [0.0, 50.0, -50.0, 0.0, 10.0, -60.0];
        let r = cls_loss_f64(&logits, 3, &[1, 1, 0]).unwrap();
        assert!(r.value < 1e-20);
        assert!(r.grad[1] <= 0.0 && r.grad[1] > -1e-20);

        // Only background: one class so the foreground set is empty.
        let r = cls_loss_f64(&[0.3, 0.1], 1, &[1]).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn cls_gradient_hits_argmax_only() {
        let logits = [0.0, 1.0, 0.0, 3.0, 0.0, 2.0];
        let r = cls_loss_f64(&logits, 2, &[1, 0]).unwrap();
        let nonzero: Vec<usize> = (0..6).filter(|&i| r.grad[i] != 0.0).collect();
        assert_eq!(nonzero, vec![3]);
    }
}
