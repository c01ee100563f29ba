//! Confusion matrix and mean intersection-over-union.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, NEUTRAL};

/// Counts over pixels whose ground truth is not neutral. `matrix[g][p]` counts
/// ground truth `g` predicted as `p`; a neutral prediction lands in
/// `unassigned[g]` (a miss for `g`, not a false positive for any class).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub num_classes: usize,
    pub matrix: Vec<Vec<u64>>,
    pub unassigned: Vec<u64>,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum::<u64>() + self.unassigned.iter().sum::<u64>()
    }

    /// Per-class IoU (`None` for classes absent from both maps) and their mean.
    pub fn iou(&self) -> MiouReport {
        let c = self.num_classes;
        let per_class: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let tp = self.matrix[k][k];
                let row: u64 = self.matrix[k].iter().sum::<u64>() + self.unassigned[k];
                let col: u64 = (0..c).map(|g| self.matrix[g][k]).sum();
                let union = row + col - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let miou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        MiouReport { per_class, miou }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

fn check(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Argument(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    crate::tensor::validate_labels(pred, num_classes)?;
    crate::tensor::validate_labels(gt, num_classes)
}

pub fn confusion(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<Confusion> {
    check(pred, gt, num_classes)?;
    let mut matrix = vec![vec![0u64; num_classes]; num_classes];
    let mut unassigned = vec![0u64; num_classes];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if g == NEUTRAL {
            continue;
        }
        if p == NEUTRAL {
            unassigned[g as usize] += 1;
        } else {
            matrix[g as usize][p as usize] += 1;
        }
    }
    Ok(Confusion {
        num_classes,
        matrix,
        unassigned,
    })
}

pub fn miou(pred: &LabelMap, gt: &LabelMap, num_classes: usize) -> Result<MiouReport> {
    Ok(confusion(pred, gt, num_classes)?.iou())
}
