//! Dense tensors and label maps.
//!
//! Layout is row-major with the channel axis last: element `(h, w, c)` of an
//! `H x W x C` tensor lives at `(h * W + w) * C + c`. Pixel indices used by
//! pair sets are the flat `h * W + w`.

use crate::error::{Error, Result};

/// Label value marking the neutral (ignored) region.
pub const NEUTRAL: u8 = 255;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Validation("tensor needs at least one dimension".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Validation(format!(
                "dimension {pos} is zero in {dims:?}"
            )));
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Validation(format!("dims {dims:?} overflow")))?;
        if n != data.len() {
            return Err(Error::Validation(format!(
                "dims {dims:?} need {n} elements, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0.0; n])
    }

    /// Narrow a 64-bit buffer to storage precision.
    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Interpret as an `H x W x C` map. A rank-2 tensor is treated as `C = 1`.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match *self.dims.as_slice() {
            [h, w, c] => Ok((h, w, c)),
            [h, w] => Ok((h, w, 1)),
            _ => Err(Error::Argument(format!(
                "expected an HxWxC or HxW tensor, got dims {:?}",
                self.dims
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Validation(format!(
                "label map must be non-empty, got {height}x{width}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Validation(format!(
                "{height}x{width} label map needs {} values, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.labels[row * self.width + col] = value;
    }

    pub fn num_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|&&l| l != NEUTRAL).count()
    }
}

/// Checks every non-neutral label is below `num_classes`.
pub fn validate_labels(map: &LabelMap, num_classes: usize) -> Result<()> {
    let bad: Vec<(usize, usize)> = map
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != NEUTRAL && l as usize >= num_classes)
        .map(|(i, _)| (i / map.width, i % map.width))
        .collect();
    if bad.is_empty() {
        return Ok(());
    }
    const SHOWN: usize = 16;
    let listed: Vec<String> = bad
        .iter()
        .take(SHOWN)
        .map(|(r, c)| format!("({r},{c})={}", map.get(*r, *c)))
        .collect();
    let more = if bad.len() > SHOWN {
        format!(" and {} more", bad.len() - SHOWN)
    } else {
        String::new()
    };
    Err(Error::Validation(format!(
        "{} label(s) outside [0, {num_classes}) at {}{more}",
        bad.len(),
        listed.join(", ")
    )))
}
