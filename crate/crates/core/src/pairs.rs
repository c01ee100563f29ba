//! Pixel-pair enumeration over dilated 3x3 neighborhoods.
//!
//! A 3x3 kernel at dilation `d` samples the 8 neighbors at Chebyshev distance
//! exactly `d`. Each labeled center pixel `i` emits an ordered pair `(i, j)` for
//! every in-bounds, labeled neighbor `j`, so adjacent pixels appear once in
//! each direction. Centers are visited in row-major order and offsets in
//! [`NEIGHBOR_OFFSETS`] order; the resulting lists are fully deterministic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, NEUTRAL};

/// Unit offsets `(drow, dcol)` scaled by the dilation, row-major over the 3x3
/// stencil with the center removed.
pub const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Ordered list of distinct, strictly increasing dilation rates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct KernelSet(Vec<u32>);

impl KernelSet {
    pub fn new(dilations: Vec<u32>) -> Result<Self> {
        if dilations.is_empty() {
            return Err(Error::Argument("kernel set is empty".into()));
        }
        if dilations.contains(&0) {
            return Err(Error::Argument(format!(
                "dilations must be positive, got {dilations:?}"
            )));
        }
        if dilations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument(format!(
                "dilations must be strictly increasing, got {dilations:?}"
            )));
        }
        Ok(Self(dilations))
    }

    pub fn dilations(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for KernelSet {
    fn default() -> Self {
        Self(vec![4, 8, 12, 24])
    }
}

impl TryFrom<Vec<u32>> for KernelSet {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<KernelSet> for Vec<u32> {
    fn from(k: KernelSet) -> Self {
        k.0
    }
}

impl FromStr for KernelSet {
    type Err = Error;

    /// Parses `"4,8,12,24"` (also accepts `-` as a separator, as in `4-8-12-24`).
    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split([',', '-'])
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Argument(format!("bad dilation {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts)
    }
}

impl fmt::Display for KernelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Ordered pixel pair: `i` is the kernel center, `j` the sampled neighbor.
/// Both are flat `row * width + col` indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pair {
    pub i: u32,
    pub j: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    /// Same non-background label.
    FgPos,
    /// Both background.
    BgPos,
    /// Different labels.
    Neg,
}

impl PairKind {
    /// Classify two non-neutral labels.
    pub fn classify(a: u8, b: u8) -> PairKind {
        if a != b {
            PairKind::Neg
        } else if a == 0 {
            PairKind::BgPos
        } else {
            PairKind::FgPos
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DilationPairs {
    pub dilation: u32,
    pub fg_pos: Vec<Pair>,
    pub bg_pos: Vec<Pair>,
    pub neg: Vec<Pair>,
}

impl DilationPairs {
    pub fn counts(&self) -> PairCounts {
        PairCounts {
            dilation: self.dilation,
            fg_pos: self.fg_pos.len(),
            bg_pos: self.bg_pos.len(),
            neg: self.neg.len(),
        }
    }

    pub fn total(&self) -> usize {
        self.fg_pos.len() + self.bg_pos.len() + self.neg.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pub height: usize,
    pub width: usize,
    pub per_dilation: Vec<DilationPairs>,
}

impl PairSet {
    pub fn total(&self) -> usize {
        self.per_dilation.iter().map(DilationPairs::total).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub dilation: u32,
    pub fg_pos: usize,
    pub bg_pos: usize,
    pub neg: usize,
}

pub fn build_pairs(labels: &LabelMap, kernels: &KernelSet) -> Result<PairSet> {
    if kernels.is_empty() {
        return Err(Error::Argument("kernel set is empty".into()));
    }
    let (h, w) = (labels.height(), labels.width());
    if u32::try_from(h * w).is_err() {
        return Err(Error::Argument(format!("{h}x{w} map exceeds u32 pixel indexing")));
    }
    let lab = labels.labels();
    let per_dilation = kernels
        .dilations()
        .iter()
        .map(|&d| {
            let mut out = DilationPairs {
                dilation: d,
                ..Default::default()
            };
            let d = d as isize;
            for r in 0..h as isize {
                for c in 0..w as isize {
                    let i = (r * w as isize + c) as usize;
                    let li = lab[i];
                    if li == NEUTRAL {
                        continue;
                    }
                    for &(dr, dc) in &NEIGHBOR_OFFSETS {
                        let (nr, nc) = (r + dr * d, c + dc * d);
                        if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                            continue;
                        }
                        let j = (nr * w as isize + nc) as usize;
                        let lj = lab[j];
                        if lj == NEUTRAL {
                            continue;
                        }
                        let pair = Pair {
                            i: i as u32,
                            j: j as u32,
                        };
                        match PairKind::classify(li, lj) {
                            PairKind::FgPos => out.fg_pos.push(pair),
                            PairKind::BgPos => out.bg_pos.push(pair),
                            PairKind::Neg => out.neg.push(pair),
                        }
                    }
                }
            }
            out
        })
        .collect();
    Ok(PairSet {
        height: h,
        width: w,
        per_dilation,
    })
}

pub fn pair_counts(pairs: &PairSet) -> Vec<PairCounts> {
    pairs.per_dilation.iter().map(DilationPairs::counts).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn px(w: usize, r: usize, c: usize) -> u32 {
        (r * w + c) as u32
    }

    fn set(pairs: &[Pair]) -> HashSet<(u32, u32)> {
        pairs.iter().map(|p| (p.i, p.j)).collect()
    }

    #[test]
    fn two_by_two_example() {
        let labels = LabelMap::new(2, 2, vec![1, 1, 0, 255]).unwrap();
        let ps = build_pairs(&labels, &KernelSet::new(vec![1]).unwrap()).unwrap();
        let d = &ps.per_dilation[0];
        let w = 2;
        assert_eq!(
            set(&d.fg_pos),
            HashSet::from([(px(w, 0, 0), px(w, 0, 1)), (px(w, 0, 1), px(w, 0, 0))])
        );
        assert!(d.bg_pos.is_empty());
        assert_eq!(
            set(&d.neg),
            HashSet::from([
                (px(w, 0, 0), px(w, 1, 0)),
                (px(w, 0, 1), px(w, 1, 0)),
                (px(w, 1, 0), px(w, 0, 0)),
                (px(w, 1, 0), px(w, 0, 1)),
            ])
        );
        assert_eq!(
            pair_counts(&ps),
            vec![PairCounts { dilation: 1, fg_pos: 2, bg_pos: 0, neg: 4 }]
        );
    }

    #[test]
    fn all_neutral_map_has_no_pairs() {
        let labels = LabelMap::filled(6, 6, NEUTRAL).unwrap();
        let ps = build_pairs(&labels, &KernelSet::new(vec![1, 2]).unwrap()).unwrap();
        assert_eq!(ps.total(), 0);
        assert_eq!(ps.per_dilation.len(), 2);
    }

    #[test]
    fn uniform_background_five_by_five() {
        // Unordered 8-neighbor adjacencies in a 5x5 grid: 20 horizontal,
        // 20 vertical, 16 + 16 diagonal = 72; both directions are emitted.
        let labels = LabelMap::filled(5, 5, 0).unwrap();
        let ps = build_pairs(&labels, &KernelSet::new(vec![1]).unwrap()).unwrap();
        let c = pair_counts(&ps)[0];
        assert_eq!((c.fg_pos, c.bg_pos, c.neg), (0, 144, 0));
    }

    #[test]
    fn center_is_always_i() {
        let labels = LabelMap::new(3, 3, vec![0, 1, 2, 1, 1, 0, 2, 2, 255]).unwrap();
        let ps = build_pairs(&labels, &KernelSet::new(vec![1, 2]).unwrap()).unwrap();
        for dp in &ps.per_dilation {
            let d = dp.dilation as i64;
            for p in dp.fg_pos.iter().chain(&dp.bg_pos).chain(&dp.neg) {
                let (ri, ci) = (p.i as i64 / 3, p.i as i64 % 3);
                let (rj, cj) = (p.j as i64 / 3, p.j as i64 % 3);
                assert_eq!((ri - rj).abs().max((ci - cj).abs()), d);
                assert!((ri - rj).abs() == d || ri == rj);
                assert!((ci - cj).abs() == d || ci == cj);
            }
        }
    }

    #[test]
    fn empty_kernel_set_rejected() {
        assert!(KernelSet::new(vec![]).is_err());
        assert!(KernelSet::new(vec![4, 4]).is_err());
        assert!(KernelSet::new(vec![8, 4]).is_err());
        assert!(KernelSet::new(vec![0, 4]).is_err());
        assert_eq!("4-8-12-24".parse::<KernelSet>().unwrap(), KernelSet::default());
        assert_eq!("1,2,4,8".parse::<KernelSet>().unwrap().to_string(), "1,2,4,8");
    }

    #[test]
    fn mirrored_image_roughly_doubles_counts() {
        let mut rng = crate::rng::Rng::new(11);
        let (h, w) = (40, 40);
        let labels: Vec<u8> = (0..h * w).map(|_| rng.below(3) as u8).collect();
        let base = LabelMap::new(h, w, labels.clone()).unwrap();
        let mut doubled = Vec::with_capacity(2 * h * w);
        for r in 0..h {
            doubled.extend_from_slice(&labels[r * w..(r + 1) * w]);
            doubled.extend(labels[r * w..(r + 1) * w].iter().rev());
        }
        let doubled = LabelMap::new(h, 2 * w, doubled).unwrap();
        let k = KernelSet::new(vec![1]).unwrap();
        let a = build_pairs(&base, &k).unwrap().total() as f64;
        let b = build_pairs(&doubled, &k).unwrap().total() as f64;
        let ratio = b / a;
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }
}
