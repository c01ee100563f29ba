//! Deterministic synthetic scenes with corrupted pseudo-labels.
//!
//! A scene is a background (class 0) with up to three filled ellipses or
//! rectangles. Pseudo-labels keep only the eroded interior of every region:
//! pixels within `neutral_band` (Chebyshev distance) of a different class are
//! set to neutral. In `ambiguity` mode a fraction `flip_rate` of the labeled
//! ring just inside the neutral band is relabeled to the nearest other class.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{labelmap_read_pgm, labelmap_write_pgm, tensor_read, tensor_write};
use crate::rng::Rng;
use crate::tensor::{validate_labels, DenseTensor, LabelMap, NEUTRAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Corruption {
    Ideal,
    Ambiguity,
}

fn d_num_classes() -> usize {
    3
}
fn d_num_shapes() -> usize {
    2
}
fn d_band() -> usize {
    3
}
fn d_flip() -> f64 {
    0.15
}
fn d_conf_decay() -> f64 {
    6.0
}
fn d_noise() -> f64 {
    0.35
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default = "d_num_classes")]
    pub num_classes: usize,
    #[serde(default = "d_num_shapes")]
    pub num_shapes: usize,
    /// Foreground classes to draw from, each in `[1, num_classes)`. Empty means all.
    #[serde(default)]
    pub classes: Vec<u8>,
    pub corruption: Corruption,
    #[serde(default = "d_band")]
    pub neutral_band: usize,
    #[serde(default = "d_flip")]
    pub flip_rate: f64,
    /// Distance (pixels) over which confidence ramps from 0 at a boundary to 1.
    #[serde(default = "d_conf_decay")]
    pub conf_decay: f64,
    /// Standard deviation of per-pixel color noise.
    #[serde(default = "d_noise")]
    pub image_noise: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, corruption: Corruption, seed: u64) -> Self {
        Self {
            height,
            width,
            num_classes: d_num_classes(),
            num_shapes: d_num_shapes(),
            classes: Vec::new(),
            corruption,
            neutral_band: d_band(),
            flip_rate: match corruption {
                Corruption::Ideal => 0.0,
                Corruption::Ambiguity => d_flip(),
            },
            conf_decay: d_conf_decay(),
            image_noise: d_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Argument(format!(
                "scene must be at least 8x8, got {}x{}",
                self.height, self.width
            )));
        }
        if !(2..=NEUTRAL as usize).contains(&self.num_classes) {
            return Err(Error::Argument(format!(
                "num_classes must be in [2, 255], got {}",
                self.num_classes
            )));
        }
        if !(1..=3).contains(&self.num_shapes) {
            return Err(Error::Argument(format!(
                "num_shapes must be in [1, 3], got {}",
                self.num_shapes
            )));
        }
        if let Some(c) = self
            .classes
            .iter()
            .find(|&&c| c == 0 || c as usize >= self.num_classes)
        {
            return Err(Error::Argument(format!(
                "shape class {c} outside [1, {})",
                self.num_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(Error::Argument(format!(
                "flip_rate must be in [0, 1], got {}",
                self.flip_rate
            )));
        }
        if self.corruption == Corruption::Ideal && self.flip_rate != 0.0 {
            return Err(Error::Argument("flip_rate must be 0 in ideal mode".into()));
        }
        if !(self.conf_decay > 0.0) || !(self.image_noise >= 0.0) {
            return Err(Error::Argument("conf_decay must be positive and image_noise non-negative".into()));
        }
        Ok(())
    }

    fn shape_classes(&self) -> Vec<u8> {
        if self.classes.is_empty() {
            (1..self.num_classes as u8).collect()
        } else {
            self.classes.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneInstance {
    pub image: DenseTensor,
    pub gt: LabelMap,
    pub pseudo: LabelMap,
    pub conf: DenseTensor,
    pub image_labels: Vec<u8>,
    /// Size of the ring eligible for flipping and how many were flipped.
    pub band_size: usize,
    pub flipped: usize,
}

const MAX_ATTEMPTS: usize = 100;
const MIN_SHAPE_AREA: usize = 25;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
        }
    }
}

fn draw_gt(spec: &SceneSpec, rng: &mut Rng) -> Option<LabelMap> {
    let (h, w) = (spec.height, spec.width);
    let classes = spec.shape_classes();
    let mut gt = LabelMap::filled(h, w, 0).ok()?;
    let mut owners = vec![usize::MAX; h * w];
    let min_side = h.min(w) as f64;
    for s in 0..spec.num_shapes {
        let ry = rng.uniform(min_side / 8.0, min_side / 4.0);
        let rx = rng.uniform(min_side / 8.0, min_side / 4.0);
        let cy = rng.uniform(ry, h as f64 - ry);
        let cx = rng.uniform(rx, w as f64 - rx);
        let shape = if rng.below(2) == 0 {
            Shape::Ellipse { cy, cx, ry, rx }
        } else {
            Shape::Rect {
                y0: (cy - ry).max(0.0) as usize,
                x0: (cx - rx).max(0.0) as usize,
                y1: ((cy + ry) as usize).min(h),
                x1: ((cx + rx) as usize).min(w),
            }
        };
        let class = classes[s % classes.len()];
        for y in 0..h {
            for x in 0..w {
                if shape.contains(y, x) {
                    gt.set(y, x, class);
                    owners[y * w + x] = s;
                }
            }
        }
    }
    let ok = (0..spec.num_shapes).all(|s| owners.iter().filter(|&&o| o == s).count() >= MIN_SHAPE_AREA);
    ok.then_some(gt)
}

/// Chebyshev distance to the nearest pixel of a different class (capped at
/// `max_r + 1`; equivalent to repeated 3x3 erosion) and that class, searching rings outward in row-major order.
fn nearest_other(gt: &LabelMap, y: usize, x: usize, max_r: usize) -> (usize, Option<u8>) {
    let own = gt.get(y, x);
    let (h, w) = (gt.height() as isize, gt.width() as isize);
    for r in 1..=max_r as isize {
        for dy in -r..=r {
            for dx in -r..=r {
                if dy.abs() != r && dx.abs() != r {
                    continue;
                }
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy < 0 || xx < 0 || yy >= h || xx >= w {
                    continue;
                }
                let l = gt.get(yy as usize, xx as usize);
                if l != own {
                    return (r as usize, Some(l));
                }
            }
        }
    }
    (max_r + 1, None)
}

pub fn generate(spec: &SceneSpec) -> Result<SceneInstance> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let (h, w) = (spec.height, spec.width);
    let gt = (0..MAX_ATTEMPTS)
        .find_map(|_| draw_gt(spec, &mut rng))
        .ok_or_else(|| {
            Error::Validation(format!(
                "could not place {} shapes of area >= {MIN_SHAPE_AREA} in {h}x{w} after {MAX_ATTEMPTS} attempts",
                spec.num_shapes
            ))
        })?;

    let band = spec.neutral_band;
    let conf_r = spec.conf_decay.ceil() as usize;
    let search = (2 * band).max(conf_r);
    let nearest: Vec<(usize, Option<u8>)> = (0..h * w)
        .map(|i| nearest_other(&gt, i / w, i % w, search))
        .collect();

    // Pseudo-labels: eroded interiors.
    let mut pseudo = gt.clone();
    for (i, &(d, _)) in nearest.iter().enumerate() {
        if d <= band {
            pseudo.set(i / w, i % w, NEUTRAL);
        }
    }

    // Labeled ring just inside the neutral band.
    let ring: Vec<usize> = (0..h * w)
        .filter(|&i| pseudo.labels()[i] != NEUTRAL && nearest[i].0 <= 2 * band && nearest[i].1.is_some())
        .collect();
    let flips = match spec.corruption {
        Corruption::Ideal => 0,
        Corruption::Ambiguity => (spec.flip_rate * ring.len() as f64).floor() as usize,
    };
    let mut order = ring.clone();
    rng.shuffle(&mut order);
    for &i in order.iter().take(flips) {
        let wrong = nearest[i].1.expect("ring pixels have a neighbor class");
        pseudo.set(i / w, i % w, wrong);
    }

    // Confidence: ramps with distance to the boundary, plus small noise.
    let conf: Vec<f64> = nearest
        .iter()
        .map(|&(d, _)| {
            let base = (d as f64 / spec.conf_decay).clamp(0.0, 1.0);
            (base + rng.uniform(-0.05, 0.05)).clamp(0.0, 1.0)
        })
        .collect();

    // Image: a per-scene color per class plus per-pixel Gaussian noise.
    let palette: Vec<[f64; 3]> = (0..spec.num_classes)
        .map(|k| {
            let mut c = [0.0; 3];
            for (ch, v) in c.iter_mut().enumerate() {
                // Base hues spread classes apart; jitter varies scenes.
                let base = if (k + ch) % 3 == 0 { 0.6 } else { -0.3 };
                *v = base + rng.uniform(-0.15, 0.15);
            }
            c
        })
        .collect();
    let mut image = Vec::with_capacity(h * w * 3);
    for &l in gt.labels() {
        for ch in 0..3 {
            image.push(palette[l as usize][ch] + spec.image_noise * rng.normal());
        }
    }

    let mut image_labels = vec![0u8; spec.num_classes];
    for &l in gt.labels() {
        image_labels[l as usize] = 1;
    }

    Ok(SceneInstance {
        image: DenseTensor::from_f64(vec![h, w, 3], &image)?,
        gt,
        pseudo,
        conf: DenseTensor::from_f64(vec![h, w], &conf)?,
        image_labels,
        band_size: ring.len(),
        flipped: flips,
    })
}

pub const IMAGE_FILE: &str = "image.dten";
pub const GT_FILE: &str = "gt.pgm";
pub const PSEUDO_FILE: &str = "pseudo.pgm";
pub const CONF_FILE: &str = "conf.dten";
pub const LABELS_FILE: &str = "labels.json";
pub const SPEC_FILE: &str = "spec.json";

/// Contents of `labels.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageLabels {
    pub num_classes: usize,
    /// Multi-hot over all classes, index 0 is background.
    pub image_labels: Vec<u8>,
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a scene directory. Returns the file names written.
pub fn write_scene(scene: &SceneInstance, spec: &SceneSpec, dir: impl AsRef<Path>) -> Result<Vec<&'static str>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    tensor_write(&scene.image, dir.join(IMAGE_FILE))?;
    labelmap_write_pgm(&scene.gt, dir.join(GT_FILE))?;
    labelmap_write_pgm(&scene.pseudo, dir.join(PSEUDO_FILE))?;
    tensor_write(&scene.conf, dir.join(CONF_FILE))?;
    let labels = ImageLabels {
        num_classes: spec.num_classes,
        image_labels: scene.image_labels.clone(),
    };
    write_json(&labels, &dir.join(LABELS_FILE))?;
    write_json(spec, &dir.join(SPEC_FILE))?;
    Ok(vec![IMAGE_FILE, GT_FILE, PSEUDO_FILE, CONF_FILE, LABELS_FILE, SPEC_FILE])
}

/// A scene directory as read back. Ground truth and confidences are optional
/// so that directories prepared by other tools only need the image, the
/// pseudo-labels and `labels.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFiles {
    pub image: DenseTensor,
    pub pseudo: LabelMap,
    pub gt: Option<LabelMap>,
    pub conf: Option<DenseTensor>,
    pub labels: ImageLabels,
}

pub fn read_scene(dir: impl AsRef<Path>) -> Result<SceneFiles> {
    let dir = dir.as_ref();
    let image = tensor_read(dir.join(IMAGE_FILE))?;
    let pseudo = labelmap_read_pgm(dir.join(PSEUDO_FILE))?;
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let labels: ImageLabels = serde_json::from_str(&text)?;
    if labels.image_labels.len() != labels.num_classes {
        return Err(Error::Validation(format!(
            "{}: image_labels has {} entries but num_classes is {}",
            path.display(),
            labels.image_labels.len(),
            labels.num_classes
        )));
    }
    validate_labels(&pseudo, labels.num_classes)?;
    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.exists() {
        let gt = labelmap_read_pgm(&gt_path)?;
        validate_labels(&gt, labels.num_classes)?;
        Some(gt)
    } else {
        None
    };
    let conf_path = dir.join(CONF_FILE);
    let conf = conf_path.exists().then(|| tensor_read(&conf_path)).transpose()?;
    Ok(SceneFiles {
        image,
        pseudo,
        gt,
        conf,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_pseudo_agrees_with_gt() {
        for seed in 0..5 {
            let s = generate(&SceneSpec::new(48, 48, Corruption::Ideal, seed)).unwrap();
            assert_eq!(s.flipped, 0);
            for (&p, &g) in s.pseudo.labels().iter().zip(s.gt.labels()) {
                assert!(p == NEUTRAL || p == g);
            }
            assert!(s.pseudo.num_labeled() > 0);
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::new(64, 64, Corruption::Ambiguity, 17);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SceneSpec { seed: 18, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().gt, generate(&other).unwrap().gt);
    }

    #[test]
    fn ambiguity_flip_count_matches_rate() {
        for seed in 0..10 {
            let spec = SceneSpec::new(64, 64, Corruption::Ambiguity, seed);
            let s = generate(&spec).unwrap();
            let wrong = s
                .pseudo
                .labels()
                .iter()
                .zip(s.gt.labels())
                .filter(|(&p, &g)| p != NEUTRAL && p != g)
                .count();
            let want = (0.15 * s.band_size as f64).floor() as usize;
            assert!(wrong.abs_diff(want) <= 1, "seed {seed}: {wrong} vs {want}");
            assert!(s.band_size > 0);
        }
    }

    #[test]
    fn conf_in_range_and_image_labels_consistent() {
        let s = generate(&SceneSpec::new(40, 40, Corruption::Ambiguity, 3)).unwrap();
        assert!(s.conf.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (k, &present) in s.image_labels.iter().enumerate() {
            let any = s.gt.labels().iter().any(|&l| l as usize == k);
            assert_eq!(present == 1, any);
        }
    }

    #[test]
    fn neutral_band_surrounds_boundaries() {
        let s = generate(&SceneSpec::new(48, 48, Corruption::Ideal, 9)).unwrap();
        let (h, w) = (48, 48);
        for y in 0..h {
            for x in 0..w {
                if s.pseudo.get(y, x) == NEUTRAL {
                    continue;
                }
                // A labeled pixel has no other class within the band.
                for yy in y.saturating_sub(3)..(y + 4).min(h) {
                    for xx in x.saturating_sub(3)..(x + 4).min(w) {
                        assert_eq!(s.gt.get(yy, xx), s.gt.get(y, x));
                    }
                }
            }
        }
    }

    #[test]
    fn scene_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::new(32, 32, Corruption::Ambiguity, 4);
        let s = generate(&spec).unwrap();
        write_scene(&s, &spec, dir.path()).unwrap();
        let back = read_scene(dir.path()).unwrap();
        assert_eq!(back.image, s.image);
        assert_eq!(back.pseudo, s.pseudo);
        assert_eq!(back.gt.unwrap(), s.gt);
        assert_eq!(back.conf.unwrap(), s.conf);
        assert_eq!(back.labels.image_labels, s.image_labels);
        let text = std::fs::read_to_string(dir.path().join(SPEC_FILE)).unwrap();
        assert_eq!(serde_json::from_str::<SceneSpec>(&text).unwrap(), spec);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = SceneSpec::new(64, 64, Corruption::Ideal, 0);
        spec.flip_rate = 0.1;
        assert!(generate(&spec).is_err());
        let mut spec = SceneSpec::new(64, 64, Corruption::Ambiguity, 0);
        spec.num_shapes = 4;
        assert!(generate(&spec).is_err());
        spec.num_shapes = 2;
        spec.classes = vec![3];
        assert!(generate(&spec).is_err());
    }
}
