//! Python bindings. Arrays are passed as flat row-major lists together with
//! their height, width and channel count.

use affinity_lr::affinity::{affinity_eval_f64, connectivity, AffinityConfig, AffinityMode, ModelingFn};
use affinity_lr::eval::miou as miou_report;
use affinity_lr::gradcheck::grad_check as run_grad_check;
use affinity_lr::metric::{lr_step_f64, LrConfig};
use affinity_lr::pairs::{build_pairs as build_pair_set, KernelSet, PairSet};
use affinity_lr::synth::{generate, Corruption, SceneSpec};
use affinity_lr::{Error, LabelMap};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Neighbor pairs of a label map, grouped by dilation.
#[pyclass(name = "PairSet", frozen)]
struct PyPairSet(PairSet);

#[pymethods]
impl PyPairSet {
    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn total(&self) -> usize {
        self.0.total()
    }

    /// Per dilation: (dilation, foreground positives, background positives, negatives).
    fn counts(&self) -> Vec<(u32, usize, usize, usize)> {
        self.0
            .per_dilation
            .iter()
            .map(|d| (d.dilation, d.fg_pos.len(), d.bg_pos.len(), d.neg.len()))
            .collect()
    }

    /// Ordered (center, neighbor) pixel indices of one kind: "fg", "bg" or "neg".
    fn pairs(&self, dilation: u32, kind: &str) -> PyResult<Vec<(u32, u32)>> {
        let d = self
            .0
            .per_dilation
            .iter()
            .find(|d| d.dilation == dilation)
            .ok_or_else(|| PyValueError::new_err(format!("no pairs for dilation {dilation}")))?;
        let list = match kind {
            "fg" => &d.fg_pos,
            "bg" => &d.bg_pos,
            "neg" => &d.neg,
            _ => return Err(PyValueError::new_err(format!("kind must be fg, bg or neg, got '{kind}'"))),
        };
        Ok(list.iter().map(|p| (p.i, p.j)).collect())
    }

    fn __repr__(&self) -> String {
        format!("PairSet({}x{}, total={})", self.0.height, self.0.width, self.0.total())
    }
}

#[pyfunction]
#[pyo3(signature = (labels, height, width, kernels=vec![4, 8, 12, 24]))]
fn build_pairs(labels: Vec<u8>, height: usize, width: usize, kernels: Vec<u32>) -> PyResult<PyPairSet> {
    let map = LabelMap::new(height, width, labels).map_err(to_py)?;
    let ks = KernelSet::new(kernels).map_err(to_py)?;
    build_pair_set(&map, &ks).map(PyPairSet).map_err(to_py)
}

/// Affinity loss over a prebuilt pair set. Returns a dict with `total`,
/// `per_dilation`, `grad_probs` and, when `conf` is given and not detached,
/// `grad_conf`.
#[pyfunction]
#[pyo3(signature = (probs, channels, pairs, conf=None, margin=3.0, modeling_fn="max", detach_conf=true))]
fn affinity_loss<'py>(
    py: Python<'py>,
    probs: Vec<f64>,
    channels: usize,
    pairs: &PyPairSet,
    conf: Option<Vec<f64>>,
    margin: f64,
    modeling_fn: &str,
    detach_conf: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let kernels = KernelSet::new(pairs.0.per_dilation.iter().map(|d| d.dilation).collect()).map_err(to_py)?;
    let cfg = AffinityConfig {
        mode: if conf.is_some() { AffinityMode::Aa } else { AffinityMode::Sa },
        modeling_fn: parse::<ModelingFn>(modeling_fn)?,
        margin_m: margin,
        kernels,
        detach_conf,
        ..Default::default()
    };
    let eval = py
        .detach(|| affinity_eval_f64(&probs, channels, conf.as_deref(), &pairs.0, &cfg))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("total", eval.total)?;
    let terms: Vec<(u32, f64, f64, f64)> = eval.per_dilation.iter().map(|t| (t.dilation, t.fg, t.bg, t.neg)).collect();
    out.set_item("per_dilation", terms)?;
    out.set_item("grad_probs", eval.grad_probs)?;
    if let Some(g) = eval.grad_conf {
        out.set_item("grad_conf", g)?;
    }
    Ok(out)
}

/// Label-reassign loss for embeddings of shape (pixels, dim). Returns a dict
/// with `total`, `l_bg`, `l_fg`, `grad_embed`, `reassigned` and `alpha`.
#[pyfunction]
#[pyo3(signature = (embed, dim, labels, conf, gamma=2.0, margin=1.0))]
fn lr_loss<'py>(
    py: Python<'py>,
    embed: Vec<f64>,
    dim: usize,
    labels: Vec<u8>,
    conf: Vec<f64>,
    gamma: f64,
    margin: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = LrConfig {
        gamma,
        margin_n: margin,
        ..Default::default()
    };
    let step = lr_step_f64(&embed, dim, &labels, &conf, &cfg).map_err(to_py)?;
    let mut reassigned = labels;
    let mut alpha = vec![0.0; reassigned.len()];
    for p in &step.reassignment.pixels {
        reassigned[p.pixel] = p.class;
        alpha[p.pixel] = p.alpha;
    }
    let out = PyDict::new(py);
    out.set_item("total", step.eval.total)?;
    out.set_item("l_bg", step.eval.l_bg)?;
    out.set_item("l_fg", step.eval.l_fg)?;
    out.set_item("grad_embed", step.eval.grad_embed)?;
    out.set_item("reassigned", reassigned)?;
    out.set_item("alpha", alpha)?;
    Ok(out)
}

#[pyfunction]
fn modeling_weight(a: f64, b: f64, modeling_fn: &str) -> PyResult<f64> {
    connectivity(a, b, parse(modeling_fn)?).map_err(to_py)
}

/// Mean IoU over classes present in either map; neutral pixels are ignored.
#[pyfunction]
fn miou(pred: Vec<u8>, gt: Vec<u8>, height: usize, width: usize, num_classes: usize) -> PyResult<f64> {
    let p = LabelMap::new(height, width, pred).map_err(to_py)?;
    let g = LabelMap::new(height, width, gt).map_err(to_py)?;
    miou_report(&p, &g, num_classes).map(|r| r.miou).map_err(to_py)
}

/// Seeded synthetic scene. Returns a dict of flat lists plus `image_labels`.
#[pyfunction]
#[pyo3(signature = (height, width, seed, ambiguity=true))]
fn synth_scene<'py>(py: Python<'py>, height: usize, width: usize, seed: u64, ambiguity: bool) -> PyResult<Bound<'py, PyDict>> {
    let mode = if ambiguity { Corruption::Ambiguity } else { Corruption::Ideal };
    let scene = generate(&SceneSpec::new(height, width, mode, seed)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("image", scene.image.data().to_vec())?;
    out.set_item("channels", scene.image.dims().last().copied().unwrap_or(1))?;
    out.set_item("gt", scene.gt.labels().to_vec())?;
    out.set_item("pseudo", scene.pseudo.labels().to_vec())?;
    out.set_item("conf", scene.conf.data().to_vec())?;
    out.set_item("image_labels", scene.image_labels)?;
    out.set_item("flipped", scene.flipped)?;
    Ok(out)
}

/// Finite-difference gradient check. `target` is affinity-sa, affinity-aa,
/// lr or model; `size` is "HxWxC".
#[pyfunction]
#[pyo3(signature = (target, size="8x8x3", seed=0))]
fn grad_check<'py>(py: Python<'py>, target: &str, size: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let (t, s) = (parse(target)?, parse(size)?);
    let rep = py.detach(|| run_grad_check(t, s, seed)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("max_rel_err", rep.max_rel_err)?;
    out.set_item("tolerance", rep.tolerance)?;
    out.set_item("checked", rep.checked)?;
    out.set_item("skipped", rep.skipped)?;
    out.set_item("passed", rep.passed)?;
    Ok(out)
}

#[pymodule]
fn pyaffinity(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPairSet>()?;
    m.add_function(wrap_pyfunction!(build_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(affinity_loss, m)?)?;
    m.add_function(wrap_pyfunction!(lr_loss, m)?)?;
    m.add_function(wrap_pyfunction!(modeling_weight, m)?)?;
    m.add_function(wrap_pyfunction!(miou, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add("NEUTRAL", affinity_lr::NEUTRAL)?;
    Ok(())
}
