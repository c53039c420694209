//! Python bindings: feature maps and the consistency loss, gradient checks,
//! box matching and evaluation, tiling layout and context maps.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rarespot_core::eval::{evaluate as core_evaluate, ApMethod, EvalOptions, ImageEval};
use rarespot_core::gradcheck::{gradcheck as core_gradcheck, GradcheckConfig, GradcheckOp};
use rarespot_core::loss::{self, ConsistencyOptions, KlDirection, LossWeights, PairLoss, PairingTopology};
use rarespot_core::{context, mining, tensor, tiling};
use rarespot_core::{Annotation, BBox, ClassRegistry, Detection, Level, PyramidSet, UpsampleMode};

fn err(e: rarespot_core::Error) -> PyErr {
    if e.is_runtime() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr<Err = rarespot_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// Dense `C×H×W` float64 feature map.
#[pyclass(name = "FeatureMap", module = "rarespot", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyFeatureMap(pub rarespot_core::FeatureMap);

#[pymethods]
impl PyFeatureMap {
    #[new]
    fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> PyResult<Self> {
        rarespot_core::FeatureMap::new(channels, height, width, values).map(Self).map_err(err)
    }

    #[staticmethod]
    fn zeros(channels: usize, height: usize, width: usize) -> PyResult<Self> {
        rarespot_core::FeatureMap::zeros(channels, height, width).map(Self).map_err(err)
    }

    /// Reads an RSPT tensor file.
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        tensor::read_tensor(path).map(Self).map_err(err)
    }

    fn write(&self, path: &str) -> PyResult<()> {
        tensor::write_tensor(&self.0, path).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.dims()
    }

    /// Values in `[c][i][j]` order.
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn get(&self, c: usize, i: usize, j: usize) -> PyResult<f64> {
        let (ch, h, w) = self.0.dims();
        if c >= ch || i >= h || j >= w {
            return Err(PyValueError::new_err(format!("index ({c}, {i}, {j}) outside {ch}x{h}x{w}")));
        }
        Ok(self.0.get(c, i, j))
    }

    fn upsample(&self, height: usize, width: usize, mode: &str) -> PyResult<Self> {
        tensor::upsample(&self.0, height, width, parse(mode)?).map(Self).map_err(err)
    }

    fn __repr__(&self) -> String {
        let (c, h, w) = self.0.dims();
        format!("FeatureMap({c}x{h}x{w})")
    }
}

fn pair(r: PairLoss) -> (f64, PyFeatureMap, PyFeatureMap) {
    (r.value, PyFeatureMap(r.grad_a), PyFeatureMap(r.grad_b))
}

/// `(value, grad_a, grad_b)` of the per-pixel squared error.
#[pyfunction]
fn loss_mse(a: &PyFeatureMap, b: &PyFeatureMap) -> PyResult<(f64, PyFeatureMap, PyFeatureMap)> {
    loss::loss_mse(&a.0, &b.0).map(pair).map_err(err)
}

/// `(value, grad_a, grad_b)` of the KL divergence between channel softmaxes.
#[pyfunction]
#[pyo3(signature = (a, b, direction = "forward"))]
fn loss_kl(a: &PyFeatureMap, b: &PyFeatureMap, direction: &str) -> PyResult<(f64, PyFeatureMap, PyFeatureMap)> {
    loss::loss_kl(&a.0, &b.0, parse::<KlDirection>(direction)?).map(pair).map_err(err)
}

/// `(value, grad_a, grad_b)` of one minus the per-pixel cosine similarity.
#[pyfunction]
fn loss_cos(a: &PyFeatureMap, b: &PyFeatureMap) -> PyResult<(f64, PyFeatureMap, PyFeatureMap)> {
    loss::loss_cos(&a.0, &b.0).map(pair).map_err(err)
}

/// Weighted multi-scale consistency loss with per-level gradients of the total.
#[pyfunction]
#[pyo3(signature = (p3, p4, p5, alpha = 1.0, beta = 1.0, gamma = 1.0, topology = "literal", upsample = "nearest", kl_direction = "forward"))]
#[allow(clippy::too_many_arguments)]
fn consistency_loss<'py>(
    py: Python<'py>,
    p3: &PyFeatureMap,
    p4: &PyFeatureMap,
    p5: &PyFeatureMap,
    alpha: f64,
    beta: f64,
    gamma: f64,
    topology: &str,
    upsample: &str,
    kl_direction: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let pyr = PyramidSet::new(p3.0.clone(), p4.0.clone(), p5.0.clone()).map_err(err)?;
    let opts = ConsistencyOptions {
        weights: LossWeights::new(alpha, beta, gamma).map_err(err)?,
        topology: PairingTopology::preset(topology).map_err(err)?,
        upsample: parse::<UpsampleMode>(upsample)?,
        kl_direction: parse(kl_direction)?,
    };
    let r = loss::consistency_loss(&pyr, &opts).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("l_mse", r.l_mse)?;
    d.set_item("l_kl", r.l_kl)?;
    d.set_item("l_cos", r.l_cos)?;
    d.set_item("l_total", r.l_total)?;
    for level in [Level::P3, Level::P4, Level::P5] {
        d.set_item(format!("grad_{}", level.name()), PyFeatureMap(r.grads.total.level(level).clone()))?;
    }
    Ok(d)
}

/// Central finite-difference check of one loss on a seeded random input.
#[pyfunction]
#[pyo3(signature = (op = "combined", dims = (3, 4, 4), seed = 0))]
fn gradcheck<'py>(py: Python<'py>, op: &str, dims: (usize, usize, usize), seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let r = core_gradcheck(&GradcheckConfig::new(parse::<GradcheckOp>(op)?, dims, seed)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("passed", r.passed)?;
    d.set_item("max_rel_error", r.max_rel_error)?;
    d.set_item("max_abs_error", r.max_abs_error)?;
    d.set_item("coordinates", r.coordinates)?;
    Ok(d)
}

type PyBox = (f64, f64, f64, f64);
type PyDet = (PyBox, u32, f64);
type PyGt = (PyBox, u32);

fn bbox(b: PyBox) -> PyResult<BBox> {
    BBox::new(b.0, b.1, b.2, b.3).map_err(err)
}

fn detections(dets: Vec<PyDet>) -> PyResult<Vec<Detection>> {
    dets.into_iter().map(|(b, c, conf)| Detection::new(bbox(b)?, c, conf).map_err(err)).collect()
}

fn ground_truth(gts: Vec<PyGt>) -> PyResult<Vec<Annotation>> {
    gts.into_iter().map(|(b, c)| Ok(Annotation::new(bbox(b)?, c))).collect()
}

/// IoU of two `(x_min, y_min, x_max, y_max)` boxes.
#[pyfunction]
fn iou(a: PyBox, b: PyBox) -> PyResult<f64> {
    Ok(mining::iou(&bbox(a)?, &bbox(b)?))
}

/// Greedy confidence-ordered matching. Detections are `(box, class, conf)`,
/// ground truth `(box, class)`; returns the matched GT index per detection.
#[pyfunction]
#[pyo3(signature = (dets, gts, iou_threshold = 0.5))]
fn match_detections(dets: Vec<PyDet>, gts: Vec<PyGt>, iou_threshold: f64) -> PyResult<Vec<Option<usize>>> {
    Ok(mining::match_detections(&detections(dets)?, &ground_truth(gts)?, iou_threshold).assignment)
}

/// Per-class precision, recall and AP plus mAP. `images` is a list of
/// `(dets, gts)` pairs in the formats of `match_detections`.
#[pyfunction]
#[pyo3(signature = (images, classes, iou_threshold = 0.5, conf_threshold = 0.25, ap_method = "continuous"))]
fn evaluate<'py>(
    py: Python<'py>,
    images: Vec<(Vec<PyDet>, Vec<PyGt>)>,
    classes: Vec<String>,
    iou_threshold: f64,
    conf_threshold: f64,
    ap_method: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let imgs = images
        .into_iter()
        .enumerate()
        .map(|(k, (d, g))| {
            Ok(ImageEval {
                name: k.to_string(),
                detections: detections(d)?,
                ground_truth: ground_truth(g)?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let opts = EvalOptions {
        iou_threshold,
        conf_threshold,
        ap_method: parse::<ApMethod>(ap_method)?,
    };
    let r = core_evaluate(&imgs, &ClassRegistry(classes), &opts);
    let out = PyDict::new(py);
    out.set_item("map", r.map)?;
    let per = PyDict::new(py);
    for c in &r.classes {
        let d = PyDict::new(py);
        d.set_item("ap", c.ap)?;
        d.set_item("ap_defined", c.ap_defined)?;
        d.set_item("precision", c.precision)?;
        d.set_item("recall", c.recall)?;
        d.set_item("num_gt", c.num_gt)?;
        d.set_item("num_detections", c.num_detections)?;
        per.set_item(&c.name, d)?;
    }
    out.set_item("classes", per)?;
    Ok(out)
}

/// Top-left offsets of the tiles covering a `width×height` image.
#[pyfunction]
#[pyo3(signature = (width, height, tile_size = 512, overlap = 0))]
fn tile_layout(width: u32, height: u32, tile_size: u32, overlap: u32) -> PyResult<Vec<(u32, u32)>> {
    let spec = tiling::TileSpec {
        tile_size,
        overlap,
        ..Default::default()
    };
    tiling::tile_layout(width, height, &spec).map_err(err)
}

/// Habitat labels of an RGB image file as `(width, height, labels)`, with
/// `labels` one byte per pixel (0 other, 128 dirt, 255 grass).
#[pyfunction]
#[pyo3(signature = (path, smoothing = 3))]
fn context_map(path: &str, smoothing: u32) -> PyResult<(u32, u32, Vec<u8>)> {
    let img = rarespot_core::io::load_rgb(path).map_err(err)?;
    let th = context::HsvThresholds {
        smoothing,
        ..Default::default()
    };
    let map = context::build_context_map(&img, &th);
    Ok((map.width(), map.height(), map.to_label_image().into_raw()))
}

#[pyfunction]
fn derive_seed(master: u64, index: u64) -> u64 {
    rarespot_core::rng::derive_seed(master, index)
}

#[pymodule]
fn rarespot(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", rarespot_core::VERSION)?;
    m.add_class::<PyFeatureMap>()?;
    m.add_function(wrap_pyfunction!(loss_mse, m)?)?;
    m.add_function(wrap_pyfunction!(loss_kl, m)?)?;
    m.add_function(wrap_pyfunction!(loss_cos, m)?)?;
    m.add_function(wrap_pyfunction!(consistency_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(match_detections, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(tile_layout, m)?)?;
    m.add_function(wrap_pyfunction!(context_map, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    Ok(())
}
