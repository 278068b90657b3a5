//! Python module `eiou`: boxes, metrics, losses, gradients, the optimizer
//! and guided NMS.

use pyo3::exceptions::{PyLookupError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use eiou_core::gradients::{self, Grad4};
use eiou_core::optimizer::{self, UpdateMode};
use eiou_core::{geometry, losses, nms as core_nms, scenario, Error, LossSpec, OptimConfig};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NotFound { .. } => PyLookupError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Axis-aligned box `(x1, y1, x2, y2)` with `x1 < x2` and `y1 < y2`.
#[pyclass(name = "BBox", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyBBox(geometry::BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> PyResult<Self> {
        geometry::BBox::new(x1, y1, x2, y2).map(PyBBox).map_err(py_err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        text.parse().map(PyBBox).map_err(py_err)
    }

    #[getter]
    fn x1(&self) -> f64 {
        self.0.x1()
    }
    #[getter]
    fn y1(&self) -> f64 {
        self.0.y1()
    }
    #[getter]
    fn x2(&self) -> f64 {
        self.0.x2()
    }
    #[getter]
    fn y2(&self) -> f64 {
        self.0.y2()
    }

    fn coords(&self) -> (f64, f64, f64, f64) {
        let c = self.0.coords();
        (c[0], c[1], c[2], c[3])
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    fn scaled(&self, s: f64) -> PyResult<Self> {
        self.0.scaled(s).map(PyBBox).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("BBox({})", self.0)
    }
}

fn grad_tuple(g: Grad4) -> (f64, f64, f64, f64) {
    let a = g.to_array();
    (a[0], a[1], a[2], a[3])
}

fn loss_spec(text: &str) -> PyResult<LossSpec> {
    text.parse().map_err(py_err)
}

#[pyfunction]
fn siou(target: PyBBox, pred: PyBBox) -> f64 {
    geometry::siou(&target.0, &pred.0)
}

#[pyfunction]
#[pyo3(name = "eiou")]
fn eiou_value(target: PyBBox, pred: PyBBox) -> f64 {
    geometry::eiou(&target.0, &pred.0)
}

#[pyfunction]
fn giou(target: PyBBox, pred: PyBBox) -> f64 {
    geometry::giou(&target.0, &pred.0)
}

/// One of `overlapping`, `touching`, `disjoint_x`, `disjoint_y`,
/// `disjoint_both`.
#[pyfunction]
fn classify_overlap(target: PyBBox, pred: PyBBox) -> &'static str {
    geometry::classify_overlap(&target.0, &pred.0).as_str()
}

#[pyfunction]
fn extended_geometry<'py>(py: Python<'py>, target: PyBBox, pred: PyBBox) -> PyResult<Bound<'py, PyDict>> {
    let g = geometry::extended_geometry(&target.0, &pred.0);
    let d = PyDict::new(py);
    for (k, v) in [
        ("x1", g.x1),
        ("y1", g.y1),
        ("x2", g.x2),
        ("y2", g.y2),
        ("x0", g.x0),
        ("y0", g.y0),
        ("x_min", g.x_min),
        ("y_min", g.y_min),
        ("x_max", g.x_max),
        ("y_max", g.y_max),
        ("i_std", g.i_std),
        ("i_e", g.i_e),
        ("s_t", g.s_t),
        ("s_p", g.s_p),
        ("u_std", g.u_std),
        ("u_e", g.u_e),
    ] {
        d.set_item(k, v)?;
    }
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (target, pred, power = 2.0))]
fn smooth_eiou_loss(target: PyBBox, pred: PyBBox, power: f64) -> PyResult<f64> {
    losses::smooth_eiou_loss(&target.0, &pred.0, power).map_err(py_err)
}

/// Smooth-l1 of the sqrt-area-normalized offsets, relative to `anchor`.
#[pyfunction]
fn smooth_l1_box_loss(target: PyBBox, pred: PyBBox, anchor: PyBBox) -> f64 {
    losses::smooth_l1_box_loss(&target.0, &pred.0, &anchor.0)
}

#[pyfunction]
fn convexify(base_value: f64, base_min: f64, p: f64) -> PyResult<f64> {
    losses::convexify(base_value, base_min, p).map_err(py_err)
}

#[pyfunction]
fn focal_weight(target: PyBBox, pred: PyBBox) -> f64 {
    losses::focal_weight(&target.0, &pred.0)
}

#[pyfunction]
fn kl_iou_loss(q_g: f64, x: f64) -> PyResult<f64> {
    Ok(losses::kl_iou_loss(&losses::IoUScorePair::new(q_g, x).map_err(py_err)?))
}

#[pyfunction]
fn grad_smooth_eiou(target: PyBBox, pred: PyBBox) -> (f64, f64, f64, f64) {
    grad_tuple(gradients::grad_smooth_eiou(&target.0, &pred.0))
}

/// Gradient of a loss given as text, e.g. `neg-eiou:p=2` or `neg-eiou:raw`.
#[pyfunction]
#[pyo3(signature = (target, pred, loss = "neg-eiou:p=2"))]
fn grad_loss(target: PyBBox, pred: PyBBox, loss: &str) -> PyResult<(f64, f64, f64, f64)> {
    gradients::grad_loss(&target.0, &pred.0, &loss_spec(loss)?)
        .map(grad_tuple)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (n_samples = 10_000, seed = 0, tol = 1e-5))]
fn gradcheck<'py>(py: Python<'py>, n_samples: usize, seed: u64, tol: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = gradients::gradcheck_report(n_samples, seed, tol).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("samples", r.samples)?;
    d.set_item("rejected_near_boundary", r.rejected_near_boundary)?;
    d.set_item("max_rel_err", r.max_rel_err)?;
    d.set_item("mean_rel_err", r.mean_rel_err)?;
    d.set_item("tol", r.tol)?;
    d.set_item("pass", r.pass)?;
    Ok(d)
}

fn parse_mode(mode: &str) -> PyResult<UpdateMode> {
    match mode {
        "sot" => Ok(UpdateMode::Sot),
        "plain" => Ok(UpdateMode::Plain),
        other => Err(PyValueError::new_err(format!("unknown mode {other:?}, expected sot or plain"))),
    }
}

#[pyfunction]
#[pyo3(signature = (target, pred, alpha, loss = "neg-eiou:p=2"))]
fn step_plain(target: PyBBox, pred: PyBBox, alpha: f64, loss: &str) -> PyResult<PyBBox> {
    optimizer::step_plain(&target.0, &pred.0, alpha, &loss_spec(loss)?)
        .map(PyBBox)
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (target, pred, alpha, loss = "neg-eiou:p=2"))]
fn step_sot(target: PyBBox, pred: PyBBox, alpha: f64, loss: &str) -> PyResult<PyBBox> {
    optimizer::step_sot(&target.0, &pred.0, alpha, &loss_spec(loss)?)
        .map(PyBBox)
        .map_err(py_err)
}

/// Optimization trace. `error` is set when the run halted on an invalid
/// update; the records up to that point are kept.
#[pyclass(name = "Trace", frozen)]
struct PyTrace {
    trace: optimizer::Trace,
    #[pyo3(get)]
    error: Option<String>,
}

#[pymethods]
impl PyTrace {
    fn __len__(&self) -> usize {
        self.trace.len()
    }

    #[getter]
    fn losses(&self) -> Vec<f64> {
        self.trace.losses()
    }

    #[getter]
    fn eious(&self) -> Vec<f64> {
        self.trace.eious()
    }

    #[getter]
    fn preds(&self) -> Vec<PyBBox> {
        self.trace.records.iter().map(|r| PyBBox(r.pred)).collect()
    }

    fn first_iter_above(&self, threshold: f64) -> Option<usize> {
        self.trace.first_iter_above(threshold)
    }

    fn tail_loss_range(&self, window: usize) -> f64 {
        self.trace.tail_loss_range(window)
    }

    /// The trace as CSV text.
    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.trace.write_csv(&mut buf).map_err(py_err)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }
}

fn wrap_run(r: Result<optimizer::Trace, optimizer::RunFailure>) -> PyTrace {
    match r {
        Ok(trace) => PyTrace { trace, error: None },
        Err(f) => PyTrace {
            trace: f.trace,
            error: Some(f.error.to_string()),
        },
    }
}

#[pyfunction]
#[pyo3(signature = (target, init, alpha = 0.1, max_iters = 5000, loss_tol = 1e-6, mode = "sot", loss = "neg-eiou:p=2"))]
fn run(
    target: PyBBox,
    init: PyBBox,
    alpha: f64,
    max_iters: usize,
    loss_tol: f64,
    mode: &str,
    loss: &str,
) -> PyResult<PyTrace> {
    let cfg = OptimConfig {
        alpha,
        max_iters,
        loss_tol,
        mode: parse_mode(mode)?,
        loss: loss_spec(loss)?,
    };
    cfg.validate().map_err(py_err)?;
    Ok(wrap_run(optimizer::run(&target.0, &init.0, &cfg)))
}

#[pyfunction]
fn scenario_names() -> Vec<String> {
    scenario::bundled().into_iter().map(|s| s.name).collect()
}

/// Runs a bundled scenario; returns `(passed, checks, trace)` where checks
/// are `(name, passed, detail)` tuples.
#[pyfunction]
fn run_scenario(name: &str) -> PyResult<(bool, Vec<(String, bool, String)>, PyTrace)> {
    let all = scenario::bundled();
    let s = scenario::find(&all, name)
        .ok_or_else(|| PyLookupError::new_err(format!("no scenario named {name:?}")))?;
    let o = s.run().map_err(py_err)?;
    let pass = o.pass();
    let checks = o.checks.into_iter().map(|c| (c.name, c.pass, c.detail)).collect();
    Ok((
        pass,
        checks,
        PyTrace {
            trace: o.trace,
            error: o.error.map(|e| e.to_string()),
        },
    ))
}

#[pyfunction]
#[pyo3(signature = (trials = 1000, seed = 0, alpha = 1e-3))]
fn theorem1_check<'py>(py: Python<'py>, trials: usize, seed: u64, alpha: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = optimizer::theorem1_check(trials, seed, alpha).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("trials", r.trials)?;
    d.set_item("alpha", r.alpha)?;
    d.set_item("violations", r.violations)?;
    d.set_item("violations_within_piece", r.violations_within_piece)?;
    d.set_item("trials_with_violations", r.trials_with_violations)?;
    d.set_item("failed_runs", r.failed_runs)?;
    Ok(d)
}

#[pyclass(name = "Detection", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyDetection(core_nms::Detection);

#[pymethods]
impl PyDetection {
    #[new]
    #[pyo3(signature = (bbox, cls_score, iou_score, gt_id = None))]
    fn new(bbox: PyBBox, cls_score: f64, iou_score: f64, gt_id: Option<usize>) -> PyResult<Self> {
        let d = core_nms::Detection::new(bbox.0, cls_score, iou_score).map_err(py_err)?;
        Ok(PyDetection(match gt_id {
            Some(g) => d.with_gt(g),
            None => d,
        }))
    }

    #[getter]
    fn bbox(&self) -> PyBBox {
        PyBBox(self.0.bbox)
    }
    #[getter]
    fn cls_score(&self) -> f64 {
        self.0.cls_score
    }
    #[getter]
    fn iou_score(&self) -> f64 {
        self.0.iou_score
    }
    #[getter]
    fn gt_id(&self) -> Option<usize> {
        self.0.gt_id
    }

    fn __repr__(&self) -> String {
        format!(
            "Detection(BBox({}), cls_score={}, iou_score={})",
            self.0.bbox, self.0.cls_score, self.0.iou_score
        )
    }
}

/// Greedy NMS ranked by `source`: `"iou"` (predicted IoU) or `"cls"`.
#[pyfunction]
#[pyo3(signature = (dets, iou_thresh = 0.5, source = "iou"))]
fn nms(dets: Vec<PyDetection>, iou_thresh: f64, source: &str) -> PyResult<Vec<PyDetection>> {
    let src = match source {
        "iou" => core_nms::ScoreSource::PredictedIoU,
        "cls" => core_nms::ScoreSource::Classification,
        other => return Err(PyValueError::new_err(format!("unknown score source {other:?}"))),
    };
    let inner: Vec<_> = dets.into_iter().map(|d| d.0).collect();
    Ok(core_nms::nms(&inner, iou_thresh, src)
        .map_err(py_err)?
        .into_iter()
        .map(PyDetection)
        .collect())
}

#[pymodule]
fn eiou(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBBox>()?;
    m.add_class::<PyTrace>()?;
    m.add_class::<PyDetection>()?;
    m.add_function(wrap_pyfunction!(siou, m)?)?;
    m.add_function(wrap_pyfunction!(eiou_value, m)?)?;
    m.add_function(wrap_pyfunction!(giou, m)?)?;
    m.add_function(wrap_pyfunction!(classify_overlap, m)?)?;
    m.add_function(wrap_pyfunction!(extended_geometry, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_eiou_loss, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_l1_box_loss, m)?)?;
    m.add_function(wrap_pyfunction!(convexify, m)?)?;
    m.add_function(wrap_pyfunction!(focal_weight, m)?)?;
    m.add_function(wrap_pyfunction!(kl_iou_loss, m)?)?;
    m.add_function(wrap_pyfunction!(grad_smooth_eiou, m)?)?;
    m.add_function(wrap_pyfunction!(grad_loss, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(step_plain, m)?)?;
    m.add_function(wrap_pyfunction!(step_sot, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1_check, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    Ok(())
}
