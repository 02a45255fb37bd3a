use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use scanscribe::alias::{self, Verdicts};
use scanscribe::data::{generate_phantom, Dataset, PhantomSpec};
use scanscribe::fov;
use scanscribe::masking::{self, ThresholdMode, ThresholdPolicy};
use scanscribe::models::{self, Model};
use scanscribe::stats::{self, CiMethod, TTestVariant};
use scanscribe::{geometry, BBox, LocalizerStack, PhaseAxis};

create_exception!(scanscribe_py, ScanscribeError, PyException);

fn err(e: scanscribe::Error) -> PyErr {
    ScanscribeError::new_err(format!("{}: {e}", e.code()))
}

fn axis(s: &str) -> PyResult<PhaseAxis> {
    s.parse().map_err(err)
}

/// Axis-aligned box in continuous pixel coordinates.
#[pyclass(name = "BBox", module = "scanscribe_py", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyBBox {
    inner: BBox,
}

#[pymethods]
impl PyBBox {
    #[new]
    fn new(top: f64, bottom: f64, left: f64, right: f64) -> PyResult<Self> {
        Ok(Self {
            inner: BBox::new(top, bottom, left, right).map_err(err)?,
        })
    }

    #[getter]
    fn top(&self) -> f64 {
        self.inner.top
    }

    #[getter]
    fn bottom(&self) -> f64 {
        self.inner.bottom
    }

    #[getter]
    fn left(&self) -> f64 {
        self.inner.left
    }

    #[getter]
    fn right(&self) -> f64 {
        self.inner.right
    }

    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64) {
        (self.inner.top, self.inner.bottom, self.inner.left, self.inner.right)
    }

    fn __repr__(&self) -> String {
        format!("BBox({})", self.inner)
    }

    fn __eq__(&self, other: PyRef<'_, PyBBox>) -> bool {
        self.inner == other.inner
    }
}

impl From<BBox> for PyBBox {
    fn from(inner: BBox) -> Self {
        Self { inner }
    }
}

#[pyfunction]
fn iou(a: PyRef<'_, PyBBox>, b: PyRef<'_, PyBBox>) -> f64 {
    geometry::iou(&a.inner, &b.inner)
}

#[pyfunction]
fn boundary_error(a: PyRef<'_, PyBBox>, b: PyRef<'_, PyBBox>) -> f64 {
    geometry::boundary_error(&a.inner, &b.inner)
}

/// Object mask of one row-major slice.
#[pyfunction]
#[pyo3(signature = (slice, height, width, threshold = 0.05, mode = "relative"))]
fn extract_object_mask(slice: Vec<f32>, height: usize, width: usize, threshold: f64, mode: &str) -> PyResult<PyBBox> {
    let mode: ThresholdMode = mode.parse().map_err(err)?;
    let policy = ThresholdPolicy::new(mode, threshold).map_err(err)?;
    if slice.len() != height * width {
        return Err(ScanscribeError::new_err("slice length does not match height * width"));
    }
    masking::extract_object_mask(&slice, height, width, &policy)
        .map(Into::into)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (mask, roi, phase_axis = "rows"))]
fn prescribe_slice(mask: PyRef<'_, PyBBox>, roi: PyRef<'_, PyBBox>, phase_axis: &str) -> PyResult<PyBBox> {
    fov::prescribe_slice(&mask.inner, &roi.inner, axis(phase_axis)?)
        .map(Into::into)
        .map_err(err)
}

/// `(lo, hi)` of the alias-free interval for an object interval and FOV width.
#[pyfunction]
fn alias_free_interval(object_lo: f64, object_hi: f64, width: f64) -> PyResult<(f64, f64)> {
    let obj = geometry::Interval::new(object_lo, object_hi).map_err(err)?;
    let iv = fov::alias_free_interval(obj, width);
    Ok((iv.lo, iv.hi))
}

#[pyfunction]
fn wrap_sum(signal: Vec<f64>, fov_lo: i64, width: i64) -> PyResult<Vec<f64>> {
    Ok(alias::wrap_sum(&signal, fov_lo, width).map_err(err)?.folded)
}

/// `(contains_roi, roi_alias_free, is_minimal)`.
#[pyfunction]
#[pyo3(signature = (object, roi, fov, phase_axis = "rows"))]
fn verify_prescription(
    object: PyRef<'_, PyBBox>,
    roi: PyRef<'_, PyBBox>,
    fov: PyRef<'_, PyBBox>,
    phase_axis: &str,
) -> PyResult<(bool, bool, bool)> {
    let Verdicts {
        contains_roi,
        roi_alias_free,
        is_minimal,
    } = alias::verify_prescription(&object.inner, &roi.inner, &fov.inner, axis(phase_axis)?).map_err(err)?;
    Ok((contains_roi, roi_alias_free, is_minimal))
}

/// `(t, df, p)` of a two-sample two-tailed t-test.
#[pyfunction]
#[pyo3(signature = (a, b, welch = false))]
fn t_test(a: Vec<f64>, b: Vec<f64>, welch: bool) -> PyResult<(f64, f64, f64)> {
    let variant = if welch { TTestVariant::Welch } else { TTestVariant::Pooled };
    let r = stats::t_test(&a, &b, variant).map_err(err)?;
    Ok((r.t, r.df, r.p))
}

#[pyfunction]
#[pyo3(signature = (k, n, level, method = "wilson"))]
fn proportion_ci(k: u64, n: u64, level: f64, method: &str) -> PyResult<(f64, f64)> {
    let method = match method {
        "wilson" => CiMethod::Wilson,
        "normal" => CiMethod::Normal,
        other => return Err(ScanscribeError::new_err(format!("unknown method {other}"))),
    };
    let iv = stats::proportion_ci(k, n, level, method).map_err(err)?;
    Ok((iv.lo, iv.hi))
}

/// A localizer stack of equally sized slices.
#[pyclass(name = "Stack", module = "scanscribe_py", frozen)]
struct PyStack {
    inner: LocalizerStack,
}

#[pymethods]
impl PyStack {
    #[new]
    #[pyo3(signature = (height, width, slices, phase_axis = "rows"))]
    fn new(height: usize, width: usize, slices: Vec<Vec<f32>>, phase_axis: &str) -> PyResult<Self> {
        Ok(Self {
            inner: LocalizerStack::new(height, width, axis(phase_axis)?, slices).map_err(err)?,
        })
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn phase_axis(&self) -> String {
        self.inner.phase_axis().to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn slice(&self, k: usize) -> PyResult<Vec<f32>> {
        self.inner
            .slices()
            .get(k)
            .cloned()
            .ok_or_else(|| ScanscribeError::new_err(format!("slice {k} out of range")))
    }

    /// Prescribes the stack FOV for an ROI: `(fov, all per-slice verdicts pass)`.
    #[pyo3(signature = (roi, threshold = 0.05))]
    fn prescribe(&self, roi: PyRef<'_, PyBBox>, threshold: f64) -> PyResult<(PyBBox, bool)> {
        let policy = ThresholdPolicy::new(ThresholdMode::Relative, threshold).map_err(err)?;
        let r = fov::prescribe_stack(&self.inner, &roi.inner, &policy).map_err(err)?;
        Ok((r.fov.into(), r.all_verdicts_pass()))
    }
}

/// Generates one phantom: `(stack, label)`.
#[pyfunction]
#[pyo3(signature = (index, size = 64, max_slices = 8, seed = 0))]
fn phantom(index: u64, size: usize, max_slices: usize, seed: u64) -> PyResult<(PyStack, PyBBox)> {
    let p = generate_phantom(&PhantomSpec::new(size, max_slices, seed), index).map_err(err)?;
    Ok((PyStack { inner: p.stack }, p.label.into()))
}

/// Loads a dataset directory: list of `(id, split, stack, label)`.
#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<Vec<(String, String, PyStack, PyBBox)>> {
    let ds = Dataset::load(&path).map_err(err)?;
    Ok(ds
        .records
        .into_iter()
        .map(|r| (r.id, r.split.to_string(), PyStack { inner: r.stack }, r.label.into()))
        .collect())
}

/// A trained boundary-pair model loaded from a weights file.
#[pyclass(name = "Model", module = "scanscribe_py", frozen)]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Model::load(&path).map_err(err)?,
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind().to_string()
    }

    #[getter]
    fn axis(&self) -> String {
        self.inner.axis().to_string()
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Raw normalized boundary pair.
    fn predict(&self, stack: PyRef<'_, PyStack>) -> PyResult<(f64, f64)> {
        let p = self.inner.predict_normalized(&[&stack.inner]).map_err(err)?[0];
        Ok((p[0], p[1]))
    }

    /// Slice weights of an attention model, `None` for the baselines.
    fn attention(&self, stack: PyRef<'_, PyStack>) -> PyResult<Option<Vec<f64>>> {
        self.inner.attention_weights(&stack.inner).map_err(err)
    }
}

#[pyfunction]
fn predict_roi(stack: PyRef<'_, PyStack>, lr: PyRef<'_, PyModel>, tb: PyRef<'_, PyModel>) -> PyResult<PyBBox> {
    Ok(models::predict_roi(&stack.inner, &lr.inner, &tb.inner).map_err(err)?.roi.into())
}

#[pymodule]
pub fn scanscribe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ScanscribeError", m.py().get_type::<ScanscribeError>())?;
    m.add_class::<PyBBox>()?;
    m.add_class::<PyStack>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_error, m)?)?;
    m.add_function(wrap_pyfunction!(extract_object_mask, m)?)?;
    m.add_function(wrap_pyfunction!(prescribe_slice, m)?)?;
    m.add_function(wrap_pyfunction!(alias_free_interval, m)?)?;
    m.add_function(wrap_pyfunction!(wrap_sum, m)?)?;
    m.add_function(wrap_pyfunction!(verify_prescription, m)?)?;
    m.add_function(wrap_pyfunction!(t_test, m)?)?;
    m.add_function(wrap_pyfunction!(proportion_ci, m)?)?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(predict_roi, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
