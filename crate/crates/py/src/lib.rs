//! Python bindings. The module imports as `quiver_wp`.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use quiver_wp::defcomplex::ComplexContext;
use quiver_wp::family::Family as CoreFamily;
use quiver_wp::fiber::{crosscheck_gap, to_rows};
use quiver_wp::linalg::Mat;
use quiver_wp::quiver::check_feasibility;
use quiver_wp::scenario::{parse_backend_override, presets, Scenario as CoreScenario, Target};
use quiver_wp::vortex::{flow_to_vortex, FlowOptions, MetricAssignment};
use quiver_wp::wpgeom::{curvature_fd, curvature_tf, lemma_suite, normal_coordinates, rel_gap, wp_derivative, wp_metric, Tensor};
use quiver_wp::Error;
use serde::Serialize;
use serde_json::Value;

fn err(e: Error) -> PyErr {
    match e {
        Error::Solver(_) | Error::Obstructed(_) | Error::Singular(_) | Error::NotPositiveDefinite(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_f64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(f)) => f.into_pyobject(py)?.into_any(),
            _ => n.to_string().into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| json_to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn rows(m: &Mat) -> Vec<Vec<Complex64>> {
    to_rows(m)
}

/// A tensor as `(shape, flat row-major data)`.
fn tensor(t: &Tensor) -> (Vec<usize>, Vec<Complex64>) {
    (t.shape.clone(), t.data.clone())
}

fn flow_options(scn: &CoreScenario) -> FlowOptions {
    let mut f = FlowOptions::default();
    if let Some(t) = scn.solver.tol {
        f.tol = t;
    }
    if let Some(m) = scn.solver.max_iters {
        f.max_iters = m;
    }
    if let Some(st) = scn.solver.step {
        f.step = st;
    }
    f
}

#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct Scenario {
    inner: CoreScenario,
}

#[pymethods]
impl Scenario {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        CoreScenario::from_json(text).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        presets::shipped()
            .into_iter()
            .find(|(file, s)| s.name == name || file.trim_end_matches(".scn") == name)
            .map(|(_, inner)| Self { inner })
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset `{name}`")))
    }

    fn to_json(&self) -> String {
        self.inner.to_canonical()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims()
    }

    /// `"point"` or `"torus:N[:area]"`.
    fn with_backend(&self, spec: &str) -> PyResult<Self> {
        let b = parse_backend_override(spec, &self.inner.backend).map_err(err)?;
        self.inner.with_backend(b).map(|inner| Self { inner }).map_err(err)
    }

    fn feasibility<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let q = self.inner.quiver().map_err(err)?;
        let built = self.inner.build().map_err(err)?;
        to_py(py, &check_feasibility(&q, &built.dims, &built.params))
    }

    /// Runs the vortex flow on a single representation. Returns the flow
    /// report as a dict and the metrics as nested lists.
    fn solve_vortex<'py>(&self, py: Python<'py>) -> PyResult<(Bound<'py, PyAny>, Vec<Vec<Vec<Complex64>>>)> {
        let built = self.inner.build().map_err(err)?;
        let Target::Representation(rep) = &built.target else {
            return Err(PyValueError::new_err("solve_vortex needs a representation scenario; use family() instead"));
        };
        let h0 = MetricAssignment::identity(rep);
        let (h, report) = flow_to_vortex(&built.quiver, rep, &built.relations, &built.params, &flow_options(&self.inner), &h0).map_err(err)?;
        Ok((to_py(py, &report)?, h.metrics.iter().map(rows).collect()))
    }

    /// Hyperdims of the deformation complex at the vortex metric.
    fn hyperdims<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let built = self.inner.build().map_err(err)?;
        match &built.target {
            Target::Representation(rep) => {
                let h0 = MetricAssignment::identity(rep);
                let (h, report) = flow_to_vortex(&built.quiver, rep, &built.relations, &built.params, &flow_options(&self.inner), &h0).map_err(err)?;
                if report.verdict != quiver_wp::vortex::Verdict::Converged {
                    return Err(PyRuntimeError::new_err(format!("vortex flow ended with verdict {:?}", report.verdict)));
                }
                let ctx = ComplexContext::point(&built.quiver, &built.relations, &built.dims, &rep.maps, &h.metrics).map_err(err)?;
                to_py(py, &ctx.hyperdims().map_err(err)?)
            }
            Target::Family(f) => {
                let ctx = f.context(&f.s0).map_err(err)?;
                to_py(py, &ctx.hyperdims().map_err(err)?)
            }
        }
    }

    fn family(&self) -> PyResult<Family> {
        match self.inner.build().map_err(err)?.target {
            Target::Family(f) => Ok(Family { inner: *f }),
            Target::Representation(_) => Err(PyValueError::new_err("scenario holds a single representation, not a family")),
        }
    }

    fn __repr__(&self) -> String {
        format!("Scenario({:?})", self.inner.name)
    }
}

/// A holomorphic family of vortex solutions. Holds solver caches, so it
/// stays on the thread that created it.
#[pyclass(name = "Family", unsendable)]
struct Family {
    inner: CoreFamily,
}

#[pymethods]
impl Family {
    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn base_point(&self) -> Vec<Complex64> {
        self.inner.s0.clone()
    }

    #[setter]
    fn set_base_point(&mut self, s: Vec<Complex64>) -> PyResult<()> {
        if s.len() != self.inner.k() {
            return Err(PyValueError::new_err(format!("expected {} coordinates", self.inner.k())));
        }
        self.inner.s0 = s;
        Ok(())
    }

    /// `G_{ij̄}` at `s` (default: the base point).
    #[pyo3(signature = (s = None))]
    fn wp_metric(&self, s: Option<Vec<Complex64>>) -> PyResult<Vec<Vec<Complex64>>> {
        let s = s.unwrap_or_else(|| self.inner.s0.clone());
        wp_metric(&self.inner, &s).map(|g| rows(&g)).map_err(err)
    }

    /// `∂_k G_{ij̄}` by the connection formula and by finite differences.
    fn wp_derivative<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = wp_derivative(&self.inner, &self.inner.s0).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("formula", tensor(&d.formula))?;
        out.set_item("fd", tensor(&d.fd))?;
        out.set_item("rel_gap", d.rel_gap)?;
        Ok(out)
    }

    /// Curvature at the base point in normal coordinates, by the Green's
    /// operator formula and by finite differences.
    fn curvature<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (nf, _) = normal_coordinates(&self.inner).map_err(err)?;
        let tf = curvature_tf(&nf).map_err(err)?;
        let fd = curvature_fd(&nf).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("tf", tensor(&tf.total))?;
        out.set_item("fd", tensor(&fd.total))?;
        out.set_item("gap", rel_gap(&tf.total, &fd.total))?;
        out.set_item("vee_min_eig", tf.vee_min_eig)?;
        Ok(out)
    }

    /// Fibre-integral metric and its gap to the Gram matrix.
    fn fiber_crosscheck<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let (gap, fw, g) = crosscheck_gap(&self.inner).map_err(err)?;
        let out = PyDict::new(py);
        out.set_item("gap", gap)?;
        out.set_item("gram", rows(&g))?;
        out.set_item("total", fw.total.clone())?;
        out.set_item("chern_character", fw.chern_character.clone())?;
        out.set_item("chern_character_gap", fw.chern_character_gap)?;
        out.set_item("potential_gap", fw.potential_gap)?;
        Ok(out)
    }

    #[pyo3(signature = (seed = 0))]
    fn lemma_suite<'py>(&self, py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &lemma_suite(&self.inner, seed).map_err(err)?)
    }

    fn hyperdims<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let ctx = self.inner.context(&self.inner.s0).map_err(err)?;
        to_py(py, &ctx.hyperdims().map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Family(k={})", self.inner.k())
    }
}

/// Names of the shipped preset scenarios.
#[pyfunction]
fn preset_names() -> Vec<String> {
    presets::shipped().into_iter().map(|(_, s)| s.name).collect()
}

#[pymodule]
#[pyo3(name = "quiver_wp")]
fn quiver_wp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Family>()?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    Ok(())
}
