//! Python bindings: expressions, scoring, scenarios and instances.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use visa_core::expr::{self, free_constants, with_constants, Expr, Variable};
use visa_core::instance::{self, Split};
use visa_core::metrics::{self, ScoreReport, Truth, Validity};
use visa_core::numeric::{self, EvalPoint};
use visa_core::refine::{refine as refine_constants, RefineConfig};
use visa_core::scenario;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A parsed expression in x and y.
#[pyclass(name = "Expression", module = "visa", frozen)]
struct PyExpression {
    inner: Expr,
}

#[pymethods]
impl PyExpression {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        expr::parse(text).map(|inner| PyExpression { inner }).map_err(value_error)
    }

    fn __str__(&self) -> String {
        expr::print(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Expression('{}')", expr::print(&self.inner))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn simplify(&self) -> Self {
        PyExpression { inner: expr::simplify(&self.inner) }
    }

    /// Constants replaced by the placeholder `C`.
    fn canonical(&self) -> Self {
        PyExpression { inner: expr::canonicalize(&self.inner) }
    }

    fn diff(&self, var: &str) -> PyResult<Self> {
        let v = match var {
            "x" => Variable::X,
            "y" => Variable::Y,
            _ => return Err(PyValueError::new_err(format!("unknown variable {var:?}"))),
        };
        Ok(PyExpression { inner: expr::differentiate(&self.inner, v) })
    }

    fn constants(&self) -> Vec<f64> {
        free_constants(&self.inner).iter().map(|s| s.value).collect()
    }

    fn with_constants(&self, values: Vec<f64>) -> PyResult<Self> {
        let n = free_constants(&self.inner).len();
        if values.len() != n {
            return Err(PyValueError::new_err(format!("expected {n} constants, got {}", values.len())));
        }
        Ok(PyExpression { inner: with_constants(&self.inner, &values) })
    }

    fn evaluate(&self, x: f64, y: f64) -> PyResult<f64> {
        numeric::eval(&self.inner, EvalPoint::new(x, y)).map_err(value_error)
    }

    fn node_count(&self) -> usize {
        self.inner.node_count()
    }
}

#[pyclass(name = "Score", module = "visa", frozen, get_all)]
struct PyScore {
    validity: String,
    s_c: f64,
    s_s: f64,
    s_n: f64,
    overall: f64,
    rel_err: Option<f64>,
}

#[pymethods]
impl PyScore {
    fn __repr__(&self) -> String {
        format!(
            "Score(validity={}, s_c={:.6}, s_s={:.6}, s_n={:.6}, overall={:.6})",
            self.validity, self.s_c, self.s_s, self.s_n, self.overall
        )
    }
}

fn validity_name(v: Validity) -> &'static str {
    match v {
        Validity::Valid => "valid",
        Validity::NoSolutionTag => "no-solution-tag",
        Validity::ParseFailure => "parse-failure",
        Validity::EvalFailure => "eval-failure",
    }
}

impl From<ScoreReport> for PyScore {
    fn from(r: ScoreReport) -> PyScore {
        PyScore {
            validity: validity_name(r.validity).to_string(),
            s_c: r.s_c,
            s_s: r.s_s,
            s_n: r.s_n,
            overall: r.overall,
            rel_err: r.rel_err,
        }
    }
}

#[pyclass(name = "Scenario", module = "visa", frozen, get_all)]
struct PyScenario {
    slug: String,
    name: String,
    category: String,
    operator: String,
    template: String,
    parameters: Vec<String>,
}

#[pymethods]
impl PyScenario {
    fn __repr__(&self) -> String {
        format!("Scenario('{}')", self.slug)
    }
}

/// One sampled problem: ground truth and its 20 x 20 field.
#[pyclass(name = "Instance", module = "visa", frozen)]
struct PyInstance {
    inner: instance::Instance,
    truth: Expr,
}

#[pymethods]
impl PyInstance {
    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn scenario(&self) -> &str {
        &self.inner.scenario
    }

    #[getter]
    fn solution(&self) -> &str {
        &self.inner.solution
    }

    #[getter]
    fn split(&self) -> &'static str {
        self.inner.split.as_str()
    }

    #[getter]
    fn parameters(&self) -> Vec<f64> {
        self.inner.params.values.clone()
    }

    #[getter]
    fn domain(&self) -> (f64, f64, f64, f64) {
        let d = &self.inner.domain;
        (d.x_min, d.x_max, d.y_min, d.y_max)
    }

    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.x).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.y).collect()
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.u.clone()
    }

    #[getter]
    fn du_dx(&self) -> Vec<f64> {
        self.inner.du_dx.clone()
    }

    #[getter]
    fn du_dy(&self) -> Vec<f64> {
        self.inner.du_dy.clone()
    }

    /// Scores a raw model reply against this instance.
    fn score(&self, raw: &str) -> PyScore {
        let truth = Truth {
            printed: &self.inner.solution,
            expr: &self.truth,
            points: &self.inner.points,
            values: &self.inner.u,
        };
        metrics::score_prediction(&metrics::read_prediction(raw), &truth).into()
    }

    /// Fits the constants of `e` to this field. Returns the refined
    /// expression with the mean squared error before and after.
    #[pyo3(signature = (e, seed = 0))]
    fn refine(&self, py: Python<'_>, e: &PyExpression, seed: u64) -> (PyExpression, f64, f64) {
        let cfg = RefineConfig { seed, ..RefineConfig::default() };
        let r = py.detach(|| refine_constants(&e.inner, &self.inner.points, &self.inner.u, &cfg));
        (PyExpression { inner: r.expr }, r.initial_mse, r.mse)
    }

    fn __repr__(&self) -> String {
        format!("Instance('{}', '{}')", self.inner.id, self.inner.solution)
    }
}

#[pyfunction]
fn parse(text: &str) -> PyResult<PyExpression> {
    PyExpression::new(text)
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    metrics::levenshtein(a, b)
}

#[pyfunction]
fn char_score(predicted: &str, truth: &str) -> f64 {
    metrics::char_score(predicted, truth)
}

#[pyfunction]
fn struct_score(predicted: &PyExpression, truth: &PyExpression) -> f64 {
    metrics::struct_score(&predicted.inner, &truth.inner)
}

#[pyfunction]
fn overall_score(s_c: f64, s_s: f64, s_n: f64) -> f64 {
    metrics::overall_score(s_c, s_s, s_n)
}

#[pyfunction]
fn extract_solution(raw: &str) -> Option<String> {
    metrics::extract_solution(raw)
}

#[pyfunction]
fn scenarios() -> Vec<PyScenario> {
    scenario::list_scenarios()
        .iter()
        .map(|s| PyScenario {
            slug: s.slug.clone(),
            name: s.name.clone(),
            category: s.category.to_string(),
            operator: s.operator.clone(),
            template: s.template.clone(),
            parameters: s.params.iter().map(|p| p.name.clone()).collect(),
        })
        .collect()
}

#[pyfunction]
#[pyo3(signature = (slug, seed, split = "eval"))]
fn generate_instance(py: Python<'_>, slug: &str, seed: u64, split: &str) -> PyResult<PyInstance> {
    let s = scenario::scenario_by_slug(slug).map_err(value_error)?;
    let split: Split = split.parse().map_err(value_error)?;
    let inner = py
        .detach(|| instance::generate_instance(s, seed, format!("{slug}-{seed}"), split))
        .map_err(value_error)?;
    let truth = inner.solution_expr().map_err(value_error)?;
    Ok(PyInstance { inner, truth })
}

#[pymodule]
fn visa(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExpression>()?;
    m.add_class::<PyScore>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyInstance>()?;
    m.add_function(wrap_pyfunction!(parse, m)?)?;
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(char_score, m)?)?;
    m.add_function(wrap_pyfunction!(struct_score, m)?)?;
    m.add_function(wrap_pyfunction!(overall_score, m)?)?;
    m.add_function(wrap_pyfunction!(extract_solution, m)?)?;
    m.add_function(wrap_pyfunction!(scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(generate_instance, m)?)?;
    Ok(())
}
